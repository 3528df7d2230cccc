//! Pinhole and orthographic cameras.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Points closer than this along the view axis are not projected.
pub const NEAR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    Perspective { fov_y_deg: f64 },
    Orthographic { half_height: f64 },
}

/// A projected point: pixel coordinates (x right, y down, pixel centers at
/// half-integers) and view-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenPoint {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    pub projection: Projection,
    pub width: usize,
    pub height: usize,
    right: Vec3,
    true_up: Vec3,
    forward: Vec3,
}

impl CameraView {
    pub fn new(
        position: Vec3,
        target: Vec3,
        up: Vec3,
        projection: Projection,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(
                "camera resolution must be positive".into(),
            ));
        }
        let f = target - position;
        if f.norm() < 1e-12 {
            return Err(Error::InvalidArgument(
                "camera position equals target".into(),
            ));
        }
        let forward = f.normalize();
        let r = forward.cross(&up);
        if r.norm() < 1e-9 {
            return Err(Error::InvalidArgument(
                "camera up vector is parallel to view direction".into(),
            ));
        }
        match projection {
            Projection::Perspective { fov_y_deg } if !(fov_y_deg > 0.0 && fov_y_deg < 180.0) => {
                return Err(Error::InvalidArgument(
                    "field of view must be in (0, 180)".into(),
                ));
            }
            Projection::Orthographic { half_height } if !(half_height > 0.0) => {
                return Err(Error::InvalidArgument(
                    "orthographic scale must be positive".into(),
                ));
            }
            _ => {}
        }
        let right = r.normalize();
        let true_up = right.cross(&forward);
        Ok(CameraView {
            position,
            target,
            up,
            projection,
            width,
            height,
            right,
            true_up,
            forward,
        })
    }

    /// Camera on a sphere around `center`. Azimuth 0 looks from +z, 90 from
    /// +x; positive elevation is above (y up).
    pub fn orbit(
        center: Vec3,
        radius: f64,
        azimuth_deg: f64,
        elevation_deg: f64,
        projection: Projection,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let dir = Vec3::new(az.sin() * el.cos(), el.sin(), az.cos() * el.cos());
        Self::new(
            center + radius * dir,
            center,
            Vec3::y(),
            projection,
            width,
            height,
        )
    }

    pub fn forward(&self) -> Vec3 {
        self.forward
    }

    pub fn right(&self) -> Vec3 {
        self.right
    }

    pub fn camera_up(&self) -> Vec3 {
        self.true_up
    }

    fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// Half extents of the image plane at unit depth (perspective) or in world
    /// units (orthographic).
    fn half_extent(&self) -> (f64, f64) {
        let h = match self.projection {
            Projection::Perspective { fov_y_deg } => (fov_y_deg.to_radians() / 2.0).tan(),
            Projection::Orthographic { half_height } => half_height,
        };
        (h * self.aspect(), h)
    }

    pub fn is_perspective(&self) -> bool {
        matches!(self.projection, Projection::Perspective { .. })
    }

    pub fn view_depth(&self, p: &Vec3) -> f64 {
        (p - self.position).dot(&self.forward)
    }

    pub fn project(&self, p: &Vec3) -> Option<ScreenPoint> {
        let rel = p - self.position;
        let depth = rel.dot(&self.forward);
        let (hx, hy) = self.half_extent();
        let (mut nx, mut ny) = (rel.dot(&self.right) / hx, rel.dot(&self.true_up) / hy);
        if self.is_perspective() {
            if depth <= NEAR {
                return None;
            }
            nx /= depth;
            ny /= depth;
        }
        Some(ScreenPoint {
            x: (nx + 1.0) * 0.5 * self.width as f64,
            y: (1.0 - ny) * 0.5 * self.height as f64,
            depth,
        })
    }

    /// World-space ray through a screen position: `(origin, unit direction)`.
    pub fn ray(&self, sx: f64, sy: f64) -> (Vec3, Vec3) {
        let nx = sx / self.width as f64 * 2.0 - 1.0;
        let ny = 1.0 - sy / self.height as f64 * 2.0;
        let (hx, hy) = self.half_extent();
        let lateral = nx * hx * self.right + ny * hy * self.true_up;
        if self.is_perspective() {
            (self.position, (self.forward + lateral).normalize())
        } else {
            (self.position + lateral, self.forward)
        }
    }

    /// Unit vector from `p` toward the camera.
    pub fn direction_to_camera(&self, p: &Vec3) -> Vec3 {
        if self.is_perspective() {
            (self.position - p).normalize()
        } else {
            -self.forward
        }
    }
}
