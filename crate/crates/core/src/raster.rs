//! Z-buffer triangle rasterization with perspective-correct barycentrics.

use crate::camera::CameraView;
use crate::mesh::{TriMesh, Vec3};

/// The visible surface at a pixel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub face: usize,
    /// World-space barycentric coordinates of the surface point.
    pub bary: [f64; 3],
    pub depth: f64,
}

#[derive(Debug, Clone)]
pub struct RasterBuffer {
    pub width: usize,
    pub height: usize,
    pub fragments: Vec<Option<Fragment>>,
}

impl RasterBuffer {
    pub fn get(&self, x: usize, y: usize) -> Option<&Fragment> {
        self.fragments[y * self.width + x].as_ref()
    }

    pub fn coverage(&self) -> usize {
        self.fragments.iter().filter(|f| f.is_some()).count()
    }
}

pub fn rasterize(mesh: &TriMesh, camera: &CameraView) -> RasterBuffer {
    let (w, h) = (camera.width, camera.height);
    let mut fragments: Vec<Option<Fragment>> = vec![None; w * h];
    let perspective = camera.is_perspective();
    for f in 0..mesh.faces.len() {
        let corners = mesh.corners(f);
        let Some(s0) = camera.project(&corners[0]) else {
            continue;
        };
        let Some(s1) = camera.project(&corners[1]) else {
            continue;
        };
        let Some(s2) = camera.project(&corners[2]) else {
            continue;
        };
        let area = edge(s0.x, s0.y, s1.x, s1.y, s2.x, s2.y);
        if area.abs() < 1e-14 {
            continue;
        }
        let min_x = s0.x.min(s1.x).min(s2.x).floor().max(0.0) as usize;
        let min_y = s0.y.min(s1.y).min(s2.y).floor().max(0.0) as usize;
        let max_x = (s0.x.max(s1.x).max(s2.x).ceil() as isize).min(w as isize - 1);
        let max_y = (s0.y.max(s1.y).max(s2.y).ceil() as isize).min(h as isize - 1);
        if max_x < 0 || max_y < 0 {
            continue;
        }
        for py in min_y..=max_y as usize {
            for px in min_x..=max_x as usize {
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let l0 = edge(s1.x, s1.y, s2.x, s2.y, cx, cy) / area;
                let l1 = edge(s2.x, s2.y, s0.x, s0.y, cx, cy) / area;
                let l2 = edge(s0.x, s0.y, s1.x, s1.y, cx, cy) / area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let (bary, depth) = if perspective {
                    let w0 = l0 / s0.depth;
                    let w1 = l1 / s1.depth;
                    let w2 = l2 / s2.depth;
                    let sum = w0 + w1 + w2;
                    ([w0 / sum, w1 / sum, w2 / sum], 1.0 / sum)
                } else {
                    ([l0, l1, l2], l0 * s0.depth + l1 * s1.depth + l2 * s2.depth)
                };
                let slot = &mut fragments[py * w + px];
                if slot.is_none_or(|frag| depth < frag.depth) {
                    *slot = Some(Fragment {
                        face: f,
                        bary,
                        depth,
                    });
                }
            }
        }
    }
    RasterBuffer {
        width: w,
        height: h,
        fragments,
    }
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Moller-Trumbore intersection; returns `(t, u, v)` with the hit at
/// `a + u (b - a) + v (c - a)`.
pub fn ray_triangle(
    origin: &Vec3,
    dir: &Vec3,
    a: &Vec3,
    b: &Vec3,
    c: &Vec3,
) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = dir.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = origin - a;
    let u = tv.dot(&pv) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qv = tv.cross(&e1);
    let v = dir.dot(&qv) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    Some((e2.dot(&qv) * inv, u, v))
}

/// Nearest hit along a ray over all faces: `(t, face)`.
pub fn ray_cast(mesh: &TriMesh, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.corners(f);
        if let Some((t, _, _)) = ray_triangle(origin, dir, &a, &b, &c) {
            if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, f));
            }
        }
    }
    best
}
