//! Small built-in test scenes.

use crate::losses::BlockingCylinder;
use crate::mesh::{TriMesh, Vec3};
use crate::primitives::{capsule, merge, transformed, tube, uv_grid};
use crate::texsync::LatentTexture;

pub struct TestScene {
    pub body: TriMesh,
    pub garment: TriMesh,
    pub cylinders: Vec<BlockingCylinder>,
}

pub const ARM_RADIUS: f64 = 0.3;
pub const SLEEVE_RADIUS: f64 = 0.25;
pub const WRIST_X: f64 = 1.1;

/// A capsule arm along x with a tube sleeve that starts inside the arm and
/// runs past the wrist cylinder.
pub fn arm_sleeve() -> TestScene {
    TestScene {
        body: capsule(ARM_RADIUS, 1.2, 48, 8, 40),
        garment: tube(SLEEVE_RADIUS, -1.0, 1.2, 32, 24),
        cylinders: vec![BlockingCylinder::new(Vec3::new(WRIST_X, 0.0, 0.0), Vec3::x(), 0.5)
            .expect("valid cylinder")],
    }
}

/// A tube along x bent upward toward +x, so it is not mirror symmetric
/// about the x = 0 plane.
pub fn skewed_sleeve() -> TriMesh {
    let t = tube(0.35, -0.8, 0.8, 24, 12);
    crate::primitives::transformed(&t, |p| {
        let bend = 0.15 * (1.0 + p.x) * (1.0 + p.x);
        Vec3::new(p.x, p.y + bend, p.z)
    })
}

/// An open tube standing along y, seen from the side by every equatorial
/// camera. One UV chart, seam at u = 0.
pub fn textured_column() -> TriMesh {
    let t = tube(0.5, -0.6, 0.6, 48, 16);
    transformed(&t, |p| Vec3::new(-p.y, p.x, p.z))
}

/// Two parallel quads facing +z: a 2 x 2 one at z = 0 and a 1 x 1 one at
/// z = 0.5 hiding its middle from a camera on +z. Their UVs sit side by
/// side in the left and right halves of the unit square.
pub fn two_planes() -> TriMesh {
    let far = uv_grid(8, 8, 2.0, 2.0);
    let near = transformed(&uv_grid(4, 4, 1.0, 1.0), |p| Vec3::new(p.x, p.y, 0.5));
    let mut m = merge(&far, &near);
    let uvs = m.uvs.as_mut().expect("grids carry uvs");
    let split = far.uvs.as_ref().map_or(0, |u| u.coords.len());
    for (i, uv) in uvs.coords.iter_mut().enumerate() {
        uv[0] = 0.5 * uv[0] + if i < split { 0.0 } else { 0.5 };
    }
    m
}

/// A smooth texture with values in roughly [0.2, 0.8]; every texel valid.
pub fn smooth_texture(size: usize, channels: usize) -> LatentTexture {
    let mut tex = LatentTexture::empty(size, channels);
    for t in 0..size * size {
        let u = ((t % size) as f64 + 0.5) / size as f64;
        let v = ((t / size) as f64 + 0.5) / size as f64;
        for (c, x) in tex.texel_mut(t).iter_mut().enumerate() {
            let phase = c as f64 * 1.3;
            *x = 0.5 + 0.15 * (std::f64::consts::TAU * u + phase).sin() + 0.15 * (3.0 * v + phase).cos();
        }
        tex.valid[t] = true;
    }
    tex
}
