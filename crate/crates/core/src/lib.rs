//! Body-aligned garment deformation and multi-view texture synchronization.

pub mod camera;
pub mod error;
pub mod guidance;
pub mod losses;
pub mod mesh;
pub mod njf;
pub mod optimize;
pub mod primitives;
pub mod raster;
pub mod scenes;
pub mod sparse;
pub mod spatial;
pub mod texsync;

pub use error::{Error, Result};
pub use mesh::{
    load_mesh, sample_surface, save_mesh, Normalization, SamplePoints, TriMesh, UvLayout, Vec3,
};
