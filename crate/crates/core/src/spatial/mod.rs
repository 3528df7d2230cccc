//! Distance queries against the body and against point sets.

mod bvh;
mod kdtree;
mod sdf;

pub use bvh::{closest_point_on_triangle, Bvh, ClosestHit, Feature};
pub use kdtree::{brute_force_nearest, squared_distance, PointIndex};
pub use sdf::{build_body_sdf, winding_number, BodySdf, SdfQuery};
