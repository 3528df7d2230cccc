use crate::camera::{CameraView, Projection};
use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Cameras on the equator around the origin. View 0 is the front; the view
/// at azimuth 180 degrees, if any, is the back.
#[derive(Debug, Clone)]
pub struct Rig {
    pub cameras: Vec<CameraView>,
    pub azimuths: Vec<f64>,
    pub front: usize,
    pub back: Option<usize>,
}

pub fn make_equatorial_rig(n_views: usize, radius: f64, resolution: usize, projection: Projection) -> Result<Rig> {
    if n_views < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 views, got {n_views}")));
    }
    let azimuths: Vec<f64> = (0..n_views).map(|k| k as f64 * 360.0 / n_views as f64).collect();
    let cameras = azimuths
        .iter()
        .map(|&az| CameraView::orbit(Vec3::zeros(), radius, az, 0.0, projection, resolution, resolution))
        .collect::<Result<Vec<_>>>()?;
    let back = (n_views % 2 == 0).then_some(n_views / 2);
    Ok(Rig {
        cameras,
        azimuths,
        front: 0,
        back,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PERSP: Projection = Projection::Perspective { fov_y_deg: 40.0 };

    #[test]
    fn six_views() {
        let rig = make_equatorial_rig(6, 3.0, 16, PERSP).unwrap();
        assert_eq!(rig.azimuths, vec![0.0, 60.0, 120.0, 180.0, 240.0, 300.0]);
        assert_eq!((rig.front, rig.back), (0, Some(3)));
        let back = &rig.cameras[3];
        assert!((back.position - Vec3::new(0.0, 0.0, -3.0)).norm() < 1e-12);
    }

    #[test]
    fn two_and_five_views() {
        let rig = make_equatorial_rig(2, 3.0, 16, PERSP).unwrap();
        assert_eq!(rig.back, Some(1));
        let rig = make_equatorial_rig(5, 3.0, 16, PERSP).unwrap();
        assert_eq!(rig.back, None);
        assert!(make_equatorial_rig(1, 3.0, 16, PERSP).is_err());
    }
}
