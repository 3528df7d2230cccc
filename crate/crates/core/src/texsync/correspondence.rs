use rayon::prelude::*;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::guidance::LatentImage;
use crate::mesh::{TriMesh, Vec3};
use crate::raster::{ray_triangle, rasterize, RasterBuffer};

use super::{LatentTexture, LatentViews};

/// Visibility band in scene units.
pub const DEFAULT_DEPTH_TOLERANCE: f64 = 1e-3;

/// The surface point under a texel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelSample {
    pub face: usize,
    pub bary: [f64; 3],
    pub point: Vec3,
    pub normal: Vec3,
    pub chart: usize,
}

/// A texel seen by one view, with bilinear pixel taps for back-projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub view: usize,
    pub screen: [f64; 2],
    pub depth: f64,
    /// Cosine between the surface normal and the direction to the camera.
    pub cos: f64,
    /// `(pixel index, weight)`, weights summing to one.
    pub taps: Vec<(usize, f64)>,
}

/// The surface under a foreground pixel and its texture lookup taps.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSample {
    pub face: usize,
    pub bary: [f64; 3],
    pub point: Vec3,
    pub normal: Vec3,
    pub uv: [f64; 2],
    /// Bilinear `(texel index, weight)` taps within the face's chart; not
    /// normalized, since texel validity is only known at lookup time.
    pub taps: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct ViewCorrespondence {
    pub cameras: Vec<CameraView>,
    pub texture_size: usize,
    pub depth_tolerance: f64,
    pub texels: Vec<Option<TexelSample>>,
    /// Per texel, in view order.
    pub observations: Vec<Vec<Observation>>,
    /// Per view, per pixel.
    pub pixels: Vec<Vec<Option<PixelSample>>>,
}

impl ViewCorrespondence {
    pub fn view_count(&self) -> usize {
        self.cameras.len()
    }

    pub fn texel_count(&self) -> usize {
        self.texture_size * self.texture_size
    }

    pub fn observed_texels(&self) -> usize {
        self.observations.iter().filter(|o| !o.is_empty()).count()
    }

    /// Texel to chart map (`None` outside every chart).
    pub fn texel_charts(&self) -> Vec<Option<usize>> {
        self.texels.iter().map(|t| t.map(|t| t.chart)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    OutOfView,
    BackFacing,
    Occluded,
    Visible,
}

/// Depth test of a surface point against the z-buffer of one view. The
/// visible depth along the point's ray is found by intersecting the ray with
/// every face seen in the 3 x 3 pixel neighborhood.
pub fn texel_visibility(
    mesh: &TriMesh,
    camera: &CameraView,
    raster: &RasterBuffer,
    point: &Vec3,
    normal: &Vec3,
    tolerance: f64,
) -> Visibility {
    let Some(s) = camera.project(point) else {
        return Visibility::OutOfView;
    };
    if !(s.x >= 0.0 && s.y >= 0.0 && s.x < camera.width as f64 && s.y < camera.height as f64) {
        return Visibility::OutOfView;
    }
    if normal.dot(&camera.direction_to_camera(point)) <= 0.0 {
        return Visibility::BackFacing;
    }
    let (origin, dir) = camera.ray(s.x, s.y);
    let (cx, cy) = (s.x as isize, s.y as isize);
    let mut nearest = s.depth;
    let mut seen: Vec<usize> = Vec::with_capacity(9);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (x, y) = (cx + dx, cy + dy);
            if x < 0 || y < 0 || x >= raster.width as isize || y >= raster.height as isize {
                continue;
            }
            let Some(frag) = raster.get(x as usize, y as usize) else { continue };
            if seen.contains(&frag.face) {
                continue;
            }
            seen.push(frag.face);
            let [a, b, c] = mesh.corners(frag.face);
            if let Some((t, _, _)) = ray_triangle(&origin, &dir, &a, &b, &c) {
                let depth = camera.view_depth(&(origin + t * dir));
                nearest = nearest.min(depth);
            }
        }
    }
    if s.depth - nearest < tolerance {
        Visibility::Visible
    } else {
        Visibility::Occluded
    }
}

fn shares_vertex(a: &[usize; 3], b: &[usize; 3]) -> bool {
    a.iter().any(|v| b.contains(v))
}

/// Pixel-center bilinear taps around a continuous grid position, as
/// `(x, y, weight)` with coordinates inside `[0, w) x [0, h)`.
fn bilinear_taps(gx: f64, gy: f64, w: usize, h: usize) -> Vec<(usize, usize, f64)> {
    let (x0, y0) = (gx.floor(), gy.floor());
    let (fx, fy) = (gx - x0, gy - y0);
    let mut taps = Vec::with_capacity(4);
    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            let (x, y) = (x0 + dx, y0 + dy);
            let wgt = wx * wy;
            if wgt > 0.0 && x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                taps.push((x as usize, y as usize, wgt));
            }
        }
    }
    taps
}

/// Builds texel samples from the UV layout, rasterizes every view and
/// records which texels each view observes.
pub fn rasterize_correspondence(
    mesh: &TriMesh,
    cameras: &[CameraView],
    texture_size: usize,
    depth_tolerance: f64,
) -> Result<ViewCorrespondence> {
    let uvs = mesh.uvs.as_ref().ok_or(Error::MissingUvs)?;
    if texture_size == 0 {
        return Err(Error::InvalidArgument("texture size must be positive".into()));
    }
    let (face_chart, _) = mesh.uv_charts().ok_or(Error::MissingUvs)?;
    let t = texture_size;
    let normals = mesh.vertex_normals();
    let face_normals = mesh.face_normals()?;

    let mut texels: Vec<Option<TexelSample>> = vec![None; t * t];
    for f in 0..mesh.faces.len() {
        let uv = [uvs.corner(f, 0), uvs.corner(f, 1), uvs.corner(f, 2)];
        let area = edge(uv[0], uv[1], uv[2]);
        if area.abs() < 1e-18 {
            continue;
        }
        let lo = |k: usize| uv.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = |k: usize| uv.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        let range = |a: f64, b: f64| {
            let first = ((a * t as f64 - 0.5).floor().max(0.0)) as usize;
            let last = ((b * t as f64 - 0.5).ceil().max(0.0) as usize).min(t - 1);
            first..=last
        };
        for row in range(lo(1), hi(1)) {
            for col in range(lo(0), hi(0)) {
                let idx = row * t + col;
                if texels[idx].is_some() {
                    continue;
                }
                let p = [(col as f64 + 0.5) / t as f64, (row as f64 + 0.5) / t as f64];
                let b = [
                    edge(uv[1], uv[2], p) / area,
                    edge(uv[2], uv[0], p) / area,
                    edge(uv[0], uv[1], p) / area,
                ];
                if b.iter().any(|&x| x < -1e-12) {
                    continue;
                }
                let tri = mesh.faces[f];
                let [a, bb, c] = mesh.corners(f);
                let n = b[0] * normals[tri[0]] + b[1] * normals[tri[1]] + b[2] * normals[tri[2]];
                let n = if n.norm() > 1e-12 { n.normalize() } else { face_normals[f] };
                texels[idx] = Some(TexelSample {
                    face: f,
                    bary: b,
                    point: b[0] * a + b[1] * bb + b[2] * c,
                    normal: n,
                    chart: face_chart[f],
                });
            }
        }
    }

    let rasters: Vec<RasterBuffer> = cameras.par_iter().map(|c| rasterize(mesh, c)).collect();

    let pixels: Vec<Vec<Option<PixelSample>>> = rasters
        .par_iter()
        .map(|buf| {
            buf.fragments
                .iter()
                .map(|frag| {
                    let frag = frag.as_ref()?;
                    let f = frag.face;
                    let b = frag.bary;
                    let tri = mesh.faces[f];
                    let [a, bb, c] = mesh.corners(f);
                    let uv = [0, 1].map(|k| (0..3).map(|i| b[i] * uvs.corner(f, i)[k]).sum::<f64>());
                    let taps = bilinear_taps(uv[0] * t as f64 - 0.5, uv[1] * t as f64 - 0.5, t, t)
                        .into_iter()
                        .map(|(x, y, w)| (y * t + x, w))
                        .filter(|(i, _)| texels[*i].is_some_and(|s| s.chart == face_chart[f]))
                        .collect();
                    let n = b[0] * normals[tri[0]] + b[1] * normals[tri[1]] + b[2] * normals[tri[2]];
                    Some(PixelSample {
                        face: f,
                        bary: b,
                        point: b[0] * a + b[1] * bb + b[2] * c,
                        normal: if n.norm() > 1e-12 { n.normalize() } else { face_normals[f] },
                        uv,
                        taps,
                    })
                })
                .collect()
        })
        .collect();

    let observations: Vec<Vec<Observation>> = texels
        .par_iter()
        .map(|sample| {
            let Some(s) = sample else { return Vec::new() };
            let tri = mesh.faces[s.face];
            let mut obs = Vec::new();
            for (v, (cam, buf)) in cameras.iter().zip(&rasters).enumerate() {
                if texel_visibility(mesh, cam, buf, &s.point, &s.normal, depth_tolerance) != Visibility::Visible {
                    continue;
                }
                let sp = cam.project(&s.point).expect("visible point projects");
                let mut taps: Vec<(usize, f64)> = bilinear_taps(sp.x - 0.5, sp.y - 0.5, cam.width, cam.height)
                    .into_iter()
                    .filter_map(|(x, y, w)| {
                        let frag = buf.get(x, y)?;
                        shares_vertex(&mesh.faces[frag.face], &tri).then_some((y * cam.width + x, w))
                    })
                    .collect();
                let total: f64 = taps.iter().map(|(_, w)| w).sum();
                if total <= 0.0 {
                    continue;
                }
                taps.iter_mut().for_each(|(_, w)| *w /= total);
                obs.push(Observation {
                    view: v,
                    screen: [sp.x, sp.y],
                    depth: sp.depth,
                    cos: s.normal.dot(&cam.direction_to_camera(&s.point)),
                    taps,
                });
            }
            obs
        })
        .collect();

    Ok(ViewCorrespondence {
        cameras: cameras.to_vec(),
        texture_size,
        depth_tolerance,
        texels,
        observations,
        pixels,
    })
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Dense per-texel, per-view weights; zero where a view does not observe
/// the texel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub views: usize,
    pub data: Vec<f64>,
}

impl WeightTable {
    pub fn row(&self, texel: usize) -> &[f64] {
        &self.data[texel * self.views..(texel + 1) * self.views]
    }
}

/// `alpha = max(cos, 0)^k` for every observation.
pub fn view_weights(corr: &ViewCorrespondence, k: f64) -> WeightTable {
    let views = corr.view_count();
    let mut data = vec![0.0; corr.texel_count() * views];
    for (t, obs) in corr.observations.iter().enumerate() {
        for o in obs {
            data[t * views + o.view] = o.cos.max(0.0).powf(k);
        }
    }
    WeightTable { views, data }
}

/// Value of view `o.view` at an observed texel.
pub fn backproject(o: &Observation, view: &LatentImage, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for &(p, w) in &o.taps {
        for (c, x) in out.iter_mut().enumerate() {
            *x += w * view.data[p * view.channels + c];
        }
    }
}

/// Weighted mean of back-projected view values per texel; texels with zero
/// total weight are invalid.
pub fn aggregate(corr: &ViewCorrespondence, weights: &WeightTable, views: &LatentViews) -> Result<LatentTexture> {
    if views.len() != corr.view_count() || weights.views != corr.view_count() {
        return Err(Error::Shape(format!(
            "{} views, {} weight columns, {} cameras",
            views.len(),
            weights.views,
            corr.view_count()
        )));
    }
    let channels = views.first().map_or(0, |v| v.channels);
    if views.iter().any(|v| v.channels != channels || v.data.len() != corr.cameras[0].width * corr.cameras[0].height * channels)
    {
        return Err(Error::Shape("view images do not match the camera resolution".into()));
    }
    let mut tex = LatentTexture::empty(corr.texture_size, channels);
    let rows: Vec<Option<Vec<f64>>> = corr
        .observations
        .par_iter()
        .enumerate()
        .map(|(t, obs)| {
            let mut num = vec![0.0; channels];
            let mut den = 0.0;
            let mut buf = vec![0.0; channels];
            for o in obs {
                let a = weights.row(t)[o.view];
                if a <= 0.0 {
                    continue;
                }
                backproject(o, &views[o.view], &mut buf);
                for (n, b) in num.iter_mut().zip(&buf) {
                    *n += a * b;
                }
                den += a;
            }
            (den > 0.0).then(|| num.into_iter().map(|n| n / den).collect())
        })
        .collect();
    for (t, row) in rows.into_iter().enumerate() {
        if let Some(vals) = row {
            tex.texel_mut(t).copy_from_slice(&vals);
            tex.valid[t] = true;
        }
    }
    Ok(tex)
}

/// Looks the texture up at every foreground pixel (bilinear over valid texels
/// of the pixel's chart). Pixels with no valid tap keep the value in
/// `fallback`; the returned masks mark pixels that took a texture value.
pub fn project_texture(
    corr: &ViewCorrespondence,
    texture: &LatentTexture,
    fallback: &LatentViews,
) -> Result<(LatentViews, Vec<Vec<bool>>)> {
    if fallback.len() != corr.view_count() {
        return Err(Error::Shape("fallback views do not match the rig".into()));
    }
    if texture.size != corr.texture_size {
        return Err(Error::Shape("texture size differs from the correspondence".into()));
    }
    let c = texture.channels;
    let results: Vec<(LatentImage, Vec<bool>)> = corr
        .pixels
        .par_iter()
        .zip(fallback)
        .map(|(pixels, base)| {
            if base.channels != c || base.data.len() != pixels.len() * c {
                return Err(Error::Shape("fallback view has the wrong shape".into()));
            }
            let mut img = base.clone();
            let mut mask = vec![false; pixels.len()];
            for (p, sample) in pixels.iter().enumerate() {
                let Some(s) = sample else { continue };
                let total: f64 = s.taps.iter().filter(|(t, _)| texture.valid[*t]).map(|(_, w)| w).sum();
                if total <= 0.0 {
                    continue;
                }
                let out = &mut img.data[p * c..(p + 1) * c];
                out.iter_mut().for_each(|x| *x = 0.0);
                for &(t, w) in s.taps.iter().filter(|(t, _)| texture.valid[*t]) {
                    for (k, x) in out.iter_mut().enumerate() {
                        *x += w / total * texture.data[t * c + k];
                    }
                }
                mask[p] = true;
            }
            Ok((img, mask))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Projection;
    use crate::primitives;

    fn front_and_back(res: usize) -> Vec<CameraView> {
        [0.0, 180.0]
            .iter()
            .map(|&az| {
                CameraView::orbit(
                    Vec3::zeros(),
                    3.0,
                    az,
                    0.0,
                    Projection::Orthographic { half_height: 1.0 },
                    res,
                    res,
                )
                .unwrap()
            })
            .collect()
    }

    fn quad() -> TriMesh {
        primitives::uv_grid(4, 4, 1.0, 1.0)
    }

    #[test]
    fn front_quad_seen_from_front_only() {
        let corr = rasterize_correspondence(&quad(), &front_and_back(64), 16, DEFAULT_DEPTH_TOLERANCE).unwrap();
        let covered = corr.texels.iter().filter(|t| t.is_some()).count();
        assert_eq!(covered, 256);
        for obs in &corr.observations {
            assert_eq!(obs.len(), 1);
            assert_eq!(obs[0].view, 0);
            assert!((obs[0].cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_uvs_rejected() {
        let m = primitives::icosphere(1);
        assert!(matches!(
            rasterize_correspondence(&m, &front_and_back(8), 8, 1e-3),
            Err(Error::MissingUvs)
        ));
    }

    #[test]
    fn empty_mesh_has_no_observations() {
        let m = TriMesh::new(vec![], vec![])
            .unwrap()
            .with_uvs(crate::mesh::UvLayout {
                coords: vec![],
                faces: vec![],
            })
            .unwrap();
        let corr = rasterize_correspondence(&m, &front_and_back(8), 8, 1e-3).unwrap();
        assert_eq!(corr.observed_texels(), 0);
    }

    #[test]
    fn weights_follow_cosine() {
        let corr = rasterize_correspondence(&quad(), &front_and_back(32), 8, 1e-3).unwrap();
        let w = view_weights(&corr, 1.0);
        for t in 0..64 {
            assert_eq!(w.row(t), &[1.0, 0.0]);
        }
        // a quad tilted 60 degrees away from the front camera
        let tilted = primitives::transformed(&quad(), |p| {
            let a = 60f64.to_radians();
            Vec3::new(p.x * a.cos(), p.y, -p.x * a.sin())
        });
        let corr = rasterize_correspondence(&tilted, &front_and_back(64), 8, 1e-3).unwrap();
        let w = view_weights(&corr, 1.0);
        let seen: Vec<f64> = (0..64).map(|t| w.row(t)[0]).filter(|a| *a > 0.0).collect();
        assert!(!seen.is_empty());
        assert!(seen.iter().all(|a| (a - 0.5).abs() < 1e-12));
    }

    #[test]
    fn aggregate_weighted_mean() {
        let corr = rasterize_correspondence(&quad(), &front_and_back(32), 8, 1e-3).unwrap();
        let views = vec![
            LatentImage::from_fn(32, 32, 1, |_, _, _| 1.0),
            LatentImage::from_fn(32, 32, 1, |_, _, _| 3.0),
        ];
        // pretend both views see every texel with weights 0.25 and 0.75
        let mut corr2 = corr.clone();
        for obs in corr2.observations.iter_mut() {
            let mut o = obs[0].clone();
            o.view = 1;
            obs.push(o);
        }
        let w = WeightTable {
            views: 2,
            data: (0..64).flat_map(|_| [0.25, 0.75]).collect(),
        };
        let tex = aggregate(&corr2, &w, &views).unwrap();
        assert!(tex.valid.iter().all(|v| *v));
        assert!(tex.data.iter().all(|x| (x - 2.5).abs() < 1e-12));
        let single = aggregate(&corr, &view_weights(&corr, 1.0), &views).unwrap();
        assert!(single.data.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_texture_projects_to_constant() {
        let corr = rasterize_correspondence(&quad(), &front_and_back(32), 8, 1e-3).unwrap();
        let mut tex = LatentTexture::empty(8, 2);
        for t in 0..64 {
            tex.valid[t] = true;
            tex.texel_mut(t).copy_from_slice(&[0.25, -1.0]);
        }
        let base = vec![LatentImage::zeros(32, 32, 2); 2];
        let (views, masks) = project_texture(&corr, &tex, &base).unwrap();
        let fg = masks[0].iter().filter(|m| **m).count();
        assert!(fg > 0);
        for (p, m) in masks[0].iter().enumerate() {
            if *m {
                assert!((views[0].data[2 * p] - 0.25).abs() < 1e-12);
                assert!((views[0].data[2 * p + 1] + 1.0).abs() < 1e-12);
            } else {
                assert_eq!(views[0].data[2 * p], 0.0);
            }
        }
        // the back view sees the quad from behind: pixels exist but all
        // lookups succeed too, since projection does not depend on facing
        assert_eq!(masks[1].iter().filter(|m| **m).count(), fg);
    }
}
