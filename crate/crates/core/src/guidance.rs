//! Interval score matching under a rectified-flow vector field, with the
//! normal-map renderer and latent surrogate it differentiates through.

use nalgebra::Matrix3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraView, Projection};
use crate::error::{Error, Result};
use crate::losses::LossGrad;
use crate::mesh::{sample_surface, SamplePoints, TriMesh, Vec3};
use crate::raster::rasterize;
use crate::spatial::PointIndex;

/// Number of discrete timesteps; `t` maps to `tau = t / 1000`.
pub const TIMESTEPS: u32 = 1000;

/// H x W x C grid stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl LatentImage {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        LatentImage {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        LatentImage {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn from_vec3(height: usize, width: usize, pixels: &[Vec3]) -> Self {
        assert_eq!(pixels.len(), height * width);
        LatentImage {
            height,
            width,
            channels: 3,
            data: pixels.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    pub fn to_vec3(&self) -> Result<Vec<Vec3>> {
        if self.channels != 3 {
            return Err(Error::Shape(format!(
                "expected 3 channels, got {}",
                self.channels
            )));
        }
        Ok(self
            .data
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect())
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    pub fn same_shape(&self, other: &LatentImage) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    fn check_shape(&self, other: &LatentImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    fn with_data(&self, data: Vec<f64>) -> LatentImage {
        LatentImage {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    /// `self + k * other`.
    pub fn axpy(&self, k: f64, other: &LatentImage) -> Result<LatentImage> {
        self.check_shape(other)?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + k * b)
                .collect(),
        ))
    }

    pub fn scale(&self, k: f64) -> LatentImage {
        self.with_data(self.data.iter().map(|v| k * v).collect())
    }

    pub fn dot(&self, other: &LatentImage) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Opaque stand-in for a text embedding; `None` plays the role of the
/// empty prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionToken(pub String);

impl ConditionToken {
    pub fn new(s: impl Into<String>) -> Self {
        ConditionToken(s.into())
    }
}

/// A conditional velocity field over latent images. `t` is a timestep on the
/// 0..=1000 scale; fractional values occur between integration substeps.
pub trait GuidanceField: Send + Sync {
    fn velocity(
        &self,
        x: &LatentImage,
        t: f64,
        cond: Option<&ConditionToken>,
    ) -> Result<LatentImage>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl GuidanceField for ZeroField {
    fn velocity(
        &self,
        x: &LatentImage,
        _t: f64,
        _cond: Option<&ConditionToken>,
    ) -> Result<LatentImage> {
        Ok(x.scale(0.0))
    }
}

/// `v = c`, one constant per channel.
#[derive(Debug, Clone)]
pub struct ConstantField {
    pub per_channel: Vec<f64>,
}

impl GuidanceField for ConstantField {
    fn velocity(
        &self,
        x: &LatentImage,
        _t: f64,
        _cond: Option<&ConditionToken>,
    ) -> Result<LatentImage> {
        broadcast_channels(x, &self.per_channel)
    }
}

fn broadcast_channels(x: &LatentImage, per_channel: &[f64]) -> Result<LatentImage> {
    if per_channel.len() != x.channels {
        return Err(Error::Shape(format!(
            "field has {} channels, latent has {}",
            per_channel.len(),
            x.channels
        )));
    }
    let data = (0..x.data.len())
        .map(|i| per_channel[i % x.channels])
        .collect();
    Ok(x.with_data(data))
}

/// `v(x) = A x` applied to every 3-channel pixel.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub a: Matrix3<f64>,
}

impl GuidanceField for LinearField {
    fn velocity(
        &self,
        x: &LatentImage,
        _t: f64,
        _cond: Option<&ConditionToken>,
    ) -> Result<LatentImage> {
        let px = x.to_vec3()?;
        let out: Vec<Vec3> = px.iter().map(|p| self.a * p).collect();
        Ok(LatentImage::from_vec3(x.height, x.width, &out))
    }
}

/// Adds a constant per-channel offset to `base` when conditioned on `cond`.
#[derive(Debug, Clone)]
pub struct ConditionalOffset<F> {
    pub base: F,
    pub cond: ConditionToken,
    pub delta: Vec<f64>,
}

impl<F: GuidanceField> GuidanceField for ConditionalOffset<F> {
    fn velocity(
        &self,
        x: &LatentImage,
        t: f64,
        cond: Option<&ConditionToken>,
    ) -> Result<LatentImage> {
        let v = self.base.velocity(x, t, cond)?;
        if cond == Some(&self.cond) {
            v.axpy(1.0, &broadcast_channels(x, &self.delta)?)
        } else {
            Ok(v)
        }
    }
}

/// `v(x, t, c) = anchor(c) - x`.
#[derive(Debug, Clone)]
pub struct PointAttractor {
    pub unconditional: LatentImage,
    pub anchors: Vec<(ConditionToken, LatentImage)>,
}

impl GuidanceField for PointAttractor {
    fn velocity(
        &self,
        x: &LatentImage,
        _t: f64,
        cond: Option<&ConditionToken>,
    ) -> Result<LatentImage> {
        let anchor = match cond {
            None => &self.unconditional,
            Some(c) => self
                .anchors
                .iter()
                .find(|(k, _)| k == c)
                .map(|(_, a)| a)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("no anchor for condition {:?}", c.0))
                })?,
        };
        anchor.axpy(-1.0, x)
    }
}

/// Euler integration of the unconditional field from `t0` to `t1`
/// (timestep units) in `steps` equal substeps.
fn integrate(
    field: &dyn GuidanceField,
    x: &LatentImage,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<LatentImage> {
    let mut x = x.clone();
    let h = (t1 - t0) / steps as f64;
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let v = field.velocity(&x, t, None)?;
        if !v.same_shape(&x) {
            return Err(Error::Shape("velocity shape differs from latent".into()));
        }
        x = x.axpy(h / TIMESTEPS as f64, &v)?;
        if !x.is_finite() {
            return Err(Error::NonFinite {
                what: format!("trajectory at substep {} of {steps}", k + 1),
            });
        }
    }
    Ok(x)
}

/// Deterministic trajectory from the clean latent `x0` to timestep `t`.
pub fn invert_trajectory(
    field: &dyn GuidanceField,
    x0: &LatentImage,
    t: u32,
    steps: usize,
) -> Result<LatentImage> {
    if t == 0 || t > TIMESTEPS {
        return Err(Error::InvalidArgument(format!(
            "timestep {t} outside 1..=1000"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "inversion needs at least one step".into(),
        ));
    }
    integrate(field, x0, 0.0, t as f64, steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsmSchedule {
    /// Gap `t - s` in timesteps.
    pub interval: u32,
    /// Euler substeps from 0 to `s`.
    pub inversion_steps: usize,
    /// Euler substeps from `s` to `t`.
    pub interval_substeps: usize,
}

impl Default for IsmSchedule {
    fn default() -> Self {
        IsmSchedule {
            interval: 50,
            inversion_steps: 10,
            interval_substeps: 1,
        }
    }
}

/// `w_t [v(x_t, t, y) - v(x_s, s, none)]`, a gradient on `x0`.
pub fn ism_gradient(
    field: &dyn GuidanceField,
    x0: &LatentImage,
    t: u32,
    s: u32,
    y: &ConditionToken,
    w_t: f64,
    schedule: &IsmSchedule,
) -> Result<LatentImage> {
    if s >= t || t > TIMESTEPS {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= s < t <= 1000, got s={s}, t={t}"
        )));
    }
    if schedule.interval_substeps == 0 {
        return Err(Error::InvalidArgument(
            "interval needs at least one substep".into(),
        ));
    }
    let x_s = if s == 0 {
        x0.clone()
    } else {
        invert_trajectory(field, x0, s, schedule.inversion_steps)?
    };
    let x_t = integrate(field, &x_s, s as f64, t as f64, schedule.interval_substeps)?;
    let v_cond = field.velocity(&x_t, t as f64, Some(y))?;
    let v_unc = field.velocity(&x_s, s as f64, None)?;
    Ok(v_cond.axpy(-1.0, &v_unc)?.scale(w_t))
}

/// Per-pixel surface point behind a rendered pixel.
pub type Provenance = Option<(usize, [f64; 3])>;

/// World-space unit normals per pixel; background pixels are zero.
#[derive(Debug, Clone)]
pub struct NormalRender {
    pub camera: CameraView,
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3>,
    pub provenance: Vec<Provenance>,
}

impl NormalRender {
    pub fn to_image(&self) -> LatentImage {
        LatentImage::from_vec3(self.height, self.width, &self.normals)
    }

    pub fn foreground(&self) -> usize {
        self.provenance.iter().filter(|p| p.is_some()).count()
    }
}

/// Unnormalized vertex normals: sums of incident face cross products.
fn vertex_normal_sums(mesh: &TriMesh) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); mesh.vertices.len()];
    for (f, tri) in mesh.faces.iter().enumerate() {
        let c = mesh.face_cross(f);
        for &i in tri {
            acc[i] += c;
        }
    }
    acc
}

fn safe_normalize(v: &Vec3) -> Vec3 {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vec3::zeros()
    }
}

/// Renders interpolated vertex normals at the camera's resolution.
pub fn render_normal_map(mesh: &TriMesh, camera: &CameraView) -> NormalRender {
    let buf = rasterize(mesh, camera);
    let provenance: Vec<Provenance> = buf
        .fragments
        .iter()
        .map(|f| f.map(|f| (f.face, f.bary)))
        .collect();
    NormalRender {
        camera: camera.clone(),
        width: camera.width,
        height: camera.height,
        normals: shade_with_provenance(mesh, &provenance),
        provenance,
    }
}

/// Re-evaluates pixel normals on (possibly moved) vertices with the
/// pixel-to-surface assignment held fixed.
pub fn shade_with_provenance(mesh: &TriMesh, provenance: &[Provenance]) -> Vec<Vec3> {
    let m: Vec<Vec3> = vertex_normal_sums(mesh)
        .iter()
        .map(safe_normalize)
        .collect();
    provenance
        .iter()
        .map(|p| match p {
            None => Vec3::zeros(),
            Some((f, b)) => {
                let tri = mesh.faces[*f];
                safe_normalize(&(b[0] * m[tri[0]] + b[1] * m[tri[1]] + b[2] * m[tri[2]]))
            }
        })
        .collect()
}

/// Vertex gradient of a loss on the normal image, visibility frozen.
pub fn backprop_normal_render(
    render: &NormalRender,
    mesh: &TriMesh,
    dl_dimage: &[Vec3],
) -> Result<Vec<Vec3>> {
    if dl_dimage.len() != render.provenance.len() {
        return Err(Error::Shape(format!(
            "image gradient has {} pixels, render has {}",
            dl_dimage.len(),
            render.provenance.len()
        )));
    }
    let sums = vertex_normal_sums(mesh);
    let unit: Vec<Vec3> = sums.iter().map(safe_normalize).collect();

    // pixel normal n = s / |s| with s = sum_k b_k m_k
    let mut dm = vec![Vec3::zeros(); mesh.vertices.len()];
    for (p, g) in render.provenance.iter().zip(dl_dimage) {
        let Some((f, b)) = p else { continue };
        let tri = mesh.faces[*f];
        let s = b[0] * unit[tri[0]] + b[1] * unit[tri[1]] + b[2] * unit[tri[2]];
        let len = s.norm();
        if len == 0.0 {
            continue;
        }
        let n = s / len;
        let ds = (g - g.dot(&n) * n) / len;
        for k in 0..3 {
            dm[tri[k]] += b[k] * ds;
        }
    }

    // m_i = a_i / |a_i|, a_i = sum of incident face crosses
    let da: Vec<Vec3> = dm
        .iter()
        .zip(&sums)
        .map(|(g, a)| {
            let len = a.norm();
            if len == 0.0 {
                return Vec3::zeros();
            }
            let m = a / len;
            (g - g.dot(&m) * m) / len
        })
        .collect();

    // c = (p1 - p0) x (p2 - p0)
    let mut dv = vec![Vec3::zeros(); mesh.vertices.len()];
    for (f, tri) in mesh.faces.iter().enumerate() {
        let gc = da[tri[0]] + da[tri[1]] + da[tri[2]];
        let [p0, p1, p2] = mesh.corners(f);
        let (e1, e2) = (p1 - p0, p2 - p0);
        let d1 = e2.cross(&gc);
        let d2 = gc.cross(&e1);
        dv[tri[1]] += d1;
        dv[tri[2]] += d2;
        dv[tri[0]] -= d1 + d2;
    }
    Ok(dv)
}

/// Block-average pooling by `factor` in both directions.
pub fn encode_latent(image: &LatentImage, factor: usize) -> Result<LatentImage> {
    check_factor(image, factor)?;
    let (h, w) = (image.height / factor, image.width / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = LatentImage::zeros(h, w, image.channels);
    for y in 0..image.height {
        for x in 0..image.width {
            for c in 0..image.channels {
                let i = out.index(y / factor, x / factor, c);
                out.data[i] += image.get(y, x, c) * inv;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`encode_latent`]: each latent gradient spread uniformly over
/// its block and divided by the block size.
pub fn decode_gradient(dl_dlatent: &LatentImage, factor: usize) -> Result<LatentImage> {
    if factor == 0 {
        return Err(Error::Shape("latent factor must be positive".into()));
    }
    let inv = 1.0 / (factor * factor) as f64;
    Ok(LatentImage::from_fn(
        dl_dlatent.height * factor,
        dl_dlatent.width * factor,
        dl_dlatent.channels,
        |y, x, c| dl_dlatent.get(y / factor, x / factor, c) * inv,
    ))
}

fn check_factor(image: &LatentImage, factor: usize) -> Result<()> {
    if factor == 0 || image.height % factor != 0 || image.width % factor != 0 {
        return Err(Error::Shape(format!(
            "factor {factor} does not divide {}x{}",
            image.height, image.width
        )));
    }
    Ok(())
}

/// Symmetric Chamfer distance between two point sets (mean squared nearest
/// distance in each direction) with the gradient on `points`.
pub fn chamfer_to_target(points: &[Vec3], target: &[Vec3]) -> Result<LossGrad> {
    if points.is_empty() || target.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let (n, m) = (points.len() as f64, target.len() as f64);
    let target_index = PointIndex::new(target.to_vec());
    let own_index = PointIndex::new(points.to_vec());
    let forward: Vec<(usize, f64)> = points
        .par_iter()
        .map(|p| target_index.nearest(p))
        .collect::<Result<_>>()?;
    let backward: Vec<(usize, f64)> = target
        .par_iter()
        .map(|q| own_index.nearest(q))
        .collect::<Result<_>>()?;
    let mut grad = vec![Vec3::zeros(); points.len()];
    let mut fwd = 0.0;
    for (i, &(j, d2)) in forward.iter().enumerate() {
        fwd += d2;
        grad[i] += 2.0 / n * (points[i] - target[j]);
    }
    let mut bwd = 0.0;
    for (j, &(i, d2)) in backward.iter().enumerate() {
        bwd += d2;
        grad[i] += 2.0 / m * (points[i] - target[j]);
    }
    Ok(LossGrad {
        value: fwd / n + bwd / m,
        grad,
    })
}

/// Chamfer pull toward a target surface, scattered to the mesh vertices.
/// Both surfaces are sampled with `seed`.
pub fn target_shape_guidance(
    mesh: &TriMesh,
    target: &TriMesh,
    n_samples: usize,
    seed: u64,
) -> Result<LossGrad> {
    let samples = sample_surface(mesh, n_samples, seed)?;
    let target_samples = sample_surface(target, n_samples, seed)?;
    target_shape_guidance_with(mesh, &samples, &target_samples.positions)
}

/// As [`target_shape_guidance`] with fixed sample locations.
pub fn target_shape_guidance_with(
    mesh: &TriMesh,
    samples: &SamplePoints,
    target: &[Vec3],
) -> Result<LossGrad> {
    let per_sample = chamfer_to_target(&samples.positions, target)?;
    let mut grad = vec![Vec3::zeros(); mesh.vertices.len()];
    samples.scatter(mesh, &per_sample.grad, &mut grad);
    Ok(LossGrad {
        value: per_sample.value,
        grad,
    })
}

/// Camera and latent settings for rendering-based guidance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceCameras {
    pub batch: usize,
    pub radius: f64,
    pub fov_y_deg: f64,
    pub resolution: usize,
    pub latent_factor: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
}

impl Default for GuidanceCameras {
    fn default() -> Self {
        GuidanceCameras {
            batch: 4,
            radius: 3.0,
            fov_y_deg: 45.0,
            resolution: 512,
            latent_factor: 8,
            elevation_min_deg: -15.0,
            elevation_max_deg: 30.0,
        }
    }
}

impl GuidanceCameras {
    /// Azimuth uniform in [0, 360), elevation uniform in the configured range,
    /// looking at `center`.
    pub fn sample(&self, rng: &mut impl Rng, center: Vec3) -> Result<Vec<CameraView>> {
        (0..self.batch)
            .map(|_| {
                let az = rng.random_range(0.0..360.0);
                let el = rng.random_range(self.elevation_min_deg..=self.elevation_max_deg);
                CameraView::orbit(
                    center,
                    self.radius,
                    az,
                    el,
                    Projection::Perspective {
                        fov_y_deg: self.fov_y_deg,
                    },
                    self.resolution,
                    self.resolution,
                )
            })
            .collect()
    }
}

/// The ISM vertex gradient averaged over a camera batch, plus a scalar proxy
/// (mean squared latent gradient) for logging.
#[allow(clippy::too_many_arguments)]
pub fn ism_vertex_gradient(
    mesh: &TriMesh,
    field: &dyn GuidanceField,
    cameras: &[CameraView],
    t: u32,
    y: &ConditionToken,
    w_t: f64,
    schedule: &IsmSchedule,
    latent_factor: usize,
) -> Result<(f64, Vec<Vec3>)> {
    let s = t.saturating_sub(schedule.interval);
    let per_view: Vec<(f64, Vec<Vec3>)> = cameras
        .par_iter()
        .map(|cam| {
            let render = render_normal_map(mesh, cam);
            let x0 = encode_latent(&render.to_image(), latent_factor)?;
            let g = ism_gradient(field, &x0, t, s, y, w_t, schedule)?;
            let proxy = g.dot(&g)? / g.data.len().max(1) as f64;
            let img_grad = decode_gradient(&g, latent_factor)?.to_vec3()?;
            Ok((proxy, backprop_normal_render(&render, mesh, &img_grad)?))
        })
        .collect::<Result<_>>()?;
    let k = 1.0 / cameras.len().max(1) as f64;
    let mut grad = vec![Vec3::zeros(); mesh.vertices.len()];
    let mut proxy = 0.0;
    for (p, g) in &per_view {
        proxy += k * p;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += k * gi;
        }
    }
    Ok((proxy, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives;

    fn latent(seed: u64) -> LatentImage {
        LatentImage::from_fn(4, 5, 3, |y, x, c| {
            ((y * 31 + x * 7 + c * 3) as f64 + seed as f64).sin()
        })
    }

    fn front_ortho(res: usize, half: f64) -> CameraView {
        CameraView::orbit(
            Vec3::zeros(),
            3.0,
            0.0,
            0.0,
            Projection::Orthographic { half_height: half },
            res,
            res,
        )
        .unwrap()
    }

    #[test]
    fn zero_field_inversion_is_identity() {
        let x0 = latent(1);
        for t in [1, 500, 1000] {
            assert_eq!(invert_trajectory(&ZeroField, &x0, t, 7).unwrap(), x0);
        }
    }

    #[test]
    fn constant_field_inversion_is_exact() {
        let x0 = latent(2);
        let f = ConstantField {
            per_channel: vec![0.5, -1.0, 2.0],
        };
        let xt = invert_trajectory(&f, &x0, 400, 4).unwrap();
        for (i, v) in xt.data.iter().enumerate() {
            let expect = x0.data[i] + 0.4 * f.per_channel[i % 3];
            assert!((v - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_field_converges_first_order() {
        // A = -a I + w J generates a damped rotation in the xy plane and decay in z
        let (a, w, b) = (0.7, 2.0, 1.3);
        let field = LinearField {
            a: Matrix3::new(-a, -w, 0.0, w, -a, 0.0, 0.0, 0.0, -b),
        };
        let x0 = latent(3);
        let tau: f64 = 0.8;
        let exact: Vec<f64> = x0
            .data
            .chunks_exact(3)
            .flat_map(|p| {
                let r = (-a * tau).exp();
                let (c, s) = ((w * tau).cos(), (w * tau).sin());
                [
                    r * (c * p[0] - s * p[1]),
                    r * (s * p[0] + c * p[1]),
                    (-b * tau).exp() * p[2],
                ]
            })
            .collect();
        let mut prev = f64::INFINITY;
        let mut errs = vec![];
        for steps in [10, 20, 40, 80, 160] {
            let xt = invert_trajectory(&field, &x0, 800, steps).unwrap();
            let err = xt
                .data
                .iter()
                .zip(&exact)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max);
            assert!(err < prev);
            prev = err;
            errs.push(err);
        }
        for pair in errs.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn inversion_preconditions() {
        let x0 = latent(0);
        assert!(invert_trajectory(&ZeroField, &x0, 0, 3).is_err());
        assert!(invert_trajectory(&ZeroField, &x0, 1001, 3).is_err());
        assert!(invert_trajectory(&ZeroField, &x0, 10, 0).is_err());
        let y = ConditionToken::new("y");
        let sched = IsmSchedule::default();
        assert!(ism_gradient(&ZeroField, &x0, 100, 100, &y, 1.0, &sched).is_err());
    }

    #[test]
    fn ism_constant_offset_is_exact() {
        let y = ConditionToken::new("shirt");
        let delta = vec![0.3, -0.1, 0.25];
        let field = ConditionalOffset {
            base: ZeroField,
            cond: y.clone(),
            delta: delta.clone(),
        };
        let x0 = latent(4);
        let g = ism_gradient(&field, &x0, 700, 650, &y, 1.5, &IsmSchedule::default()).unwrap();
        for (i, v) in g.data.iter().enumerate() {
            assert_eq!(*v, 1.5 * delta[i % 3]);
        }
        let zero = ism_gradient(&field, &x0, 700, 650, &y, 0.0, &IsmSchedule::default()).unwrap();
        assert!(zero.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ism_point_attractor_direction() {
        let y = ConditionToken::new("dress");
        let a0 = LatentImage::from_fn(4, 4, 3, |yy, x, c| 0.1 * (yy + x + c) as f64);
        let ay = LatentImage::from_fn(4, 4, 3, |yy, x, c| ((yy * 5 + x * 3 + c) as f64).cos());
        let field = PointAttractor {
            unconditional: a0.clone(),
            anchors: vec![(y.clone(), ay.clone())],
        };
        let x0 = LatentImage::from_fn(4, 4, 3, |yy, x, c| 0.05 * (yy as f64 - x as f64 + c as f64));
        let g = ism_gradient(&field, &x0, 520, 510, &y, 1.0, &IsmSchedule::default()).unwrap();
        let expect = ay.axpy(-1.0, &a0).unwrap();
        let cos = g.dot(&expect).unwrap() / (g.norm() * expect.norm());
        assert!(cos > 0.99, "cos {cos}");
    }

    #[test]
    fn encode_identity_and_constant() {
        let img = latent(5);
        assert_eq!(encode_latent(&img, 1).unwrap(), img);
        let c = LatentImage::from_fn(8, 8, 2, |_, _, ch| 0.5 + ch as f64);
        let e = encode_latent(&c, 4).unwrap();
        assert_eq!((e.height, e.width), (2, 2));
        for (i, v) in e.data.iter().enumerate() {
            assert!((v - (0.5 + (i % 2) as f64)).abs() < 1e-15);
        }
        assert!(encode_latent(&img, 3).is_err());
    }

    #[test]
    fn decode_is_adjoint_of_encode() {
        let a = LatentImage::from_fn(12, 8, 3, |y, x, c| {
            ((y * 13 + x * 5 + c) as f64 * 0.37).sin()
        });
        let b = LatentImage::from_fn(3, 2, 3, |y, x, c| {
            ((y * 7 + x * 11 + c) as f64 * 0.91).cos()
        });
        let lhs = encode_latent(&a, 4).unwrap().dot(&b).unwrap();
        let rhs = a.dot(&decode_gradient(&b, 4).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn quad_renders_plus_z() {
        let quad = primitives::uv_grid(2, 2, 1.0, 1.0);
        let r = render_normal_map(&quad, &front_ortho(32, 1.0));
        assert!(r.foreground() > 0);
        for (n, p) in r.normals.iter().zip(&r.provenance) {
            if p.is_some() {
                assert!((n - Vec3::z()).norm() < 1e-12);
            } else {
                assert_eq!(*n, Vec3::zeros());
            }
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let s = primitives::icosphere(4);
        let cam = CameraView::orbit(
            Vec3::zeros(),
            3.0,
            20.0,
            10.0,
            Projection::Perspective { fov_y_deg: 50.0 },
            64,
            64,
        )
        .unwrap();
        let r = render_normal_map(&s, &cam);
        let mut worst: f64 = 0.0;
        for (n, p) in r.normals.iter().zip(&r.provenance) {
            let Some((f, b)) = p else { continue };
            let [a, bb, c] = s.corners(*f);
            let hit = b[0] * a + b[1] * bb + b[2] * c;
            assert!((n.norm() - 1.0).abs() < 1e-6);
            worst = worst.max((n - hit.normalize()).norm());
        }
        assert!(worst < 2e-2, "{worst}");
    }

    #[test]
    fn zero_image_gradient_gives_zero() {
        let s = primitives::icosphere(1);
        let r = render_normal_map(&s, &front_ortho(16, 1.2));
        let g = backprop_normal_render(&r, &s, &vec![Vec3::zeros(); 256]).unwrap();
        assert!(g.iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn normal_render_backprop_matches_finite_differences() {
        let mut m = primitives::hex_patch(1.0);
        m.vertices[0].z = 0.3;
        m.vertices[2].z = -0.2;
        let r = render_normal_map(&m, &front_ortho(24, 1.2));
        let weights: Vec<Vec3> = (0..r.normals.len())
            .map(|i| Vec3::new((i as f64 * 0.3).sin(), (i as f64 * 0.7).cos(), 0.5))
            .collect();
        let loss = |mesh: &TriMesh| -> f64 {
            shade_with_provenance(mesh, &r.provenance)
                .iter()
                .zip(&weights)
                .map(|(n, w)| n.dot(w))
                .sum()
        };
        let g = backprop_normal_render(&r, &m, &weights).unwrap();
        let h = 1e-6;
        for v in 0..m.vertices.len() {
            for k in 0..3 {
                let mut p = m.clone();
                p.vertices[v][k] += h;
                let mut q = m.clone();
                q.vertices[v][k] -= h;
                let fd = (loss(&p) - loss(&q)) / (2.0 * h);
                let err = (fd - g[v][k]).abs() / fd.abs().max(g[v][k].abs()).max(1e-3);
                assert!(err < 1e-4, "v{v} k{k}: fd {fd} analytic {}", g[v][k]);
            }
        }
    }

    #[test]
    fn target_guidance_zero_at_target() {
        let s = primitives::icosphere(2);
        let g = target_shape_guidance(&s, &s, 500, 9).unwrap();
        assert!(g.value < 1e-24);
        assert!(g.grad.iter().map(|v| v.norm()).sum::<f64>() < 1e-6);
    }

    #[test]
    fn target_guidance_pulls_back() {
        let s = primitives::icosphere(2);
        let moved = crate::primitives::transformed(&s, |p| p + Vec3::new(0.1, 0.0, 0.0));
        let g = target_shape_guidance(&moved, &s, 2000, 3).unwrap();
        let total: Vec3 = g.grad.iter().sum();
        assert!(total.x > 0.0);
        assert!(total.x.abs() > 5.0 * total.y.abs().max(total.z.abs()));
    }

    #[test]
    fn guidance_cameras_in_range() {
        use rand::SeedableRng;
        let cfg = GuidanceCameras {
            resolution: 8,
            ..Default::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let cams = cfg.sample(&mut rng, Vec3::zeros()).unwrap();
        assert_eq!(cams.len(), 4);
        for c in cams {
            assert!((c.position.norm() - 3.0).abs() < 1e-12);
            let el = (c.position.y / 3.0).asin().to_degrees();
            assert!((-15.0..=30.0).contains(&el));
        }
    }
}
