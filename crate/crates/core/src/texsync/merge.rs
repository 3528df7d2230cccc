use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::LatentImage;

use super::correspondence::{aggregate, backproject, project_texture, view_weights, ViewCorrespondence, WeightTable};
use super::reweight::reweight_side_views;
use super::{LatentTexture, LatentViews};

/// Predicts the clean latent of one view from its noisy latent at timestep
/// `t` (0..=1000).
pub trait Denoiser: Send + Sync {
    fn denoise(&self, z: &LatentImage, t: f64, view: usize) -> Result<LatentImage>;
}

fn target_for(targets: &LatentViews, view: usize) -> Result<&LatentImage> {
    targets
        .get(view)
        .ok_or_else(|| Error::Shape(format!("no target for view {view}")))
}

/// Always returns a fixed image per view.
#[derive(Debug, Clone)]
pub struct ConstantTarget {
    pub targets: LatentViews,
}

impl Denoiser for ConstantTarget {
    fn denoise(&self, _z: &LatentImage, _t: f64, view: usize) -> Result<LatentImage> {
        target_for(&self.targets, view).cloned()
    }
}

/// A fixed image per view plus a constant per-channel bias that differs by
/// view.
#[derive(Debug, Clone)]
pub struct ViewBiased {
    pub base: LatentViews,
    pub bias: Vec<Vec<f64>>,
}

impl Denoiser for ViewBiased {
    fn denoise(&self, _z: &LatentImage, _t: f64, view: usize) -> Result<LatentImage> {
        let base = target_for(&self.base, view)?;
        let b = self
            .bias
            .get(view)
            .filter(|b| b.len() == base.channels)
            .ok_or_else(|| Error::Shape(format!("bias for view {view} has the wrong length")))?;
        let data = base.data.iter().enumerate().map(|(i, x)| x + b[i % base.channels]).collect();
        Ok(LatentImage { data, ..base.clone() })
    }
}

/// A fixed image per view plus Gaussian noise drawn from `(seed, view, t)`;
/// `t` is resolved to 1e-3 timesteps.
#[derive(Debug, Clone)]
pub struct NoiseContaminated {
    pub base: LatentViews,
    pub sigma: f64,
    pub seed: u64,
}

impl Denoiser for NoiseContaminated {
    fn denoise(&self, _z: &LatentImage, t: f64, view: usize) -> Result<LatentImage> {
        let base = target_for(&self.base, view)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((view as u64) << 32) | (t * 1000.0).round() as u64);
        let data = base
            .data
            .iter()
            .map(|x| {
                let n: f64 = StandardNormal.sample(&mut rng);
                x + self.sigma * n
            })
            .collect();
        Ok(LatentImage { data, ..base.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    pub steps: usize,
    pub seed: u64,
    pub channels: usize,
    /// Exponent `k` of the view weight `max(cos, 0)^k`.
    pub alpha_power: f64,
    pub front: usize,
    pub back: Option<usize>,
    /// Apply the front/back side-view reweighting.
    pub reweight: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            steps: 20,
            seed: 0,
            channels: 3,
            alpha_power: 1.0,
            front: 0,
            back: None,
            reweight: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MergeResult {
    pub texture: LatentTexture,
    pub views: LatentViews,
    /// Cross-view spread of the noisy latents at the start of every step,
    /// then of the final views.
    pub spread: Vec<f64>,
    pub weights: WeightTable,
}

/// Largest disagreement between views: over texels seen by at least two
/// views and over channels, the range of the back-projected values.
pub fn cross_view_spread(corr: &ViewCorrespondence, views: &LatentViews) -> f64 {
    let channels = views.first().map_or(0, |v| v.channels);
    corr.observations
        .par_iter()
        .filter(|obs| obs.len() >= 2)
        .map(|obs| {
            let mut lo = vec![f64::INFINITY; channels];
            let mut hi = vec![f64::NEG_INFINITY; channels];
            let mut buf = vec![0.0; channels];
            for o in obs {
                backproject(o, &views[o.view], &mut buf);
                for c in 0..channels {
                    lo[c] = lo[c].min(buf[c]);
                    hi[c] = hi[c].max(buf[c]);
                }
            }
            (0..channels).map(|c| hi[c] - lo[c]).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

fn noise_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> LatentImage {
    let data = (0..h * w * c).map(|_| StandardNormal.sample(&mut *rng)).collect();
    LatentImage {
        height: h,
        width: w,
        channels: c,
        data,
    }
}

/// Synchronized denoising: per step, denoise every view, aggregate into the
/// shared texture, reproject, then move to the next noise level along a
/// linear schedule.
pub fn cyclic_merge_run(denoiser: &dyn Denoiser, corr: &ViewCorrespondence, config: &MergeConfig) -> Result<MergeResult> {
    if config.steps == 0 || config.channels == 0 {
        return Err(Error::InvalidArgument("merge needs at least one step and one channel".into()));
    }
    if corr.cameras.is_empty() {
        return Err(Error::InvalidArgument("merge needs at least one view".into()));
    }
    let c = config.channels;
    let (h, w) = (corr.cameras[0].height, corr.cameras[0].width);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut texture = LatentTexture::empty(corr.texture_size, c);
    for (t, sample) in corr.texels.iter().enumerate() {
        if sample.is_some() {
            texture.valid[t] = true;
            for x in texture.texel_mut(t) {
                *x = StandardNormal.sample(&mut rng);
            }
        }
    }
    let background: LatentViews = (0..corr.view_count()).map(|_| noise_image(&mut rng, h, w, c)).collect();
    let (mut z, _) = project_texture(corr, &texture, &background)?;

    let raw = view_weights(corr, config.alpha_power);
    let weights = if config.reweight {
        reweight_side_views(&raw, config.front, config.back)
    } else {
        raw
    };

    let mut spread = Vec::with_capacity(config.steps + 1);
    for k in 0..config.steps {
        let tau = 1.0 - k as f64 / config.steps as f64;
        let tau_next = 1.0 - (k + 1) as f64 / config.steps as f64;
        spread.push(cross_view_spread(corr, &z));

        let z0: LatentViews = z
            .par_iter()
            .enumerate()
            .map(|(v, zv)| {
                let out = denoiser.denoise(zv, tau * 1000.0, v)?;
                if !out.same_shape(zv) {
                    return Err(Error::Shape(format!("denoiser changed the shape of view {v}")));
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        texture = aggregate(corr, &weights, &z0)?;
        let (merged, _) = project_texture(corr, &texture, &z0)?;

        z = if tau_next > 0.0 {
            z.iter()
                .zip(&merged)
                .map(|(zv, m)| {
                    let eps = zv.axpy(-(1.0 - tau), m)?.scale(1.0 / tau);
                    m.scale(1.0 - tau_next).axpy(tau_next, &eps)
                })
                .collect::<Result<_>>()?
        } else {
            merged
        };
    }
    spread.push(cross_view_spread(corr, &z));
    Ok(MergeResult {
        texture,
        views: z,
        spread,
        weights,
    })
}
