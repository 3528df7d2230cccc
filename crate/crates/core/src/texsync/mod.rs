//! Multi-view texture synchronization: texel/pixel correspondence, weighted
//! aggregation into a shared texture, cyclic latent merging, symmetric
//! attention bias and UV void filling.

mod attention;
mod correspondence;
mod export;
mod fill;
mod merge;
mod reweight;
mod rig;

pub use attention::{apply_biased_attention, symmetric_attention_bias, ATTENTION_FLOOR};
pub use correspondence::{
    aggregate, backproject, project_texture, rasterize_correspondence, texel_visibility, view_weights,
    Observation, PixelSample, TexelSample, ViewCorrespondence, Visibility, WeightTable, DEFAULT_DEPTH_TOLERANCE,
};
pub use export::{save_correspondence_dump, save_texture_png, save_view_png, PngDepth};
pub use fill::{fill_uv_voids, FillReport};
pub use merge::{
    cross_view_spread, cyclic_merge_run, ConstantTarget, Denoiser, MergeConfig, MergeResult, NoiseContaminated,
    ViewBiased,
};
pub use reweight::{reweight_side_views, reweight_texel};
pub use rig::{make_equatorial_rig, Rig};

/// A T x T x C texel grid with a validity mask. Texel `(row, col)` sits at
/// UV `((col + 0.5) / T, (row + 0.5) / T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTexture {
    pub size: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl LatentTexture {
    pub fn empty(size: usize, channels: usize) -> Self {
        LatentTexture {
            size,
            channels,
            data: vec![0.0; size * size * channels],
            valid: vec![false; size * size],
        }
    }

    pub fn texel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn texel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn texel_count(&self) -> usize {
        self.size * self.size
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Per-view latent images sharing one shape.
pub type LatentViews = Vec<crate::guidance::LatentImage>;
