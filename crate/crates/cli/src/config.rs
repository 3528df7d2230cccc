use std::fs;
use std::path::{Path, PathBuf};

use drape::optimize::{DeformConfig, GuidanceConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformRun {
    pub template: PathBuf,
    pub body: PathBuf,
    /// JSON list of blocking cylinders; none when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cylinders: Option<PathBuf>,
    #[serde(default)]
    pub deform: DeformConfig,
}

impl DeformRun {
    pub fn example() -> Self {
        DeformRun {
            template: "template.obj".into(),
            body: "body.obj".into(),
            cylinders: Some("cylinders.json".into()),
            deform: DeformConfig::default(),
        }
    }

    fn resolve(&mut self, base: &Path) {
        self.template = join(base, &self.template);
        self.body = join(base, &self.body);
        if let Some(c) = &mut self.cylinders {
            *c = join(base, c);
        }
        if let GuidanceConfig::TargetShape { target, .. } = &mut self.deform.guidance {
            *target = join(base, target);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeSettings {
    pub steps: usize,
    pub seed: u64,
    pub alpha_power: f64,
    pub reweight: bool,
}

impl Default for MergeSettings {
    fn default() -> Self {
        let m = drape::texsync::MergeConfig::default();
        MergeSettings {
            steps: m.steps,
            seed: m.seed,
            alpha_power: m.alpha_power,
            reweight: m.reweight,
        }
    }
}

/// Mock denoisers; each predicts views of a reference texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSettings {
    ConstantTarget,
    /// One RGB offset per view.
    ViewBiased { bias: Vec<[f64; 3]> },
    NoiseContaminated { sigma: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TexsyncRun {
    pub mesh: PathBuf,
    /// Reference texture (PNG, square). A built-in smooth pattern when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(default = "default_views")]
    pub n_views: usize,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_texture_size")]
    pub texture_size: usize,
    #[serde(default = "default_rig_radius")]
    pub rig_radius: f64,
    #[serde(default = "default_fov")]
    pub fov_y_deg: f64,
    #[serde(default = "default_tolerance")]
    pub depth_tolerance: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_true")]
    pub fill_voids: bool,
    /// 8 or 16.
    #[serde(default = "default_png_bits")]
    pub png_bits: u8,
    #[serde(default)]
    pub dump_correspondence: bool,
    #[serde(default)]
    pub merge: MergeSettings,
    #[serde(default = "default_denoiser")]
    pub denoiser: DenoiserSettings,
}

fn default_views() -> usize {
    6
}
fn default_resolution() -> usize {
    512
}
fn default_texture_size() -> usize {
    1024
}
fn default_rig_radius() -> f64 {
    3.5
}
fn default_fov() -> f64 {
    45.0
}
fn default_tolerance() -> f64 {
    drape::texsync::DEFAULT_DEPTH_TOLERANCE
}
fn default_true() -> bool {
    true
}
fn default_png_bits() -> u8 {
    8
}
fn default_denoiser() -> DenoiserSettings {
    DenoiserSettings::ConstantTarget
}

impl TexsyncRun {
    pub fn example() -> Self {
        toml::from_str("mesh = \"mesh.obj\"").expect("defaults parse")
    }

    fn resolve(&mut self, base: &Path) {
        self.mesh = join(base, &self.mesh);
        if let Some(r) = &mut self.reference {
            *r = join(base, r);
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_views < 2 {
            return Err(format!("n_views must be at least 2 (got {})", self.n_views));
        }
        if self.resolution == 0 || self.texture_size == 0 {
            return Err("resolution and texture_size must be positive".into());
        }
        if !(self.rig_radius > 0.0) || !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err("rig_radius must be positive and fov_y_deg in (0, 180)".into());
        }
        if !(self.depth_tolerance > 0.0) {
            return Err("depth_tolerance must be positive".into());
        }
        if self.png_bits != 8 && self.png_bits != 16 {
            return Err(format!("png_bits must be 8 or 16 (got {})", self.png_bits));
        }
        if self.merge.steps == 0 {
            return Err("merge.steps must be at least 1".into());
        }
        if !(self.merge.alpha_power > 0.0) {
            return Err("merge.alpha_power must be positive".into());
        }
        match &self.denoiser {
            DenoiserSettings::ViewBiased { bias } if bias.len() != self.n_views => Err(format!(
                "denoiser.bias needs one entry per view ({} given, {} views)",
                bias.len(),
                self.n_views
            )),
            DenoiserSettings::NoiseContaminated { sigma, .. } if !(*sigma >= 0.0) => {
                Err("denoiser.sigma must be non-negative".into())
            }
            _ => Ok(()),
        }
    }
}

fn join(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a TOML or JSON config (by extension; JSON also for manifests).
/// Relative paths inside are taken relative to the file.
fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        // a run manifest carries the resolved config of its run
        let value = match value.get("manifest_version") {
            Some(_) => value.get("config").cloned().unwrap_or(serde_json::Value::Null),
            None => value,
        };
        serde_json::from_value(value).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }
}

fn base_dir(path: &Path) -> PathBuf {
    let dir = path.parent().unwrap_or(Path::new("."));
    let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
    fs::canonicalize(dir).unwrap_or_else(|_| dir.to_path_buf())
}

pub fn load_deform(path: &Path) -> Result<DeformRun, Failure> {
    let mut run: DeformRun = read_document(path)?;
    run.resolve(&base_dir(path));
    Ok(run)
}

pub fn load_texsync(path: &Path) -> Result<TexsyncRun, Failure> {
    let mut run: TexsyncRun = read_document(path)?;
    run.resolve(&base_dir(path));
    Ok(run)
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string_pretty(value).expect("config serializes")
}
