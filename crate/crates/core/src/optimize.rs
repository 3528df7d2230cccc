//! Adam over the per-face Jacobians, driven by guidance and geometric losses.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{
    ism_vertex_gradient, target_shape_guidance, ConditionToken, GuidanceCameras, GuidanceField,
    IsmSchedule,
};
use crate::losses::{total_geometry_loss, BlockingCylinder, LossBreakdown, LossWeights};
use crate::mesh::{sample_surface, save_mesh, Normalization, TriMesh, Vec3};
use crate::njf::{build_poisson_system, JacobianField};
use crate::spatial::{build_body_sdf, BodySdf};

/// Bias-corrected Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam state {} / params {} / grads {}",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("gradient entry {i}"),
        });
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Timestep bounds by iteration: a high-noise phase, then the full range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimestepSchedule {
    pub switch_iteration: usize,
    pub early: (u32, u32),
    pub late: (u32, u32),
}

impl Default for TimestepSchedule {
    fn default() -> Self {
        TimestepSchedule {
            switch_iteration: 300,
            early: (500, 980),
            late: (50, 980),
        }
    }
}

impl TimestepSchedule {
    pub fn range(&self, iteration: usize) -> (u32, u32) {
        if iteration < self.switch_iteration {
            self.early
        } else {
            self.late
        }
    }
}

pub fn timestep_range(iteration: usize) -> (u32, u32) {
    TimestepSchedule::default().range(iteration)
}

/// Which guidance drives the deformation besides the geometric losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuidanceConfig {
    #[default]
    None,
    /// Chamfer pull toward a target mesh file.
    TargetShape {
        target: PathBuf,
        #[serde(default = "default_guidance_weight")]
        weight: f64,
        #[serde(default = "default_target_samples")]
        samples: usize,
    },
    /// Constant per-channel offset between conditional and unconditional
    /// velocities on top of a zero drift.
    ConstantOffset {
        delta: [f64; 3],
        #[serde(default = "default_guidance_weight")]
        weight: f64,
    },
}

fn default_guidance_weight() -> f64 {
    1.0
}

fn default_target_samples() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_points: usize,
    pub weights: LossWeights,
    pub timesteps: TimestepSchedule,
    pub seed: u64,
    pub enable_sym: bool,
    /// Rescale garment, body and cylinders so the garment fits [-1, 1]^3.
    pub normalize: bool,
    pub checkpoint_every: usize,
    pub guidance: GuidanceConfig,
    pub ism: IsmSchedule,
    pub cameras: GuidanceCameras,
}

impl Default for DeformConfig {
    fn default() -> Self {
        DeformConfig {
            iterations: 600,
            learning_rate: 0.002,
            batch_size: 4,
            n_points: 50_000,
            weights: LossWeights::default(),
            timesteps: TimestepSchedule::default(),
            seed: 0,
            enable_sym: false,
            normalize: true,
            checkpoint_every: 100,
            guidance: GuidanceConfig::None,
            ism: IsmSchedule::default(),
            cameras: GuidanceCameras::default(),
        }
    }
}

impl DeformConfig {
    /// Checks ranges; the error message starts with the offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.iterations == 0 {
            return Err("iterations must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(format!(
                "learning_rate must be positive (got {})",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if self.n_points == 0 {
            return Err("n_points must be at least 1".into());
        }
        self.weights
            .validate()
            .map_err(|e| format!("weights.{e}"))?;
        for (name, (lo, hi)) in [
            ("timesteps.early", self.timesteps.early),
            ("timesteps.late", self.timesteps.late),
        ] {
            if lo > hi || hi > 1000 {
                return Err(format!(
                    "{name} must satisfy lo <= hi <= 1000 (got {lo}, {hi})"
                ));
            }
        }
        if self.ism.inversion_steps == 0 || self.ism.interval_substeps == 0 {
            return Err("ism.inversion_steps and ism.interval_substeps must be at least 1".into());
        }
        if self.cameras.resolution == 0
            || self.cameras.latent_factor == 0
            || self.cameras.resolution % self.cameras.latent_factor != 0
        {
            return Err("cameras.latent_factor must divide cameras.resolution".into());
        }
        match &self.guidance {
            GuidanceConfig::TargetShape {
                weight, samples, ..
            } => {
                if !(*weight >= 0.0) || *samples == 0 {
                    return Err(
                        "guidance.weight must be non-negative and guidance.samples positive".into(),
                    );
                }
            }
            GuidanceConfig::ConstantOffset { weight, delta } => {
                if !weight.is_finite() || delta.iter().any(|d| !d.is_finite()) {
                    return Err("guidance.delta and guidance.weight must be finite".into());
                }
            }
            GuidanceConfig::None => {}
        }
        Ok(())
    }
}

/// Resolved guidance for a run, in the normalized frame.
pub enum Guidance<'a> {
    None,
    TargetShape {
        target: TriMesh,
        weight: f64,
        samples: usize,
    },
    Field {
        field: &'a dyn GuidanceField,
        cond: ConditionToken,
        weight: f64,
    },
}

/// One row of the per-iteration loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Guidance objective value or, for vector-field guidance, the mean
    /// squared latent gradient.
    pub guidance: f64,
    pub terms: LossBreakdown,
    /// Weighted geometric objective.
    pub total: f64,
}

pub const TRACE_HEADER: &str = "iteration,L_ISM_proxy,L_coll,L_blk,L_sym,L_lap,L_nc,total";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            r.iteration,
            r.guidance,
            r.terms.coll,
            r.terms.blk,
            r.terms.sym,
            r.terms.lap,
            r.terms.nc,
            r.total
        ));
    }
    s
}

/// Seeds that determine every random draw of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub base_seed: u64,
    /// Surface samples of iteration `i` use `base_seed + i`; guidance draws
    /// use the same seed on a separate stream.
    pub sample_seed_rule: String,
}

/// Optimizer state sufficient to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Number of completed iterations.
    pub completed: usize,
    pub jacobians: Vec<f64>,
    pub adam: AdamState,
    pub traces: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct DeformResult {
    /// Final mesh in the input frame.
    pub mesh: TriMesh,
    pub traces: Vec<TraceRow>,
    pub seeds: SeedRecord,
    pub normalization: Normalization,
    pub checkpoint: Checkpoint,
}

/// Side outputs of a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for periodic checkpoints and failure dumps.
    pub run_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.json")
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Frame in which the optimization runs.
pub struct Scene {
    pub template: TriMesh,
    pub sdf: BodySdf,
    pub cylinders: Vec<BlockingCylinder>,
    pub normalization: Normalization,
}

impl Scene {
    pub fn prepare(
        template: &TriMesh,
        body: &TriMesh,
        cylinders: &[BlockingCylinder],
        normalize: bool,
    ) -> Result<Self> {
        let normalization = if normalize {
            Normalization::fit(template)?
        } else {
            Normalization::identity()
        };
        Ok(Scene {
            template: normalization.apply(template),
            sdf: build_body_sdf(&normalization.apply(body))?,
            cylinders: cylinders
                .iter()
                .map(|c| c.transformed(&normalization))
                .collect(),
            normalization,
        })
    }
}

pub fn run_deformation(
    template: &TriMesh,
    body: &TriMesh,
    cylinders: &[BlockingCylinder],
    config: &DeformConfig,
    guidance: &Guidance,
    options: &RunOptions,
) -> Result<DeformResult> {
    config.validate().map_err(Error::InvalidArgument)?;
    let scene = Scene::prepare(template, body, cylinders, config.normalize)?;
    let guidance = match guidance {
        Guidance::TargetShape {
            target,
            weight,
            samples,
        } => Guidance::TargetShape {
            target: scene.normalization.apply(target),
            weight: *weight,
            samples: *samples,
        },
        Guidance::Field {
            field,
            cond,
            weight,
        } => Guidance::Field {
            field: *field,
            cond: cond.clone(),
            weight: *weight,
        },
        Guidance::None => Guidance::None,
    };
    let system = build_poisson_system(&scene.template)?;
    let faces = scene.template.faces.len();

    let (mut jac, mut adam, mut traces, start) = match &options.resume {
        Some(cp) => {
            if cp.jacobians.len() != 9 * faces || cp.adam.m.len() != 9 * faces {
                return Err(Error::Shape(
                    "checkpoint does not match the template".into(),
                ));
            }
            (
                cp.jacobians.clone(),
                cp.adam.clone(),
                cp.traces.clone(),
                cp.completed,
            )
        }
        None => (
            JacobianField::identity(faces).to_flat(),
            AdamState::new(9 * faces, config.learning_rate),
            Vec::with_capacity(config.iterations),
            0,
        ),
    };
    if let Some(dir) = &options.run_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for it in start..config.iterations {
        let field = JacobianField::from_flat(&jac)?;
        let vertices = system.solve_deformation(&field)?;
        let mesh = scene.template.with_positions(vertices);
        let iter_seed = config.seed.wrapping_add(it as u64);

        let mut dv = vec![Vec3::zeros(); mesh.vertices.len()];
        let guidance_value = match &guidance {
            Guidance::None => 0.0,
            Guidance::TargetShape {
                target,
                weight,
                samples,
            } => {
                let g = target_shape_guidance(&mesh, target, *samples, iter_seed)?;
                accumulate(&mut dv, &g.grad, *weight, "guidance", it)?;
                weight * g.value
            }
            Guidance::Field {
                field,
                cond,
                weight,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(iter_seed);
                rng.set_stream(1);
                let (lo, hi) = config.timesteps.range(it);
                let t = rand::Rng::random_range(&mut rng, lo.max(1)..=hi.max(1));
                let cams = GuidanceCameras {
                    batch: config.batch_size,
                    ..config.cameras
                }
                .sample(&mut rng, mesh.area_centroid())?;
                let (proxy, g) = ism_vertex_gradient(
                    &mesh,
                    *field,
                    &cams,
                    t,
                    cond,
                    1.0,
                    &config.ism,
                    config.cameras.latent_factor,
                )?;
                accumulate(&mut dv, &g, *weight, "L_ISM", it)?;
                proxy
            }
        };

        let samples = sample_surface(&mesh, config.n_points, iter_seed)?;
        let geo = total_geometry_loss(
            &mesh,
            &samples,
            &scene.sdf,
            &scene.cylinders,
            &config.weights,
            config.enable_sym,
        )?;
        for (name, g) in ["L_coll", "L_blk", "L_sym", "L_lap", "L_nc"]
            .iter()
            .zip(&geo.term_grads)
        {
            accumulate(&mut dv, g, 1.0, name, it)?;
        }
        if !geo.total.is_finite() {
            let err = Error::NonFinite {
                what: format!("geometric loss at iteration {it}: {:?}", geo.terms),
            };
            dump_failure(options, it, &jac, &adam, &traces);
            return Err(err);
        }
        traces.push(TraceRow {
            iteration: it,
            guidance: guidance_value,
            terms: geo.terms,
            total: geo.total,
        });

        let dj = system.backprop_deformation(&dv)?.to_flat();
        if let Err(e) = adam_step(&mut adam, &mut jac, &dj) {
            dump_failure(options, it, &jac, &adam, &traces);
            return Err(e);
        }

        if it % 50 == 0 {
            log::info!("iteration {it}: total {:.6e} {:?}", geo.total, geo.terms);
        }
        if let Some(dir) = &options.run_dir {
            let done = it + 1;
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
                let cp = Checkpoint {
                    completed: done,
                    jacobians: jac.clone(),
                    adam: adam.clone(),
                    traces: traces.clone(),
                };
                write_json(&checkpoint_path(dir), &cp)?;
                let snapshot = scene.normalization.invert(&mesh);
                save_mesh(&snapshot, dir.join(format!("mesh_{done:04}.obj")))?;
            }
        }
    }

    let vertices = system.solve_deformation(&JacobianField::from_flat(&jac)?)?;
    let mesh = scene
        .normalization
        .invert(&scene.template.with_positions(vertices));
    Ok(DeformResult {
        mesh,
        seeds: SeedRecord {
            base_seed: config.seed,
            sample_seed_rule: "base_seed + iteration".into(),
        },
        normalization: scene.normalization,
        checkpoint: Checkpoint {
            completed: config.iterations.max(start),
            jacobians: jac,
            adam,
            traces: traces.clone(),
        },
        traces,
    })
}

fn accumulate(dv: &mut [Vec3], g: &[Vec3], weight: f64, term: &str, it: usize) -> Result<()> {
    if let Some(v) = g
        .iter()
        .position(|x| !(x.x.is_finite() && x.y.is_finite() && x.z.is_finite()))
    {
        return Err(Error::NonFinite {
            what: format!("{term} gradient at vertex {v}, iteration {it}"),
        });
    }
    for (acc, x) in dv.iter_mut().zip(g) {
        *acc += weight * x;
    }
    Ok(())
}

fn dump_failure(
    options: &RunOptions,
    it: usize,
    jac: &[f64],
    adam: &AdamState,
    traces: &[TraceRow],
) {
    let Some(dir) = &options.run_dir else { return };
    let cp = Checkpoint {
        completed: it,
        jacobians: jac.to_vec(),
        adam: adam.clone(),
        traces: traces.to_vec(),
    };
    let path = dir.join(format!("failure_{it:04}.json"));
    if let Err(e) = write_json(&path, &cp) {
        log::error!("could not write failure dump: {e}");
    }
}

/// Fraction of surface samples inside the body (`d < 0`) and the deepest
/// axial penetration into any blocking cylinder.
pub fn penetration_stats(
    mesh: &TriMesh,
    sdf: &BodySdf,
    cylinders: &[BlockingCylinder],
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let samples = sample_surface(mesh, n, seed)?;
    let inside = samples
        .positions
        .iter()
        .filter(|p| sdf.signed_distance(p) < 0.0)
        .count();
    let depth = samples
        .positions
        .iter()
        .flat_map(|p| cylinders.iter().filter_map(move |c| c.depth(p)))
        .fold(0.0, f64::max);
    Ok((inside as f64 / n as f64, depth))
}
