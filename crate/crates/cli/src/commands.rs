use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use drape::camera::{CameraView, Projection};
use drape::guidance::{render_normal_map, ConditionToken, ConditionalOffset, LatentImage, ZeroField};
use drape::losses::load_cylinders;
use drape::optimize::{load_checkpoint, run_deformation, trace_csv, Guidance, GuidanceConfig, RunOptions};
use drape::texsync::{
    cyclic_merge_run, fill_uv_voids, make_equatorial_rig, project_texture, rasterize_correspondence,
    save_correspondence_dump, save_texture_png, save_view_png, ConstantTarget, Denoiser, LatentTexture, MergeConfig,
    NoiseContaminated, PngDepth, ViewBiased,
};
use drape::{load_mesh, save_mesh, Normalization, TriMesh, Vec3};
use serde_json::json;

use crate::config::{DeformRun, DenoiserSettings, TexsyncRun};
use crate::failure::Failure;
use crate::manifest::RunManifest;

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_mesh(path: &Path) -> Result<TriMesh, Failure> {
    load_mesh(path).map_err(Failure::input)
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

pub fn deform(run: &DeformRun, out: &Path, resume: Option<&Path>) -> Result<(), Failure> {
    run.deform.validate().map_err(Failure::config)?;
    let t0 = Instant::now();
    let template = read_mesh(&run.template)?;
    let body = read_mesh(&run.body)?;
    let cylinders = match &run.cylinders {
        Some(p) => load_cylinders(p).map_err(Failure::input)?,
        None => Vec::new(),
    };
    let checkpoint = resume.map(|p| load_checkpoint(p).map_err(Failure::input)).transpose()?;

    let offset_field;
    let guidance = match &run.deform.guidance {
        GuidanceConfig::None => Guidance::None,
        GuidanceConfig::TargetShape { target, weight, samples } => Guidance::TargetShape {
            target: read_mesh(target)?,
            weight: *weight,
            samples: *samples,
        },
        GuidanceConfig::ConstantOffset { delta, weight } => {
            offset_field = ConditionalOffset {
                base: ZeroField,
                cond: ConditionToken::new("garment"),
                delta: delta.to_vec(),
            };
            Guidance::Field {
                field: &offset_field,
                cond: ConditionToken::new("garment"),
                weight: *weight,
            }
        }
    };
    let load_s = t0.elapsed().as_secs_f64();

    create_dir(out)?;
    let t1 = Instant::now();
    let result = run_deformation(
        &template,
        &body,
        &cylinders,
        &run.deform,
        &guidance,
        &RunOptions {
            run_dir: Some(out.to_path_buf()),
            resume: checkpoint,
        },
    )?;
    let optimize_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let mesh_path = out.join("mesh.obj");
    save_mesh(&result.mesh, &mesh_path)?;
    let csv_path = out.join("loss.csv");
    write_text(&csv_path, &trace_csv(&result.traces))?;

    let mut manifest = RunManifest::new("deform", run)?;
    manifest.seeds.insert("base_seed".into(), json!(result.seeds.base_seed));
    manifest.seeds.insert("sample_seed_rule".into(), json!(result.seeds.sample_seed_rule));
    manifest.timings_s.insert("load".into(), load_s);
    manifest.timings_s.insert("optimize".into(), optimize_s);
    manifest.timings_s.insert("write".into(), t2.elapsed().as_secs_f64());
    manifest.outputs = vec![rel(out, &mesh_path), rel(out, &csv_path)];
    manifest.resumed_from = resume.map(|p| p.display().to_string());
    manifest.write(out)?;
    let last = result.traces.last();
    println!(
        "deform: {} iterations, final total {:.6e}; wrote {}",
        result.traces.len(),
        last.map_or(0.0, |t| t.total),
        out.display()
    );
    Ok(())
}

fn load_reference(path: &Path, size: usize) -> Result<LatentTexture, Failure> {
    let img = image::open(path)
        .map_err(|e| Failure::config(format!("cannot read reference texture {}: {e}", path.display())))?
        .to_rgb32f();
    if img.width() as usize != size || img.height() as usize != size {
        return Err(Failure::config(format!(
            "reference texture is {}x{}, texture_size is {size}",
            img.width(),
            img.height()
        )));
    }
    let mut tex = LatentTexture::empty(size, 3);
    for t in 0..size * size {
        let (row, col) = (t / size, t % size);
        // image rows run top-down, texel rows bottom-up
        let px = img.get_pixel(col as u32, (size - 1 - row) as u32);
        for c in 0..3 {
            tex.texel_mut(t)[c] = px.0[c] as f64;
        }
        tex.valid[t] = true;
    }
    Ok(tex)
}

pub fn texsync(run: &TexsyncRun, out: &Path) -> Result<(), Failure> {
    run.validate().map_err(Failure::config)?;
    let t0 = Instant::now();
    let mut mesh = read_mesh(&run.mesh)?;
    if mesh.uvs.is_none() {
        return Err(Failure::config(format!("missing UVs in {}", run.mesh.display())));
    }
    if run.normalize {
        mesh = Normalization::fit(&mesh).map_err(Failure::input)?.apply(&mesh);
    }
    let reference = match &run.reference {
        Some(p) => load_reference(p, run.texture_size)?,
        None => drape::scenes::smooth_texture(run.texture_size, 3),
    };
    let rig = make_equatorial_rig(
        run.n_views,
        run.rig_radius,
        run.resolution,
        Projection::Perspective { fov_y_deg: run.fov_y_deg },
    )?;
    let corr = rasterize_correspondence(&mesh, &rig.cameras, run.texture_size, run.depth_tolerance)?;
    let setup_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let blank: Vec<LatentImage> = (0..run.n_views).map(|_| LatentImage::zeros(run.resolution, run.resolution, 3)).collect();
    let (targets, _) = project_texture(&corr, &reference, &blank)?;
    let denoiser: Box<dyn Denoiser> = match &run.denoiser {
        DenoiserSettings::ConstantTarget => Box::new(ConstantTarget { targets }),
        DenoiserSettings::ViewBiased { bias } => Box::new(ViewBiased {
            base: targets,
            bias: bias.iter().map(|b| b.to_vec()).collect(),
        }),
        DenoiserSettings::NoiseContaminated { sigma, seed } => Box::new(NoiseContaminated {
            base: targets,
            sigma: *sigma,
            seed: *seed,
        }),
    };
    let merge = MergeConfig {
        steps: run.merge.steps,
        seed: run.merge.seed,
        channels: 3,
        alpha_power: run.merge.alpha_power,
        front: rig.front,
        back: rig.back,
        reweight: run.merge.reweight,
    };
    let result = cyclic_merge_run(denoiser.as_ref(), &corr, &merge)?;
    let merge_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let mut error: f64 = 0.0;
    for (t, obs) in corr.observations.iter().enumerate() {
        if !obs.is_empty() {
            for c in 0..3 {
                error = error.max((result.texture.texel(t)[c] - reference.texel(t)[c]).abs());
            }
        }
    }
    let (texture, report) = if run.fill_voids {
        fill_uv_voids(&result.texture, &corr.texel_charts())
    } else {
        (result.texture.clone(), Default::default())
    };

    create_dir(out)?;
    let depth = if run.png_bits == 16 { PngDepth::Sixteen } else { PngDepth::Eight };
    let mut outputs = Vec::new();
    let tex_path = out.join("texture.png");
    save_texture_png(&texture, &tex_path, depth)?;
    outputs.push(rel(out, &tex_path));
    for (v, view) in result.views.iter().enumerate() {
        let mask: Vec<bool> = corr.pixels[v].iter().map(|p| p.is_some()).collect();
        let p = out.join("views").join(format!("view_{v:02}.png"));
        save_view_png(view, Some(&mask), &p, depth)?;
        outputs.push(rel(out, &p));
    }
    let metrics = json!({
        "spread_per_step": result.spread,
        "final_spread": result.spread.last(),
        "max_abs_error_vs_reference": error,
        "observed_texels": corr.observed_texels(),
        "texels_in_layout": corr.texels.iter().filter(|t| t.is_some()).count(),
        "filled_texels": report.filled,
        "empty_charts": report.empty_charts,
    });
    let metrics_path = out.join("consistency.json");
    write_text(&metrics_path, &serde_json::to_string_pretty(&metrics).map_err(anyhow::Error::from)?)?;
    outputs.push(rel(out, &metrics_path));
    if run.dump_correspondence {
        let dir = out.join("correspondence");
        save_correspondence_dump(&corr, &dir)?;
        outputs.push(rel(out, &dir));
    }

    let mut manifest = RunManifest::new("texsync", run)?;
    manifest.seeds.insert("merge_seed".into(), json!(run.merge.seed));
    if let DenoiserSettings::NoiseContaminated { seed, .. } = &run.denoiser {
        manifest.seeds.insert("denoiser_seed".into(), json!(seed));
    }
    manifest.timings_s.insert("setup".into(), setup_s);
    manifest.timings_s.insert("merge".into(), merge_s);
    manifest.timings_s.insert("write".into(), t2.elapsed().as_secs_f64());
    manifest.outputs = outputs;
    manifest.write(out)?;
    println!(
        "texsync: {} views, final spread {:.3e}, max error vs reference {error:.3e}; wrote {}",
        run.n_views,
        result.spread.last().copied().unwrap_or(0.0),
        out.display()
    );
    Ok(())
}

pub struct RenderArgs {
    pub mesh: PathBuf,
    pub views: usize,
    pub resolution: usize,
}

pub fn render(args: &RenderArgs, out: &Path) -> Result<(), Failure> {
    if args.views == 0 {
        return Err(Failure::config("views must be at least 1"));
    }
    if args.resolution == 0 {
        return Err(Failure::config("resolution must be at least 1"));
    }
    let t0 = Instant::now();
    let mesh = read_mesh(&args.mesh)?;
    let mesh = Normalization::fit(&mesh).map_err(Failure::input)?.apply(&mesh);
    create_dir(out)?;
    let mut outputs = Vec::new();
    for v in 0..args.views {
        let az = v as f64 * 360.0 / args.views as f64;
        let cam = CameraView::orbit(
            Vec3::zeros(),
            3.5,
            az,
            0.0,
            Projection::Perspective { fov_y_deg: 45.0 },
            args.resolution,
            args.resolution,
        )?;
        let r = render_normal_map(&mesh, &cam);
        let colors: Vec<Vec3> = r.normals.iter().map(|n| n.map(|x| 0.5 * x + 0.5)).collect();
        let mask: Vec<bool> = r.provenance.iter().map(|p| p.is_some()).collect();
        let img = LatentImage::from_vec3(r.height, r.width, &colors);
        let p = out.join(format!("normal_{v:02}.png"));
        save_view_png(&img, Some(&mask), &p, PngDepth::Eight)?;
        outputs.push(rel(out, &p));
    }
    let config = json!({
        "mesh": args.mesh,
        "views": args.views,
        "resolution": args.resolution,
    });
    let mut manifest = RunManifest::new("render", &config)?;
    manifest.timings_s.insert("render".into(), t0.elapsed().as_secs_f64());
    manifest.outputs = outputs;
    manifest.write(out)?;
    println!("render: {} views written to {}", args.views, out.display());
    Ok(())
}

fn describe_mesh(path: &Path) -> Result<String, String> {
    let mesh = load_mesh(path).map_err(|e| e.to_string())?;
    mesh.validate().map_err(|e| e.to_string())?;
    let (lo, hi) = mesh.bounding_box().ok_or("mesh is empty")?;
    let uv = match mesh.uv_charts() {
        Some((_, n)) => format!("{n} UV charts"),
        None => "no UVs".into(),
    };
    Ok(format!(
        "{} vertices, {} faces, {} boundary edges, {} components, {uv}, bbox [{:.3} {:.3} {:.3}]..[{:.3} {:.3} {:.3}]",
        mesh.vertices.len(),
        mesh.faces.len(),
        mesh.boundary_edges().len(),
        mesh.face_components(),
        lo.x,
        lo.y,
        lo.z,
        hi.x,
        hi.y,
        hi.z
    ))
}

pub struct ValidateArgs {
    pub config: Option<PathBuf>,
    pub meshes: Vec<PathBuf>,
    pub cylinders: Option<PathBuf>,
}

/// Prints one line per checked item; any problem makes it a config failure.
pub fn validate(args: &ValidateArgs) -> Result<(), Failure> {
    let mut problems = 0;
    let mut report = |what: String, r: Result<String, String>| match r {
        Ok(d) => println!("ok      {what}: {d}"),
        Err(e) => {
            problems += 1;
            println!("problem {what}: {e}");
        }
    };
    let mut meshes = args.meshes.clone();
    let mut cylinder_files: Vec<PathBuf> = args.cylinders.iter().cloned().collect();
    if let Some(cfg) = &args.config {
        let text = fs::read_to_string(cfg).unwrap_or_default();
        let looks_texsync = text.contains("mesh") && !text.contains("template");
        if looks_texsync {
            match crate::config::load_texsync(cfg) {
                Ok(run) => {
                    report(format!("config {}", cfg.display()), run.validate().map(|_| "texsync config".into()));
                    meshes.push(run.mesh.clone());
                    if let Some(r) = &run.reference {
                        report(
                            format!("reference {}", r.display()),
                            load_reference(r, run.texture_size).map(|_| "readable".into()).map_err(|e| e.to_string()),
                        );
                    }
                }
                Err(e) => report(format!("config {}", cfg.display()), Err(e.to_string())),
            }
        } else {
            match crate::config::load_deform(cfg) {
                Ok(run) => {
                    report(format!("config {}", cfg.display()), run.deform.validate().map(|_| "deform config".into()));
                    meshes.push(run.template.clone());
                    meshes.push(run.body.clone());
                    if let GuidanceConfig::TargetShape { target, .. } = &run.deform.guidance {
                        meshes.push(target.clone());
                    }
                    cylinder_files.extend(run.cylinders.clone());
                }
                Err(e) => report(format!("config {}", cfg.display()), Err(e.to_string())),
            }
        }
    }
    for m in &meshes {
        report(format!("mesh {}", m.display()), describe_mesh(m));
    }
    for c in &cylinder_files {
        report(
            format!("cylinders {}", c.display()),
            load_cylinders(c).map(|v| format!("{} cylinders", v.len())).map_err(|e| e.to_string()),
        );
    }
    if meshes.is_empty() && cylinder_files.is_empty() && args.config.is_none() {
        return Err(Failure::config("nothing to validate: pass --config, --mesh or --cylinders"));
    }
    if problems > 0 {
        return Err(Failure::config(format!("{problems} problem(s) found")));
    }
    Ok(())
}
