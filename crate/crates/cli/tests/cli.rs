use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes").canonicalize().unwrap()
}

fn drape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drape"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_deform(dir: &Path, iterations: usize, extra: &str) -> PathBuf {
    let arm = scenes().join("arm");
    let text = format!(
        "template = {:?}\nbody = {:?}\ncylinders = {:?}\n\n[deform]\niterations = {iterations}\nn_points = 1000\ncheckpoint_every = 10\n{extra}",
        arm.join("sleeve.obj"),
        arm.join("body.obj"),
        arm.join("cylinders.json"),
    );
    let p = dir.join(format!("deform_{iterations}.toml"));
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn print_config_shows_defaults() {
    let o = drape(&["deform", "--print-config"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: toml::Value = toml::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    let d = &v["deform"];
    let w = &d["weights"];
    assert_eq!(w["lambda_coll"].as_float(), Some(5e5));
    assert_eq!(w["lambda_blk"].as_float(), Some(1e5));
    assert_eq!(w["lambda_sym"].as_float(), Some(5e5));
    assert_eq!(w["lambda_lap"].as_float(), Some(2e4));
    assert_eq!(w["lambda_nc"].as_float(), Some(2e4));
    assert_eq!(w["epsilon"].as_float(), Some(0.005));
    assert_eq!(d["n_points"].as_integer(), Some(50_000));
    assert_eq!(d["learning_rate"].as_float(), Some(0.002));
    assert_eq!(d["iterations"].as_integer(), Some(600));
    let ts = &d["timesteps"];
    let pair = |k: &str| ts[k].as_array().unwrap().iter().map(|x| x.as_integer().unwrap()).collect::<Vec<_>>();
    assert_eq!(pair("early"), vec![500, 980]);
    assert_eq!(pair("late"), vec![50, 980]);

    let o = drape(&["texsync", "--print-config"]);
    assert_eq!(code(&o), 0);
    let v: toml::Value = toml::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(v["n_views"].as_integer(), Some(6));
    assert_eq!(v["texture_size"].as_integer(), Some(1024));
}

#[test]
fn print_config_applies_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_deform(dir.path(), 5, "");
    let o = drape(&["deform", "--config", s(&cfg), "--seed", "42", "--print-config"]);
    assert_eq!(code(&o), 0);
    let v: toml::Value = toml::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(v["deform"]["seed"].as_integer(), Some(42));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(code(&drape(&["deform", "--bogus"])), 1);
    assert_eq!(code(&drape(&[])), 1);
    assert_eq!(code(&drape(&["deform"])), 1);
    assert_eq!(code(&drape(&["--help"])), 0);
    assert_eq!(code(&drape(&["--version"])), 0);
}

#[test]
fn negative_collision_weight_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_deform(dir.path(), 5, "\n[deform.weights]\nlambda_coll = -1.0\n");
    let o = drape(&["deform", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("lambda_coll"), "{}", stderr(&o));
}

#[test]
fn missing_body_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let arm = scenes().join("arm");
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("template = {:?}\nbody = \"nowhere/body.obj\"\n", arm.join("sleeve.obj"))).unwrap();
    let o = drape(&["deform", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nowhere/body.obj"), "{}", stderr(&o));
}

#[test]
fn bundled_deform_scene_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = drape(&["deform", "--config", s(&scenes().join("arm/deform.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["mesh.obj", "loss.csv", "manifest.json", "checkpoint.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 301);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "deform");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["seeds"]["base_seed"], 0);
    assert!(m["timings_s"]["optimize"].as_f64().unwrap() > 0.0);
    assert_eq!(m["library_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let short = small_deform(dir.path(), 10, "");
    let long = small_deform(dir.path(), 20, "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&drape(&["deform", "--config", s(&short), "--out", s(&a)])), 0);
    let o = drape(&["deform", "--config", s(&long), "--out", s(&b), "--resume", s(&a.join("checkpoint.json"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fresh = dir.path().join("fresh");
    assert_eq!(code(&drape(&["deform", "--config", s(&long), "--out", s(&fresh)])), 0);
    for f in ["loss.csv", "mesh.obj"] {
        assert_eq!(fs::read(b.join(f)).unwrap(), fs::read(fresh.join(f)).unwrap(), "{f} differs");
    }
    let bad = drape(&["deform", "--config", s(&long), "--out", s(&b), "--resume", "no/checkpoint.json"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn manifest_reruns_reproduce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_deform(dir.path(), 12, "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&drape(&["deform", "--config", s(&cfg), "--out", s(&a), "--seed", "7"])), 0);
    let o = drape(&["deform", "--config", s(&a.join("manifest.json")), "--out", s(&b)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["loss.csv", "mesh.obj"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let ma: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let mb: serde_json::Value = serde_json::from_slice(&fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(mb["seeds"]["base_seed"], 7);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_deform(dir.path(), 8, "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&drape(&["deform", "--config", s(&cfg), "--out", s(&a), "--threads", "1"])), 0);
    assert_eq!(code(&drape(&["deform", "--config", s(&cfg), "--out", s(&b), "--threads", "4"])), 0);
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(b.join("loss.csv")).unwrap());
}

#[test]
fn texsync_constant_target_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = drape(&["texsync", "--config", s(&scenes().join("column/texsync.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("consistency.json")).unwrap()).unwrap();
    let err = m["max_abs_error_vs_reference"].as_f64().unwrap();
    let spread = m["final_spread"].as_f64().unwrap();
    assert!(err < 2e-2, "texture error {err}");
    assert!(spread < 2e-2, "spread {spread}");
    assert_eq!(m["spread_per_step"].as_array().unwrap().len(), 21);
    assert!(out.join("texture.png").exists());
    for v in 0..6 {
        assert!(out.join(format!("views/view_{v:02}.png")).exists());
    }
    let img = image::open(out.join("texture.png")).unwrap();
    assert_eq!((img.width(), img.height()), (128, 128));

    let again = dir.path().join("again");
    assert_eq!(code(&drape(&["texsync", "--config", s(&out.join("manifest.json")), "--out", s(&again)])), 0);
    assert_eq!(fs::read(out.join("texture.png")).unwrap(), fs::read(again.join("texture.png")).unwrap());
}

#[test]
fn texsync_sixteen_bit_with_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    fs::write(
        &cfg,
        format!(
            "mesh = {:?}\nn_views = 4\nresolution = 64\ntexture_size = 32\npng_bits = 16\ndump_correspondence = true\n[merge]\nsteps = 4\n[denoiser]\nkind = \"noise_contaminated\"\nsigma = 0.05\nseed = 3\n",
            scenes().join("column/column.obj")
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = drape(&["texsync", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let img = image::open(out.join("texture.png")).unwrap();
    assert!(matches!(img, image::DynamicImage::ImageRgba16(_)));
    assert!(out.join("correspondence/header.json").exists());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["denoiser_seed"], 3);
}

#[test]
fn texsync_without_uvs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("tet.obj");
    fs::write(&mesh, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n").unwrap();
    let cfg = dir.path().join("t.toml");
    fs::write(&cfg, "mesh = \"tet.obj\"\n").unwrap();
    let o = drape(&["texsync", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing UVs"), "{}", stderr(&o));
}

#[test]
fn render_writes_deterministic_normal_maps() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = scenes().join("arm/body.obj");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = drape(&["render", "--mesh", s(&mesh), "--out", s(out), "--resolution", "64"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for v in 0..4 {
        let name = format!("normal_{v:02}.png");
        let bytes = fs::read(a.join(&name)).unwrap();
        assert_eq!(bytes, fs::read(b.join(&name)).unwrap());
        let img = image::load_from_memory(&bytes).unwrap().to_rgba8();
        assert!(img.pixels().any(|p| p.0[3] == 255) && img.pixels().any(|p| p.0[3] == 0));
    }
    let o = drape(&["render", "--mesh", s(&mesh), "--out", s(&a), "--views", "0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn validate_reports_problems() {
    let o = drape(&["validate", "--config", s(&scenes().join("arm/deform.toml"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("cylinders") && stdout.contains("faces"));

    let o = drape(&["validate", "--config", s(&scenes().join("column/texsync.toml"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.obj");
    fs::write(&bad, "v 0 0 0\nv 1 0 0\nf 1 2 7\n").unwrap();
    let o = drape(&["validate", "--mesh", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("problem"));
    assert_eq!(code(&drape(&["validate"])), 1);
}
