//! Writes the bundled demo scenes under `scenes/` (or the directory given as
//! the first argument).

use std::fs;
use std::path::PathBuf;

use drape::losses::cylinders_to_json;
use drape::save_mesh;
use drape::scenes::{arm_sleeve, textured_column};

const DEFORM_TOML: &str = r#"template = "sleeve.obj"
body = "body.obj"
cylinders = "cylinders.json"

[deform]
iterations = 300
n_points = 10000
seed = 0
"#;

const TEXSYNC_TOML: &str = r#"mesh = "column.obj"
n_views = 6
resolution = 256
texture_size = 128
depth_tolerance = 0.01

[merge]
steps = 20
seed = 0

[denoiser]
kind = "constant_target"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "scenes".into()).into();
    let arm = root.join("arm");
    let column = root.join("column");
    for d in [&arm, &column] {
        fs::create_dir_all(d)?;
    }
    let s = arm_sleeve();
    save_mesh(&s.body, arm.join("body.obj"))?;
    save_mesh(&s.garment, arm.join("sleeve.obj"))?;
    fs::write(arm.join("cylinders.json"), cylinders_to_json(&s.cylinders))?;
    fs::write(arm.join("deform.toml"), DEFORM_TOML)?;
    save_mesh(&textured_column(), column.join("column.obj"))?;
    fs::write(column.join("texsync.toml"), TEXSYNC_TOML)?;
    println!("scenes written to {}", root.display());
    Ok(())
}
