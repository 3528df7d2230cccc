mod commands;
mod config;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::commands::{RenderArgs, ValidateArgs};
use crate::config::{to_toml, DeformRun, TexsyncRun};
use crate::failure::Failure;

/// Garment template deformation and multi-view texture synchronization.
#[derive(Debug, Parser)]
#[command(name = "drape", version)]
struct Cli {
    /// Worker threads (defaults to RAYON_NUM_THREADS or the core count).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML, JSON, or a manifest.json from an earlier run).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved config (or the defaults without --config) and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Deform a garment template against a body.
    Deform {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from a checkpoint.json written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Synchronize a texture over a fixed camera rig with mock denoisers.
    Texsync {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write normal-map renders around the equator.
    Render {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value = "render")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        views: usize,
        #[arg(long, default_value_t = 512)]
        resolution: usize,
    },
    /// Check config, mesh and cylinder files and print diagnostics.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "mesh")]
        meshes: Vec<PathBuf>,
        #[arg(long)]
        cylinders: Option<PathBuf>,
    },
}

fn require_config(run: &RunArgs) -> Result<&PathBuf, Failure> {
    run.config.as_ref().ok_or_else(|| Failure::config("--config is required (or use --print-config)"))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Deform { run, resume } => {
            let mut cfg = match &run.config {
                Some(p) => config::load_deform(p)?,
                None if run.print_config => DeformRun::example(),
                None => return Err(require_config(&run).unwrap_err()),
            };
            if let Some(seed) = run.seed {
                cfg.deform.seed = seed;
            }
            if run.print_config {
                print!("{}", to_toml(&cfg));
                return Ok(());
            }
            commands::deform(&cfg, &run.out, resume.as_deref())
        }
        Command::Texsync { run } => {
            let mut cfg = match &run.config {
                Some(p) => config::load_texsync(p)?,
                None if run.print_config => TexsyncRun::example(),
                None => return Err(require_config(&run).unwrap_err()),
            };
            if let Some(seed) = run.seed {
                cfg.merge.seed = seed;
            }
            if run.print_config {
                print!("{}", to_toml(&cfg));
                return Ok(());
            }
            commands::texsync(&cfg, &run.out)
        }
        Command::Render { mesh, out, views, resolution } => {
            commands::render(&RenderArgs { mesh, views, resolution }, &out)
        }
        Command::Validate { config, meshes, cylinders } => commands::validate(&ValidateArgs {
            config,
            meshes,
            cylinders,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
