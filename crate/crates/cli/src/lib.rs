//! CLI over the bevlane library.
//!
//! Subcommands: `synth`, `gen-gt`, `eval3d`, `eval2d`, `anchors`,
//! `persformer`. Exit codes: 0 success, 1 validation or runtime
//! failure, 2 usage error. All commands are deterministic given the
//! seed and configuration.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use bevlane::io::RunConfig;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "bevlane", version, about = "3D lane geometry, labeling and metrics toolbox")]
struct Cli {
    /// Configuration file (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for anything randomized.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Worker threads for per-frame stages (0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic segment: scene spec, 2D annotations, LiDAR
    /// clouds and the exact 3D truth.
    Synth(SynthArgs),
    /// Run the LiDAR labeling pipeline over a scene spec.
    #[command(name = "gen-gt")]
    GenGt(GenGtArgs),
    /// 3D lane metric between two frame sets.
    Eval3d(Eval3dArgs),
    /// 2D stroke-IoU metric between two frame sets.
    Eval2d(Eval2dArgs),
    /// Anchor grid tools.
    Anchors(AnchorsArgs),
    /// Perspective-transformer demos.
    Persformer(PersformerArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Scene preset.
    #[arg(long, default_value = "rolling")]
    scene: String,
}

#[derive(Debug, Args)]
struct GenGtArgs {
    /// Scene spec file produced by `synth` (scene.json).
    #[arg(long)]
    scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Eval3dArgs {
    /// Prediction frame set (JSON array of frames).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth frame set.
    #[arg(long)]
    gt: PathBuf,
    /// Max allowed point distance in meters.
    #[arg(long)]
    max_dist: Option<f64>,
    /// Required fraction of matched positions.
    #[arg(long)]
    coverage: Option<f64>,
    /// Keep only frames whose ground-truth scene tag matches, e.g.
    /// "weather=rainy" or "hours=night".
    #[arg(long)]
    tag: Option<String>,
    /// Write the machine-readable report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Eval2dArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// IoU threshold for a true positive.
    #[arg(long)]
    iou: Option<f64>,
    /// Keep only frames whose ground-truth scene tag matches.
    #[arg(long)]
    tag: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnchorsArgs {
    #[command(subcommand)]
    action: AnchorsAction,
}

#[derive(Debug, Subcommand)]
enum AnchorsAction {
    /// Print the anchor table; optionally write the machine form.
    Dump {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct PersformerArgs {
    #[command(subcommand)]
    action: PersformerAction,
}

#[derive(Debug, Subcommand)]
enum PersformerAction {
    /// Seeded desk-scale forward pass plus the gradient-check table.
    Demo,
}

/// Failures mapped to exit codes.
pub(crate) enum CliError {
    /// Exit 1: bad input data, failed validation, failed demo.
    Run(String),
}

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Run(e.to_string())
    }
}

pub(crate) type CliResult = Result<(), CliError>;

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

/// Parse and dispatch. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };

    let cfg = match load_config(cli.config.as_deref()) {
        Ok(cfg) => cfg,
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            return 1;
        }
    };
    let workers = if cli.workers > 0 { cli.workers } else { cfg.workers };
    if workers > 0 {
        // Best effort; a pool may already exist in-process (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }

    let outcome = match &cli.command {
        Command::Synth(a) => commands::synth(&cfg, cli.seed, &a.scene, &a.out),
        Command::GenGt(a) => commands::gen_gt(&cfg, &a.scene, &a.out),
        Command::Eval3d(a) => commands::eval3d(
            &cfg,
            &a.pred,
            &a.gt,
            a.max_dist,
            a.coverage,
            a.tag.as_deref(),
            a.out.as_deref(),
        ),
        Command::Eval2d(a) => {
            commands::eval2d(&cfg, &a.pred, &a.gt, a.iou, a.tag.as_deref(), a.out.as_deref())
        }
        Command::Anchors(a) => match &a.action {
            AnchorsAction::Dump { out } => commands::anchors_dump(&cfg, out.as_deref()),
        },
        Command::Persformer(a) => match a.action {
            PersformerAction::Demo => commands::persformer_demo(&cfg, cli.seed),
        },
    };
    match outcome {
        Ok(()) => 0,
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}
