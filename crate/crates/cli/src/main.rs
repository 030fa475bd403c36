//! `hrapr`: build pose-feature databases, score prediction reliability,
//! sweep thresholds, run budgeted refinement, and generate synthetic
//! benchmark scenes.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::CommonOpts;

#[derive(Parser)]
#[command(
    name = "hrapr",
    version,
    about = "Uncertainty scoring and budgeted refinement for camera pose predictions"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a poses/features file pair and write the database container.
    BuildDb(BuildDbArgs),
    /// Score query reliability against a database and write the scored CSV.
    Score(ScoreArgs),
    /// Sweep the reliability threshold and write retention/error curves.
    Sweep(SweepArgs),
    /// Refine scored queries with per-class step budgets.
    Refine(RefineArgs),
    /// Generate and export a deterministic synthetic scene.
    Synth(SynthArgs),
    /// Report median errors and accuracy levels, optionally after filtering.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct BuildDbArgs {
    /// Input `.poses` text file.
    #[arg(long)]
    poses: PathBuf,
    /// Input embedding file (HRFE binary).
    #[arg(long)]
    feat: PathBuf,
    /// Output stem; writes `<stem>.poses` and `<stem>.feat`.
    #[arg(long)]
    out_stem: PathBuf,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct ScoreArgs {
    /// Database stem (`<stem>.poses` + `<stem>.feat`).
    #[arg(long)]
    db: PathBuf,
    /// Query stem (`<stem>.queries` + `<stem>.qfeat`).
    #[arg(long)]
    queries: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Abort on the first failing query instead of collecting failures.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    db: PathBuf,
    /// Query stem; ground truth is required.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Scene manifest (`key = value`) describing the synthetic field the
    /// built-in refiner optimizes against.
    #[arg(long)]
    scene: PathBuf,
    /// Output directory: summary.csv, convergence.csv, traces/.
    #[arg(long)]
    out_dir: PathBuf,
    /// Abort on the first failing query.
    #[arg(long)]
    strict: bool,
    /// Stop a query early once its loss plateaus.
    #[arg(long)]
    early_stop: bool,
    /// Skip writing per-query trace files.
    #[arg(long)]
    no_traces: bool,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct SynthArgs {
    /// Output stem for the database, query and manifest files.
    #[arg(long)]
    out_stem: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Embedding dimension of the synthetic feature field.
    #[arg(long)]
    dim: Option<usize>,
    /// Number of training poses along the trajectory.
    #[arg(long)]
    train: Option<usize>,
    /// Number of near test queries.
    #[arg(long)]
    near: Option<usize>,
    /// Number of far test queries.
    #[arg(long)]
    far: Option<usize>,
    /// Trajectory extent in meters.
    #[arg(long)]
    extent: Option<f64>,
    /// Gaussian noise added to query embeddings.
    #[arg(long)]
    feature_noise: Option<f64>,
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Query stem; ground truth is required.
    #[arg(long)]
    queries: PathBuf,
    /// Optional database stem; adds retained-set metrics after filtering.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Also write the summary block to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonOpts,
}

fn init_thread_pool() -> Result<(), String> {
    match std::env::var("HRAPR_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .map_err(|_| format!("HRAPR_THREADS must be a positive integer, got {v:?}"))?;
            if n == 0 {
                return Err("HRAPR_THREADS must be a positive integer".into());
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| format!("thread pool: {e}"))
        }
        Err(_) => Ok(()),
    }
}

fn main() -> ExitCode {
    if let Err(msg) = init_thread_pool() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::BuildDb(a) => commands::build_db(&a.poses, &a.feat, &a.out_stem, &a.common),
        Cmd::Score(a) => commands::score(&a.db, &a.queries, &a.out, a.strict, &a.common),
        Cmd::Sweep(a) => commands::sweep(&a.db, &a.queries, &a.out, &a.common),
        Cmd::Refine(a) => commands::refine(
            &a.db,
            &a.queries,
            &a.scene,
            &a.out_dir,
            a.strict,
            a.early_stop,
            a.no_traces,
            &a.common,
        ),
        Cmd::Synth(a) => commands::synth(
            &a.out_stem,
            &commands::SynthOverrides {
                seed: a.seed,
                dim: a.dim,
                train: a.train,
                near: a.near,
                far: a.far,
                extent: a.extent,
                feature_noise: a.feature_noise,
            },
            &a.common,
        ),
        Cmd::Evaluate(a) => commands::evaluate(&a.queries, a.db.as_deref(), a.out.as_deref(), &a.common),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
