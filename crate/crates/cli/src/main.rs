use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hype_core::HypeError;

mod commands;

/// Hyperbolic entailment-cone scoring and filtering of image-text pairs.
#[derive(Debug, Parser)]
#[command(name = "hype", version, about)]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true, env = "HYPE_THREADS")]
    threads: Option<usize>,

    /// Records handed to the worker pool at a time.
    #[arg(long, global = true, default_value_t = 4096)]
    chunk_size: usize,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GeometryArgs {
    /// Curvature magnitude c of the hyperboloid.
    #[arg(long)]
    curvature: Option<f64>,
    /// Aperture constant K of the entailment cones.
    #[arg(long)]
    k_aperture: Option<f64>,
}

#[derive(Debug, Args)]
struct WeightArgs {
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    w_eps_i: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    w_eps_t: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    w_negdl: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    w_cos: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    w_cin: f64,
    /// Drop samples outside the cluster instead of adding the membership term.
    #[arg(long)]
    cin_gate: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mean and standard deviation of every metric.
    Stats {
        /// Metrics or score CSV.
        #[arg(long)]
        metrics: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Build the image and text reference sets and save them.
    Refset {
        /// Shard files, or one manifest JSON.
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        /// Most-aligned pairs to draw the references from.
        #[arg(long, default_value_t = hype_core::specificity::DEFAULT_N)]
        n: usize,
        /// References kept per modality.
        #[arg(long, default_value_t = hype_core::specificity::DEFAULT_M)]
        m: usize,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Specificity and alignment metrics for every sample.
    Specificity {
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        /// Reference archive written by `refset`.
        #[arg(long)]
        refset: PathBuf,
        /// Override the archive's aperture constant.
        #[arg(long)]
        k_aperture: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weighted HYPE score per sample.
    Score {
        /// Precomputed metrics CSV.
        #[arg(long, conflicts_with_all = ["data", "refset"])]
        metrics: Option<PathBuf>,
        /// Shards or manifest to compute metrics from (needs --refset).
        #[arg(long, num_args = 1.., requires = "refset")]
        data: Vec<PathBuf>,
        #[arg(long)]
        refset: Option<PathBuf>,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep the best-scoring fraction, optionally combined with another list.
    Filter {
        /// Score CSV written by `score`.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        fraction: f64,
        /// Another id list to combine with.
        #[arg(long, requires = "mode")]
        combine: Option<PathBuf>,
        #[arg(long, value_parser = ["intersect", "union"], requires = "combine")]
        mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative-percentage histogram of one metric.
    Histogram {
        /// Metrics or score CSV.
        #[arg(long)]
        input: PathBuf,
        /// eps_i, eps_t, neg_dl, clip_cos, cin or score.
        #[arg(long)]
        metric: String,
        #[arg(long, default_value_t = 100)]
        bins: usize,
        /// Explicit range as `lo,hi`; values outside go to the end bins.
        #[arg(long, allow_hyphen_values = true)]
        range: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record the checksums of shard files in a manifest.
    Manifest {
        #[arg(num_args = 1.., required = true)]
        shards: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic shard of tangent-space pairs.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train toy embedding tables on a synthetic caption hierarchy.
    TrainToy(commands::TrainArgs),
    /// Run the geometry-oracle and gradient suites.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<HypeError>()
                .map(|h| !h.is_data_error())
                .unwrap_or(false);
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
