//! Command-line driver for the spectral community-detection pipeline.
//!
//! The subcommands compose into the full procedure — `simulate` →
//! `embed` → `transform` → `select` → `evaluate` — with `fit` for a
//! single mixture fit at a fixed dimension and community count, and
//! `experiment` for the batch replication studies. Every file a
//! subcommand reads follows the format the earlier stage emits, so the
//! stages can also be driven individually on external data.

mod commands;
mod config;
mod io;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Spectral community detection for degree-corrected blockmodels.
///
/// Values set in a `--config` TOML file take precedence over the
/// corresponding command-line flags.
#[derive(Debug, Parser)]
#[command(name = "dcsbm", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Base seed for every stochastic stage.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker-thread count (default: one per CPU).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory output files are written into.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// TOML file whose values override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a degree-corrected blockmodel graph.
    Simulate(SimulateArgs),
    /// Spectrally embed an edge list.
    Embed(EmbedArgs),
    /// Convert embedding rows to spherical coordinates.
    Transform(TransformArgs),
    /// Fit the constrained mixture at a fixed dimension and community count.
    Fit(FitArgs),
    /// Sweep the (d, K) grid by BIC and label every node.
    Select(SelectArgs),
    /// Run a named replication study.
    Experiment(ExperimentArgs),
    /// Score labels against a reference, or test a matrix for normality.
    Evaluate(EvaluateArgs),
}

/// Graph mode of an edge-list file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// One node set; each line is an unordered pair.
    Undirected,
    /// Two node sets with separate label spaces per column.
    Bipartite,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of nodes (row nodes of a two-mode graph).
    #[arg(long)]
    nodes: Option<usize>,
    /// Block connection probabilities: rows separated by ';', entries by
    /// ',' (e.g. "0.10,0.05;0.05,0.15"), or `@path` to a CSV file. Row
    /// count fixes the community count.
    #[arg(long)]
    block_matrix: Option<String>,
    /// Community weights, e.g. "0.5,0.5" (default: equal).
    #[arg(long, conflicts_with = "sizes")]
    proportions: Option<String>,
    /// Exact community sizes, e.g. "300,200".
    #[arg(long)]
    sizes: Option<String>,
    /// Degree-correction law: "constant:c", "uniform:a,b" or "beta:a,b".
    #[arg(long)]
    rho: Option<String>,
    /// Sample a two-mode graph (requires --right-nodes).
    #[arg(long)]
    bipartite: bool,
    /// Column-node count of a two-mode graph.
    #[arg(long)]
    right_nodes: Option<usize>,
    /// Column-side community weights (default: equal).
    #[arg(long, conflicts_with = "right_sizes")]
    right_proportions: Option<String>,
    /// Exact column-side community sizes.
    #[arg(long)]
    right_sizes: Option<String>,
    /// Column-side degree-correction law (default: same as --rho).
    #[arg(long)]
    right_rho: Option<String>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Edge-list file to embed.
    #[arg(long)]
    input: Option<PathBuf>,
    /// How the edge list is read.
    #[arg(long, value_enum, default_value_t = Mode::Undirected)]
    mode: Mode,
    /// Fixed number of embedding columns (skips elbow selection).
    #[arg(long)]
    dim_m: Option<usize>,
    /// Which scree elbow picks the dimension when --dim-m is absent
    /// (1-based; later elbows deliberately over-shoot).
    #[arg(long, default_value_t = 3)]
    elbow: usize,
    /// How many spectral values the elbow scan inspects.
    #[arg(long, default_value_t = 25)]
    spectrum_len: usize,
}

#[derive(Debug, Args)]
struct TransformArgs {
    /// Embedding CSV (one row per node) to convert to angles.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Angle CSV to fit (as written by `transform`).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Sidecar JSON naming originally excluded rows; restores original
    /// node indices in the label output.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Structured dimension d (leading angle columns).
    #[arg(long)]
    dim: Option<usize>,
    /// Community count K.
    #[arg(long)]
    communities: Option<usize>,
    /// Independent initialisations; the best fit is kept.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Iteration cap per run.
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Log-likelihood change below which a run has converged.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Angle CSV to select over (as written by `transform`).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Sidecar JSON naming originally excluded rows.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Largest candidate community count.
    #[arg(long, default_value_t = 6)]
    kmax: usize,
    /// Independent initialisations per grid cell.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Iteration cap per run.
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Log-likelihood change below which a run has converged.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Study to run: recovery-undirected, recovery-undirected-k2,
    /// recovery-undirected-k3, recovery-bipartite, angle-moments,
    /// angle-moments-by-n, angle-moments-by-assortativity,
    /// normality-comparison, model-comparison or embedding-clt.
    #[arg(long)]
    name: Option<String>,
    /// Number of replications.
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Reference labels CSV.
    #[arg(long, requires = "predicted")]
    truth: Option<PathBuf>,
    /// Labels CSV to score against the reference.
    #[arg(long, requires = "truth")]
    predicted: Option<PathBuf>,
    /// Numeric matrix CSV to test for multivariate normality instead.
    #[arg(long, conflicts_with_all = ["truth", "predicted"])]
    normality: Option<PathBuf>,
}

fn main() -> Result<()> {
    let mut cli = Cli::parse();
    if let Some(path) = cli.global.config.clone() {
        let cfg = config::load(&path)
            .with_context(|| format!("cannot load config {}", path.display()))?;
        cfg.apply(&mut cli.global, &mut cli.command);
    }
    if let Some(threads) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("cannot size the worker-thread pool")?;
    }
    std::fs::create_dir_all(&cli.global.out_dir).with_context(|| {
        format!(
            "cannot create output directory {}",
            cli.global.out_dir.display()
        )
    })?;
    let ctx = commands::Ctx {
        seed: cli.global.seed,
        out_dir: cli.global.out_dir,
    };
    match cli.command {
        Command::Simulate(args) => commands::simulate(&args, &ctx),
        Command::Embed(args) => commands::embed(&args, &ctx),
        Command::Transform(args) => commands::transform(&args, &ctx),
        Command::Fit(args) => commands::fit(&args, &ctx),
        Command::Select(args) => commands::select(&args, &ctx),
        Command::Experiment(args) => commands::experiment(&args, &ctx),
        Command::Evaluate(args) => commands::evaluate(&args, &ctx),
    }
}
