//! Optional TOML configuration.
//!
//! The file mirrors the command line: top-level keys correspond to the
//! global flags, one table per subcommand to that subcommand's flags.
//! Any value present in the file overrides the flag, so a config file
//! pins a run completely regardless of how the tool is invoked.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use crate::{Command, GlobalArgs, Mode};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    out_dir: Option<PathBuf>,
    simulate: Option<SimulateConfig>,
    embed: Option<EmbedConfig>,
    transform: Option<TransformConfig>,
    fit: Option<FitConfig>,
    select: Option<SelectConfig>,
    experiment: Option<ExperimentConfig>,
    evaluate: Option<EvaluateConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    nodes: Option<usize>,
    block_matrix: Option<String>,
    proportions: Option<String>,
    sizes: Option<String>,
    rho: Option<String>,
    bipartite: Option<bool>,
    right_nodes: Option<usize>,
    right_proportions: Option<String>,
    right_sizes: Option<String>,
    right_rho: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbedConfig {
    input: Option<PathBuf>,
    mode: Option<ConfigMode>,
    dim_m: Option<usize>,
    elbow: Option<usize>,
    spectrum_len: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformConfig {
    input: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    input: Option<PathBuf>,
    sidecar: Option<PathBuf>,
    dim: Option<usize>,
    communities: Option<usize>,
    restarts: Option<usize>,
    max_iter: Option<usize>,
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectConfig {
    input: Option<PathBuf>,
    sidecar: Option<PathBuf>,
    kmax: Option<usize>,
    restarts: Option<usize>,
    max_iter: Option<usize>,
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    name: Option<String>,
    replications: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateConfig {
    truth: Option<PathBuf>,
    predicted: Option<PathBuf>,
    normality: Option<PathBuf>,
}

/// Graph mode as spelt in a config file.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ConfigMode {
    Undirected,
    Bipartite,
}

impl From<ConfigMode> for Mode {
    fn from(m: ConfigMode) -> Mode {
        match m {
            ConfigMode::Undirected => Mode::Undirected,
            ConfigMode::Bipartite => Mode::Bipartite,
        }
    }
}

/// Replace `target` when the config supplies a value.
fn put<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

/// Replace an optional flag when the config supplies a value.
fn put_opt<T>(target: &mut Option<T>, value: Option<T>) {
    if let Some(v) = value {
        *target = Some(v);
    }
}

pub fn load(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).context("invalid config file")
}

impl FileConfig {
    /// Overlay the file's values onto the parsed command line.
    pub fn apply(self, global: &mut GlobalArgs, command: &mut Command) {
        put(&mut global.seed, self.seed);
        put_opt(&mut global.threads, self.threads);
        put(&mut global.out_dir, self.out_dir);
        match command {
            Command::Simulate(args) => {
                let cfg = self.simulate.unwrap_or_default();
                put_opt(&mut args.nodes, cfg.nodes);
                put_opt(&mut args.block_matrix, cfg.block_matrix);
                put_opt(&mut args.proportions, cfg.proportions);
                put_opt(&mut args.sizes, cfg.sizes);
                put_opt(&mut args.rho, cfg.rho);
                put(&mut args.bipartite, cfg.bipartite);
                put_opt(&mut args.right_nodes, cfg.right_nodes);
                put_opt(&mut args.right_proportions, cfg.right_proportions);
                put_opt(&mut args.right_sizes, cfg.right_sizes);
                put_opt(&mut args.right_rho, cfg.right_rho);
            }
            Command::Embed(args) => {
                let cfg = self.embed.unwrap_or_default();
                put_opt(&mut args.input, cfg.input);
                put(&mut args.mode, cfg.mode.map(Mode::from));
                put_opt(&mut args.dim_m, cfg.dim_m);
                put(&mut args.elbow, cfg.elbow);
                put(&mut args.spectrum_len, cfg.spectrum_len);
            }
            Command::Transform(args) => {
                let cfg = self.transform.unwrap_or_default();
                put_opt(&mut args.input, cfg.input);
            }
            Command::Fit(args) => {
                let cfg = self.fit.unwrap_or_default();
                put_opt(&mut args.input, cfg.input);
                put_opt(&mut args.sidecar, cfg.sidecar);
                put_opt(&mut args.dim, cfg.dim);
                put_opt(&mut args.communities, cfg.communities);
                put(&mut args.restarts, cfg.restarts);
                put(&mut args.max_iter, cfg.max_iter);
                put(&mut args.tol, cfg.tol);
            }
            Command::Select(args) => {
                let cfg = self.select.unwrap_or_default();
                put_opt(&mut args.input, cfg.input);
                put_opt(&mut args.sidecar, cfg.sidecar);
                put(&mut args.kmax, cfg.kmax);
                put(&mut args.restarts, cfg.restarts);
                put(&mut args.max_iter, cfg.max_iter);
                put(&mut args.tol, cfg.tol);
            }
            Command::Experiment(args) => {
                let cfg = self.experiment.unwrap_or_default();
                put_opt(&mut args.name, cfg.name);
                put_opt(&mut args.replications, cfg.replications);
            }
            Command::Evaluate(args) => {
                let cfg = self.evaluate.unwrap_or_default();
                put_opt(&mut args.truth, cfg.truth);
                put_opt(&mut args.predicted, cfg.predicted);
                put_opt(&mut args.normality, cfg.normality);
            }
        }
    }
}
