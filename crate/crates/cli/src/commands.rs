//! Subcommand implementations.
//!
//! Stages communicate through files. Matrix CSVs are pure numbers plus a
//! header; per-matrix metadata (node names, excluded rows, spectra) lives
//! in a JSON sidecar named `<stem>_meta.json` next to the matrix, which
//! later stages pick up automatically. Node names matter because loading
//! an edge list assigns dense indices in first-seen order, so row
//! positions alone do not identify nodes across stages; `evaluate` joins
//! label files by node key whenever both sides carry the same keys.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dcsbm_spectral::embed::{ase, dase, scree_elbows, ElbowReport, Embedding, EmbeddingSide};
use dcsbm_spectral::evaluate::{adjusted_rand_index, mardia_tests};
use dcsbm_spectral::graph::{load_edge_list, GraphMode, SparseGraph};
use dcsbm_spectral::mixture::{fit_constrained_em, scatter_labels, select_model, EmOptions};
use dcsbm_spectral::pipeline::run_experiment;
use dcsbm_spectral::simulate::{
    sample_dcsbm, sample_dcscbm, Allocation, BlockModelSpec, GroundTruth,
};
use dcsbm_spectral::spherical::{transform_embedding, SphericalEmbedding};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::io;
use crate::{
    EmbedArgs, EvaluateArgs, ExperimentArgs, FitArgs, Mode, SelectArgs, SimulateArgs,
    TransformArgs,
};

/// Global options after config merging.
pub struct Ctx {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl From<Mode> for GraphMode {
    fn from(m: Mode) -> GraphMode {
        match m {
            Mode::Undirected => GraphMode::Undirected,
            Mode::Bipartite => GraphMode::Bipartite,
        }
    }
}

/// Sidecar JSON carried along with a matrix CSV.
#[derive(Debug, Default, Serialize, Deserialize)]
struct Sidecar {
    /// Column count of the embedding the matrix derives from.
    #[serde(skip_serializing_if = "Option::is_none")]
    source_dim: Option<usize>,
    /// Original row indices dropped from the matrix (isolated nodes).
    #[serde(skip_serializing_if = "Option::is_none")]
    excluded: Option<Vec<usize>>,
    /// Node name per original row.
    #[serde(skip_serializing_if = "Option::is_none")]
    nodes: Option<Vec<String>>,
}

/// The sidecar conventionally next to `matrix.csv` is
/// `matrix_meta.json`.
fn sidecar_path(matrix: &Path) -> PathBuf {
    let stem = matrix
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    matrix.with_file_name(format!("{stem}_meta.json"))
}

/// Load the explicit or conventional sidecar, if there is one.
fn load_sidecar(matrix: &Path, explicit: Option<&Path>) -> Result<Option<(PathBuf, Sidecar)>> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let conventional = sidecar_path(matrix);
            if !conventional.exists() {
                return Ok(None);
            }
            conventional
        }
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read sidecar {}", path.display()))?;
    let sidecar: Sidecar = serde_json::from_str(&text)
        .with_context(|| format!("invalid sidecar {}", path.display()))?;
    Ok(Some((path, sidecar)))
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.with_context(|| format!("--{flag} is required (flag or config file)"))
}

// ---------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------

pub fn simulate(args: &SimulateArgs, ctx: &Ctx) -> Result<()> {
    let n = require(args.nodes, "nodes")?;
    let b = io::parse_block_matrix(&require(args.block_matrix.as_deref(), "block-matrix")?)?;
    let k = b.nrows();
    let allocation = allocation_from(args.proportions.as_deref(), args.sizes.as_deref(), n, k)?;
    let rho = io::parse_rho_law(args.rho.as_deref().unwrap_or("constant:1"))?;

    let (graph, truth) = if args.bipartite {
        let n_prime = require(args.right_nodes, "right-nodes")?;
        let k_prime = b.ncols();
        let allocation_prime = allocation_from(
            args.right_proportions.as_deref(),
            args.right_sizes.as_deref(),
            n_prime,
            k_prime,
        )?;
        let rho_prime = match args.right_rho.as_deref() {
            Some(spec) => io::parse_rho_law(spec)?,
            None => rho,
        };
        let spec = BlockModelSpec::bipartite(
            n,
            n_prime,
            b,
            allocation,
            allocation_prime,
            rho,
            rho_prime,
            ctx.seed,
        );
        sample_dcscbm(&spec)?
    } else {
        if b.nrows() != b.ncols() {
            bail!(
                "an undirected blockmodel needs a square block matrix, got {}×{}",
                b.nrows(),
                b.ncols()
            );
        }
        let spec = BlockModelSpec::undirected(n, b, allocation, rho, ctx.seed);
        sample_dcsbm(&spec)?
    };

    let graph_path = ctx.out_dir.join("graph.csv");
    write_edge_list(&graph_path, &graph)?;
    let truth_path = ctx.out_dir.join("truth.json");
    io::write_json(&truth_path, &truth_json(&truth))?;
    let labels_path = ctx.out_dir.join("truth_labels.csv");
    let z: Vec<Option<usize>> = truth.z.iter().map(|&l| Some(l)).collect();
    io::write_labels(&labels_path, &z, None)?;

    match graph.mode() {
        GraphMode::Undirected => println!(
            "sampled {}-node graph with {} edges → {}",
            graph.n_nodes(),
            graph.n_edges(),
            graph_path.display()
        ),
        GraphMode::Bipartite => println!(
            "sampled {}×{} two-mode graph with {} edges → {}",
            graph.n_rows(),
            graph.n_cols(),
            graph.n_edges(),
            graph_path.display()
        ),
    }
    println!(
        "ground truth → {}, labels → {}",
        truth_path.display(),
        labels_path.display()
    );
    if let Some(z_prime) = &truth.z_prime {
        let right_path = ctx.out_dir.join("truth_labels_right.csv");
        let labels: Vec<Option<usize>> = z_prime.iter().map(|&l| Some(l)).collect();
        io::write_labels(&right_path, &labels, None)?;
        println!("column-side labels → {}", right_path.display());
    }
    Ok(())
}

fn allocation_from(
    proportions: Option<&str>,
    sizes: Option<&str>,
    n: usize,
    k: usize,
) -> Result<Allocation> {
    let allocation = match (proportions, sizes) {
        (_, Some(spec)) => Allocation::Sizes(io::parse_sizes(spec)?),
        (Some(spec), None) => Allocation::Probabilities(io::parse_proportions(spec)?),
        (None, None) => Allocation::equal(n, k),
    };
    Ok(allocation)
}

/// Edge list with a sizing hint so isolated trailing nodes survive a
/// round trip through `load_edge_list`.
fn write_edge_list(path: &Path, g: &SparseGraph) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    match g.mode() {
        GraphMode::Undirected => {
            writeln!(w, "# n_nodes={}", g.n_nodes())?;
            for i in 0..g.n_nodes() {
                for &j in g.neighbors(i) {
                    if j > i {
                        writeln!(w, "{i},{j}")?;
                    }
                }
            }
        }
        GraphMode::Bipartite => {
            writeln!(w, "# n_rows={} n_cols={}", g.n_rows(), g.n_cols())?;
            for i in 0..g.n_rows() {
                for &j in g.neighbors(i) {
                    writeln!(w, "{i},{j}")?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn truth_json(truth: &GroundTruth) -> serde_json::Value {
    let mu = truth.latent_mu.as_ref().map(|mu| {
        mu.rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect::<Vec<_>>()
    });
    json!({
        "z": truth.z,
        "rho": truth.rho,
        "z_prime": truth.z_prime,
        "rho_prime": truth.rho_prime,
        "latent_mu": mu,
    })
}

// ---------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------

pub fn embed(args: &EmbedArgs, ctx: &Ctx) -> Result<()> {
    let input = require(args.input.as_deref(), "input")?;
    let mode = GraphMode::from(args.mode);
    let g = load_edge_list(input, mode)
        .with_context(|| format!("cannot load edge list {}", input.display()))?;

    let limit = match mode {
        GraphMode::Undirected => g.n_nodes(),
        GraphMode::Bipartite => g.n_rows().min(g.n_cols()),
    };
    let (m, elbows) = match args.dim_m {
        Some(m) => (m, None),
        None => {
            let probe = args.spectrum_len.min(limit);
            if probe < 2 {
                bail!("the graph is too small for an elbow scan; pass --dim-m");
            }
            let spectrum = match mode {
                GraphMode::Undirected => ase(&g, probe, ctx.seed)?.spectrum,
                GraphMode::Bipartite => dase(&g, probe, ctx.seed)?.0.spectrum,
            };
            let report = scree_elbows(&spectrum, args.elbow)?;
            let chosen = chosen_elbow(&report, args.elbow)?;
            println!(
                "elbow scan over {} values chose m = {chosen} (elbow {} of {:?})",
                spectrum.len(),
                args.elbow,
                report.elbows
            );
            (chosen, Some(report))
        }
    };

    match mode {
        GraphMode::Undirected => {
            let emb = ase(&g, m, ctx.seed)?;
            write_embedding(&ctx.out_dir.join("embedding.csv"), &emb, &g, &elbows)?;
        }
        GraphMode::Bipartite => {
            let (left, right) = dase(&g, m, ctx.seed)?;
            write_embedding(&ctx.out_dir.join("embedding_left.csv"), &left, &g, &elbows)?;
            write_embedding(&ctx.out_dir.join("embedding_right.csv"), &right, &g, &elbows)?;
        }
    }
    Ok(())
}

/// The requested elbow, falling back to the deepest one found when the
/// spectrum ran out early.
fn chosen_elbow(report: &ElbowReport, requested: usize) -> Result<usize> {
    if let Some(&m) = report.elbows.get(requested - 1) {
        return Ok(m);
    }
    let &last = report
        .elbows
        .last()
        .context("the spectrum yielded no elbows")?;
    println!(
        "only {} elbows found; using the deepest at m = {last}",
        report.elbows.len()
    );
    Ok(last)
}

fn write_embedding(
    path: &Path,
    emb: &Embedding,
    g: &SparseGraph,
    elbows: &Option<ElbowReport>,
) -> Result<()> {
    emb.write_csv(path)?;
    let nodes: Vec<String> = match emb.side {
        EmbeddingSide::Single | EmbeddingSide::Left => g.row_labels().to_vec(),
        EmbeddingSide::Right => g.col_labels().to_vec(),
    };
    let meta_path = sidecar_path(path);
    io::write_json(
        &meta_path,
        &json!({
            "side": emb.side,
            "m": emb.dim(),
            "spectrum": emb.spectrum,
            "signed_spectrum": emb.signed_spectrum,
            "elbows": elbows,
            "nodes": nodes,
        }),
    )?;
    println!(
        "embedding ({}×{}) → {} (meta {})",
        emb.n_nodes(),
        emb.dim(),
        path.display(),
        meta_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// transform
// ---------------------------------------------------------------------

pub fn transform(args: &TransformArgs, ctx: &Ctx) -> Result<()> {
    let input = require(args.input.as_deref(), "input")?;
    let positions = io::read_matrix(input)?;
    let nodes = match load_sidecar(input, None)? {
        Some((path, sidecar)) => {
            println!("node names from {}", path.display());
            sidecar.nodes
        }
        None => None,
    };
    let emb = Embedding {
        positions,
        spectrum: Vec::new(),
        signed_spectrum: Vec::new(),
        side: EmbeddingSide::Single,
    };
    let theta = transform_embedding(&emb)?;

    let path = ctx.out_dir.join("angles.csv");
    let mut w = csv::Writer::from_path(&path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let header: Vec<String> = (1..theta.source_dim)
        .map(|j| format!("theta{j}"))
        .collect();
    w.write_record(&header)?;
    for row in theta.angles.rows() {
        let record: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        w.write_record(&record)?;
    }
    w.flush()?;

    let meta_path = sidecar_path(&path);
    io::write_json(
        &meta_path,
        &Sidecar {
            source_dim: Some(theta.source_dim),
            excluded: Some(theta.excluded.clone()),
            nodes,
        },
    )?;
    println!(
        "angles ({}×{}) → {} (meta {}); {} isolated rows excluded",
        theta.angles.nrows(),
        theta.source_dim - 1,
        path.display(),
        meta_path.display(),
        theta.excluded.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// fit / select
// ---------------------------------------------------------------------

/// Reconstruct the spherical embedding a matrix CSV describes, plus node
/// names when the sidecar carries them.
fn load_angles(
    input: &Path,
    explicit_sidecar: Option<&Path>,
) -> Result<(SphericalEmbedding, Option<Vec<String>>)> {
    let angles = io::read_matrix(input)?;
    let mut excluded = Vec::new();
    let mut nodes = None;
    if let Some((path, sidecar)) = load_sidecar(input, explicit_sidecar)? {
        println!("sidecar {}", path.display());
        excluded = sidecar.excluded.unwrap_or_default();
        excluded.sort_unstable();
        excluded.dedup();
        nodes = sidecar.nodes;
    }
    let n_original = angles.nrows() + excluded.len();
    if let Some(&worst) = excluded.last() {
        if worst >= n_original {
            bail!("sidecar excludes row {worst}, but only {n_original} original rows exist");
        }
    }
    if let Some(names) = &nodes {
        if names.len() != n_original {
            bail!(
                "sidecar names {} nodes but the matrix implies {n_original}",
                names.len()
            );
        }
    }
    let theta = SphericalEmbedding {
        source_dim: angles.ncols() + 1,
        angles,
        excluded,
    };
    Ok((theta, nodes))
}

pub fn fit(args: &FitArgs, ctx: &Ctx) -> Result<()> {
    let input = require(args.input.as_deref(), "input")?;
    let d = require(args.dim, "dim")?;
    let k = require(args.communities, "communities")?;
    let (theta, nodes) = load_angles(input, args.sidecar.as_deref())?;
    let opts = EmOptions {
        max_iter: args.max_iter,
        tol: args.tol,
        restarts: args.restarts,
        seed: ctx.seed,
    };
    let fit = fit_constrained_em(&theta, d, k, &opts)?;

    let fit_path = ctx.out_dir.join("fit.json");
    io::write_json(
        &fit_path,
        &json!({
            "d": d,
            "k": k,
            "log_likelihood": fit.log_likelihood,
            "bic": fit.bic(),
            "n_iter": fit.n_iter,
            "converged": fit.converged,
            "params": fit.params,
        }),
    )?;
    let labels = scatter_labels(theta.n_original(), &theta.kept_indices(), &fit.hard_labels());
    let labels_path = ctx.out_dir.join("fit_labels.csv");
    io::write_labels(&labels_path, &labels, nodes.as_deref())?;
    println!(
        "log-likelihood {:.4} after {} iterations ({}), BIC {:.4}",
        fit.log_likelihood,
        fit.n_iter,
        if fit.converged {
            "converged"
        } else {
            "iteration cap"
        },
        fit.bic(),
    );
    println!(
        "fit → {}, labels → {}",
        fit_path.display(),
        labels_path.display()
    );
    Ok(())
}

pub fn select(args: &SelectArgs, ctx: &Ctx) -> Result<()> {
    let input = require(args.input.as_deref(), "input")?;
    let (theta, nodes) = load_angles(input, args.sidecar.as_deref())?;
    let opts = EmOptions {
        max_iter: args.max_iter,
        tol: args.tol,
        restarts: args.restarts,
        seed: ctx.seed,
    };
    let selection = select_model(&theta, args.kmax, &opts)?;

    let selection_path = ctx.out_dir.join("selection.json");
    io::write_json(&selection_path, &selection)?;
    let labels_path = ctx.out_dir.join("selection_labels.csv");
    io::write_labels(&labels_path, &selection.labels, nodes.as_deref())?;
    println!(
        "selected d = {}, K = {} (BIC {:.4}) over a {}×{} grid",
        selection.d_hat,
        selection.k_hat,
        selection.bic_surface[[selection.d_hat - 1, selection.k_hat - 1]],
        selection.bic_surface.nrows(),
        selection.bic_surface.ncols(),
    );
    println!(
        "selection → {}, labels → {}",
        selection_path.display(),
        labels_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------

pub fn experiment(args: &ExperimentArgs, ctx: &Ctx) -> Result<()> {
    let name = require(args.name.as_deref(), "name")?;
    let replications = require(args.replications, "replications")?;
    let report = run_experiment(name, replications, ctx.seed, &ctx.out_dir)?;
    println!(
        "{name}: {replications} replications in {:.1}s",
        report.elapsed_seconds
    );
    println!(
        "rows → {}, summary → {}",
        report.replication_csv.display(),
        report.summary_json.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------

pub fn evaluate(args: &EvaluateArgs, ctx: &Ctx) -> Result<()> {
    if let Some(matrix_path) = &args.normality {
        let matrix = io::read_matrix(matrix_path)?;
        let (skewness, kurtosis) = mardia_tests(matrix.view())?;
        let path = ctx.out_dir.join("evaluation.json");
        io::write_json(
            &path,
            &json!({"metric": "mardia", "skewness": skewness, "kurtosis": kurtosis}),
        )?;
        println!(
            "Mardia skewness {:.4} (p = {:.3e}), kurtosis {:.4} (p = {:.3e}) over {} rows",
            skewness.statistic, skewness.p_value, kurtosis.statistic, kurtosis.p_value,
            skewness.n_obs,
        );
        println!("report → {}", path.display());
        return Ok(());
    }
    let (truth_path, predicted_path) = match (&args.truth, &args.predicted) {
        (Some(t), Some(p)) => (t, p),
        _ => bail!("pass either --truth with --predicted, or --normality"),
    };
    let truth = io::read_labels(truth_path)?;
    let predicted = io::read_labels(predicted_path)?;
    let (reference, candidate, joined_by_key) = align_labels(&truth, &predicted)?;
    let ari = adjusted_rand_index(&reference, &candidate)?;
    let path = ctx.out_dir.join("evaluation.json");
    io::write_json(
        &path,
        &json!({
            "metric": "adjusted_rand_index",
            "value": ari,
            "n_nodes": reference.len(),
            "joined_by_key": joined_by_key,
        }),
    )?;
    println!(
        "adjusted Rand index {ari:.4} over {} nodes ({})",
        reference.len(),
        if joined_by_key {
            "joined by node key"
        } else {
            "aligned by position"
        }
    );
    println!("report → {}", path.display());
    Ok(())
}

/// Pair up two label files: by node key when both name the same node
/// set, by position when they merely have the same length.
#[allow(clippy::type_complexity)]
fn align_labels(
    truth: &[(String, Option<usize>)],
    predicted: &[(String, Option<usize>)],
) -> Result<(Vec<Option<usize>>, Vec<Option<usize>>, bool)> {
    let mut by_key = std::collections::HashMap::new();
    for (key, label) in truth {
        if by_key.insert(key.as_str(), *label).is_some() {
            bail!("node {key:?} appears twice in the reference labels");
        }
    }
    if predicted.len() == truth.len()
        && predicted.iter().all(|(key, _)| by_key.contains_key(key.as_str()))
    {
        let mut reference = Vec::with_capacity(predicted.len());
        let mut candidate = Vec::with_capacity(predicted.len());
        let mut seen = std::collections::HashSet::new();
        for (key, label) in predicted {
            if !seen.insert(key.as_str()) {
                bail!("node {key:?} appears twice in the predicted labels");
            }
            reference.push(by_key[key.as_str()]);
            candidate.push(*label);
        }
        return Ok((reference, candidate, true));
    }
    if predicted.len() == truth.len() {
        return Ok((
            truth.iter().map(|(_, l)| *l).collect(),
            predicted.iter().map(|(_, l)| *l).collect(),
            false,
        ));
    }
    bail!(
        "cannot align {} reference labels with {} predictions",
        truth.len(),
        predicted.len()
    )
}
