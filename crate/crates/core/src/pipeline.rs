//! End-to-end detection runs and the named replication studies.
//!
//! [`detect_communities`] chains the full procedure on a single graph:
//! pick a working embedding dimension from the scree plot (unless given),
//! embed, transform to spherical coordinates, sweep the (d, K) grid, and
//! label nodes. Bipartite graphs are decomposed once and then clustered
//! independently per side.
//!
//! [`run_experiment`] drives the simulation studies used to validate the
//! method: recovery benchmarks against the row-normalised and raw
//! embedding baselines, conditional moment checks of the angle
//! representation, per-community normality comparisons, and a repeated-
//! simulation check of the embedding's asymptotic covariance. Every study
//! writes a per-replication CSV plus a JSON summary and returns the
//! summary to the caller.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{arr2, Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::embed::{ase, dase, orthogonal_procrustes, scree_elbows, ElbowReport, Embedding};
use crate::error::{Error, Result};
use crate::evaluate::{
    adjusted_rand_index, ks_gaussian_score, mardia_tests, one_way_anova, paired_sign_test,
    Alternative, TestReport,
};
use crate::graph::{GraphMode, SparseGraph};
use crate::mixture::{
    assign_communities, fit_reference_gmm, reference_matrix, scatter_labels, select_model,
    select_reference_model, EmOptions, SelectionResult,
};
use crate::seed::{derive_seed, stream_rng};
use crate::simulate::{
    benchmark_replication, sample_adjacency_with_truth, sample_dcsbm, Allocation,
    BenchmarkProtocol, BlockModelSpec, RhoLaw,
};
use crate::spherical::{asymptotic_covariance_exact, relative_frobenius, transform_embedding};

// ---------------------------------------------------------------------
// Single-graph detection
// ---------------------------------------------------------------------

/// Settings for a full detection run.
#[derive(Debug, Clone, Copy)]
pub struct DetectionOptions {
    /// Number of angle columns to work with (the graph is embedded into
    /// one more Cartesian dimension than this). `None` selects it from
    /// the scree plot.
    pub m: Option<usize>,
    /// Which scree elbow picks the embedding dimension (1-based). The
    /// first elbow sits right after the dominant values, so later elbows
    /// deliberately over-shoot; the grid search absorbs the surplus
    /// dimensions as noise columns.
    pub elbow: usize,
    /// How many spectral values to inspect for the elbow scan.
    pub spectrum_len: usize,
    /// Largest candidate community count in the grid search.
    pub k_star: usize,
    /// Mixture-fit settings; `em.seed` also seeds the decomposition.
    pub em: EmOptions,
}

impl Default for DetectionOptions {
    fn default() -> Self {
        DetectionOptions {
            m: None,
            elbow: 3,
            spectrum_len: 25,
            k_star: 6,
            em: EmOptions::default(),
        }
    }
}

/// Outcome of the detection pipeline on one node set.
#[derive(Debug, Clone, Serialize)]
pub struct SideResult {
    /// Number of angle columns used.
    pub m: usize,
    /// Elbow scan behind the choice of `m`; absent when `m` was given.
    pub elbows: Option<ElbowReport>,
    pub selection: SelectionResult,
}

/// Detection output: one result for an undirected graph, one per node
/// set for a bipartite graph.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionOutput {
    Undirected(SideResult),
    Bipartite { left: SideResult, right: SideResult },
}

/// Run the full procedure on a graph: embed (choosing the dimension from
/// the scree plot when not fixed), transform rows to spherical
/// coordinates, sweep the (d, K) grid by BIC, and label every node.
///
/// Bipartite graphs are decomposed once by SVD; the left and right node
/// sets are then transformed, selected and labelled independently, so
/// each side's communities depend only on its own singular subspace.
///
/// Errors carry the stage they came from (embedding, dimension
/// selection, transform, selection).
pub fn detect_communities(g: &SparseGraph, opts: &DetectionOptions) -> Result<DetectionOutput> {
    if opts.k_star == 0 {
        return Err(Error::InvalidSpec("k_star must be at least 1".into()));
    }
    if opts.elbow == 0 {
        return Err(Error::InvalidSpec("elbow index is 1-based".into()));
    }
    let embed_seed = derive_seed(opts.em.seed, &[0x4445_5443]);
    match g.mode() {
        GraphMode::Undirected => {
            let (emb, m, elbows) = match opts.m {
                Some(m) => {
                    if m == 0 {
                        return Err(Error::InvalidSpec(
                            "at least one angle column is required".into(),
                        ));
                    }
                    let emb = ase(g, m + 1, embed_seed).map_err(|e| e.in_stage("embedding"))?;
                    (emb, m, None)
                }
                None => {
                    let want = opts.spectrum_len.min(g.n_nodes().saturating_sub(1));
                    if want < 2 {
                        return Err(Error::Degenerate(
                            "graph is too small for a scree-based dimension choice".into(),
                        ));
                    }
                    let probe = ase(g, want, embed_seed).map_err(|e| e.in_stage("embedding"))?;
                    let (dim, report) = dim_from_spectrum(&probe.spectrum, opts.elbow)
                        .map_err(|e| e.in_stage("dimension selection"))?;
                    let emb = probe.truncated(dim).map_err(|e| e.in_stage("embedding"))?;
                    (emb, dim - 1, Some(report))
                }
            };
            let side = cluster_side(&emb, m, elbows, opts.k_star, &opts.em)?;
            Ok(DetectionOutput::Undirected(side))
        }
        GraphMode::Bipartite => {
            let max_dim = g.n_rows().min(g.n_cols());
            let (left_emb, right_emb, m, elbows) = match opts.m {
                Some(m) => {
                    if m == 0 {
                        return Err(Error::InvalidSpec(
                            "at least one angle column is required".into(),
                        ));
                    }
                    let (l, r) =
                        dase(g, m + 1, embed_seed).map_err(|e| e.in_stage("embedding"))?;
                    (l, r, m, None)
                }
                None => {
                    let want = opts.spectrum_len.min(max_dim.saturating_sub(1));
                    if want < 2 {
                        return Err(Error::Degenerate(
                            "graph is too small for a scree-based dimension choice".into(),
                        ));
                    }
                    let (lp, rp) =
                        dase(g, want, embed_seed).map_err(|e| e.in_stage("embedding"))?;
                    let (dim, report) = dim_from_spectrum(&lp.spectrum, opts.elbow)
                        .map_err(|e| e.in_stage("dimension selection"))?;
                    let l = lp.truncated(dim).map_err(|e| e.in_stage("embedding"))?;
                    let r = rp.truncated(dim).map_err(|e| e.in_stage("embedding"))?;
                    (l, r, dim - 1, Some(report))
                }
            };
            let left_em = EmOptions {
                seed: derive_seed(opts.em.seed, &[0x4c45_4654]),
                ..opts.em
            };
            let right_em = EmOptions {
                seed: derive_seed(opts.em.seed, &[0x5249_4748]),
                ..opts.em
            };
            let left = cluster_side(&left_emb, m, elbows.clone(), opts.k_star, &left_em)?;
            let right = cluster_side(&right_emb, m, elbows, opts.k_star, &right_em)?;
            Ok(DetectionOutput::Bipartite { left, right })
        }
    }
}

/// Turn an elbow scan into an embedding dimension: the requested elbow
/// keeps that many spectral values (falling back to the last elbow found
/// when the spectrum runs out), floored at two dimensions so the
/// spherical transform has at least one angle column.
fn dim_from_spectrum(spectrum: &[f64], elbow: usize) -> Result<(usize, ElbowReport)> {
    let report = scree_elbows(spectrum, elbow)?;
    let pos = *report
        .elbows
        .last()
        .ok_or_else(|| Error::Degenerate("elbow scan found no split".into()))?;
    Ok((pos.max(2), report))
}

/// Transform one embedding to spherical coordinates and run the grid
/// search plus final labelling on it.
fn cluster_side(
    emb: &Embedding,
    m: usize,
    elbows: Option<ElbowReport>,
    k_star: usize,
    em: &EmOptions,
) -> Result<SideResult> {
    let theta = transform_embedding(emb).map_err(|e| e.in_stage("transform"))?;
    debug_assert_eq!(theta.angles.ncols(), m);
    let selection = select_model(&theta, k_star, em).map_err(|e| e.in_stage("selection"))?;
    Ok(SideResult {
        m,
        elbows,
        selection,
    })
}

// ---------------------------------------------------------------------
// Replication studies: shared plumbing
// ---------------------------------------------------------------------

/// Angle columns used throughout the replication studies (graphs are
/// embedded into one more Cartesian dimension).
const STUDY_ANGLE_COLS: usize = 10;
/// Largest candidate community count in the benchmark grid searches.
const STUDY_K_STAR: usize = 6;

/// The studies trade a little mixture-fit polish for wall-clock time:
/// with k-means++ seeding, two restarts and a coarser stopping tolerance
/// reproduce the selection behaviour of the library defaults at a small
/// fraction of the cost of a full benchmark run.
fn study_em(seed: u64) -> EmOptions {
    EmOptions {
        max_iter: 150,
        tol: 1e-4,
        restarts: 2,
        seed,
    }
}

/// Completed study: file locations plus the parsed summary.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    /// Replications per stratum/configuration (resimulations for the
    /// covariance study).
    pub n_replications: usize,
    pub seed: u64,
    pub elapsed_seconds: f64,
    pub replication_csv: PathBuf,
    pub summary_json: PathBuf,
    pub summary: ExperimentSummary,
}

/// Study-specific aggregate results.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "study", rename_all = "kebab-case")]
pub enum ExperimentSummary {
    Recovery(RecoverySummary),
    Moments(MomentStudySummary),
    Normality(NormalitySummary),
    ModelComparison(ModelComparisonSummary),
    EmbeddingClt(CltSummary),
}

/// Run one of the named replication studies, writing
/// `<name>_replications.csv` and `<name>_summary.json` under `out_dir`.
///
/// Available studies:
/// - `recovery-undirected` (strata K = 2 and K = 3; also available as
///   `recovery-undirected-k2` / `recovery-undirected-k3`): model
///   selection and labelling on undirected benchmark graphs with a fresh
///   Uniform(0,1) block matrix per replication, comparing the angle
///   representation against the row-normalised and raw embeddings.
/// - `recovery-bipartite`: the same comparison per side of bipartite
///   benchmark graphs (1000 × 1500 nodes, K = 2 vs K′ = 3).
/// - `angle-moments`: per-community means, covariances and per-column
///   Gaussian fits of the angle matrix under a fixed three-community
///   model at n = 2000.
/// - `angle-moments-by-n`: the same quantities as n grows.
/// - `angle-moments-by-assortativity`: the same quantities as the
///   cross-community connection probability grows.
/// - `normality-comparison`: per-community multivariate normality
///   p-values of the structured angle columns vs the row-normalised
///   embedding, with paired sign tests.
/// - `model-comparison`: paired ARIs of the angle model vs the
///   row-normalised baseline at the true (d, K).
/// - `embedding-clt`: hold one graph's truth fixed, resimulate the
///   adjacency `n_reps` times, and compare per-node embedding covariance
///   against its theoretical limit.
///
/// `n_reps` counts replications per stratum (or configuration), and
/// resimulations for `embedding-clt`. Replications run in parallel on
/// independent seed streams, so results do not depend on thread count.
pub fn run_experiment(
    name: &str,
    n_reps: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<ExperimentReport> {
    if n_reps == 0 {
        return Err(Error::InvalidSpec("n_reps must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{name}_replications.csv"));
    let started = Instant::now();
    let summary = match name {
        "recovery-undirected" => recovery_experiment(
            &[
                BenchmarkProtocol::UndirectedK2,
                BenchmarkProtocol::UndirectedK3,
            ],
            n_reps,
            seed,
            &csv_path,
        )?,
        "recovery-undirected-k2" => {
            recovery_experiment(&[BenchmarkProtocol::UndirectedK2], n_reps, seed, &csv_path)?
        }
        "recovery-undirected-k3" => {
            recovery_experiment(&[BenchmarkProtocol::UndirectedK3], n_reps, seed, &csv_path)?
        }
        "recovery-bipartite" => bipartite_experiment(n_reps, seed, &csv_path)?,
        "angle-moments" => moment_experiment(&moment_configs_fixed(), "n", n_reps, seed, &csv_path)?,
        "angle-moments-by-n" => {
            moment_experiment(&moment_configs_by_n(), "n", n_reps, seed, &csv_path)?
        }
        "angle-moments-by-assortativity" => moment_experiment(
            &moment_configs_by_assortativity(),
            "cross_block",
            n_reps,
            seed,
            &csv_path,
        )?,
        "normality-comparison" => normality_experiment(n_reps, seed, &csv_path)?,
        "model-comparison" => comparison_experiment(n_reps, seed, &csv_path)?,
        "embedding-clt" => clt_experiment(n_reps, seed, &csv_path)?,
        other => return Err(Error::UnknownExperiment(other.into())),
    };
    let summary_json = out_dir.join(format!("{name}_summary.json"));
    let report = ExperimentReport {
        name: name.into(),
        n_replications: n_reps,
        seed,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        replication_csv: csv_path,
        summary_json: summary_json.clone(),
        summary,
    };
    let file = std::fs::File::create(&summary_json)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report)?;
    Ok(report)
}

/// Map each replication index to a result in parallel, deterministically.
fn par_replications<T, F>(n_reps: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..n_reps).into_par_iter().map(f).collect()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

// ---------------------------------------------------------------------
// Recovery benchmarks
// ---------------------------------------------------------------------

/// Selection outcome of one representation on one replication.
#[derive(Debug, Clone, Copy)]
struct RepresentationMetrics {
    d_hat: usize,
    k_hat: usize,
    ari: f64,
}

/// One benchmark replication: metrics for the angle representation, the
/// row-normalised embedding, and the raw embedding.
#[derive(Debug, Clone)]
struct RecoveryRow {
    rep: usize,
    k_true: usize,
    angle: RepresentationMetrics,
    normed: RepresentationMetrics,
    raw: RepresentationMetrics,
}

/// Aggregate selection quality of one representation over a stratum.
#[derive(Debug, Clone, Serialize)]
pub struct RepresentationSummary {
    pub prop_correct_d: f64,
    pub prop_correct_k: f64,
    pub mean_ari: f64,
}

/// Aggregates for one benchmark stratum (one community-count setting, or
/// one side of the bipartite benchmark).
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryStratumSummary {
    pub stratum: String,
    pub k_true: usize,
    pub n_replications: usize,
    pub angle: RepresentationSummary,
    pub normed: RepresentationSummary,
    pub raw: RepresentationSummary,
    /// Paired sign test that the angle representation's ARI exceeds the
    /// row-normalised baseline's; `None` when every difference is zero.
    pub angle_vs_normed_ari: Option<TestReport>,
    /// Same against the raw embedding.
    pub angle_vs_raw_ari: Option<TestReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoverySummary {
    pub strata: Vec<RecoveryStratumSummary>,
}

const RECOVERY_HEADER: [&str; 11] = [
    "rep",
    "k_true",
    "d_hat_angle",
    "k_hat_angle",
    "ari_angle",
    "d_hat_normed",
    "k_hat_normed",
    "ari_normed",
    "d_hat_raw",
    "k_hat_raw",
    "ari_raw",
];

fn recovery_record(row: &RecoveryRow) -> Vec<String> {
    vec![
        row.rep.to_string(),
        row.k_true.to_string(),
        row.angle.d_hat.to_string(),
        row.angle.k_hat.to_string(),
        row.angle.ari.to_string(),
        row.normed.d_hat.to_string(),
        row.normed.k_hat.to_string(),
        row.normed.ari.to_string(),
        row.raw.d_hat.to_string(),
        row.raw.k_hat.to_string(),
        row.raw.ari.to_string(),
    ]
}

/// Grid selection plus ARI for all three representations of one
/// embedding. The angle matrix and the Cartesian reference share the
/// same decomposition: the angle matrix uses all its columns, the
/// references its first [`STUDY_ANGLE_COLS`] columns, so all three data
/// matrices have the same width and their BICs face the same penalty.
fn representation_metrics(
    emb_full: &Embedding,
    truth: &[Option<usize>],
    seed: u64,
) -> Result<(
    RepresentationMetrics,
    RepresentationMetrics,
    RepresentationMetrics,
)> {
    let theta = transform_embedding(emb_full)?;
    let cart = emb_full.truncated(STUDY_ANGLE_COLS)?;
    let sel_angle = select_model(&theta, STUDY_K_STAR, &study_em(derive_seed(seed, &[1])))?;
    let sel_normed =
        select_reference_model(&cart, true, STUDY_K_STAR, &study_em(derive_seed(seed, &[2])))?;
    let sel_raw =
        select_reference_model(&cart, false, STUDY_K_STAR, &study_em(derive_seed(seed, &[3])))?;
    Ok((
        selection_metrics(&sel_angle, truth)?,
        selection_metrics(&sel_normed, truth)?,
        selection_metrics(&sel_raw, truth)?,
    ))
}

fn selection_metrics(sel: &SelectionResult, truth: &[Option<usize>]) -> Result<RepresentationMetrics> {
    Ok(RepresentationMetrics {
        d_hat: sel.d_hat,
        k_hat: sel.k_hat,
        ari: adjusted_rand_index(truth, &sel.labels)?,
    })
}

fn recovery_replication(
    protocol: BenchmarkProtocol,
    rep: usize,
    seed: u64,
) -> Result<RecoveryRow> {
    let replication = benchmark_replication(protocol, rep, seed)?;
    let proc_seed = derive_seed(seed, &[0x5052_4f43, protocol as u64, rep as u64]);
    let emb_full = ase(
        &replication.graph,
        STUDY_ANGLE_COLS + 1,
        derive_seed(proc_seed, &[0]),
    )?;
    let truth = replication.truth.labels();
    let (angle, normed, raw) = representation_metrics(&emb_full, &truth, proc_seed)?;
    Ok(RecoveryRow {
        rep,
        k_true: replication.b.nrows(),
        angle,
        normed,
        raw,
    })
}

/// Summarise one stratum of recovery rows. The angle representation's
/// correct structured dimension is K − 1 (a rank-K block matrix gives K
/// Cartesian dimensions, one of which the transform folds away); the
/// Cartesian representations' is K.
fn summarize_stratum(stratum: &str, k_true: usize, rows: &[&RecoveryRow]) -> RecoveryStratumSummary {
    let n = rows.len() as f64;
    let summarize = |pick: &dyn Fn(&RecoveryRow) -> RepresentationMetrics,
                     d_true: usize|
     -> RepresentationSummary {
        RepresentationSummary {
            prop_correct_d: rows.iter().filter(|r| pick(r).d_hat == d_true).count() as f64 / n,
            prop_correct_k: rows.iter().filter(|r| pick(r).k_hat == k_true).count() as f64 / n,
            mean_ari: mean(&rows.iter().map(|r| pick(r).ari).collect::<Vec<_>>()),
        }
    };
    let angle = summarize(&|r| r.angle, k_true - 1);
    let normed = summarize(&|r| r.normed, k_true);
    let raw = summarize(&|r| r.raw, k_true);
    let deltas_normed: Vec<f64> = rows.iter().map(|r| r.angle.ari - r.normed.ari).collect();
    let deltas_raw: Vec<f64> = rows.iter().map(|r| r.angle.ari - r.raw.ari).collect();
    RecoveryStratumSummary {
        stratum: stratum.into(),
        k_true,
        n_replications: rows.len(),
        angle,
        normed,
        raw,
        angle_vs_normed_ari: paired_sign_test(&deltas_normed, Alternative::Greater).ok(),
        angle_vs_raw_ari: paired_sign_test(&deltas_raw, Alternative::Greater).ok(),
    }
}

fn recovery_experiment(
    protocols: &[BenchmarkProtocol],
    n_reps: usize,
    seed: u64,
    csv_path: &Path,
) -> Result<ExperimentSummary> {
    let mut all_rows: Vec<RecoveryRow> = Vec::with_capacity(protocols.len() * n_reps);
    for &protocol in protocols {
        let rows = par_replications(n_reps, |rep| recovery_replication(protocol, rep, seed))?;
        all_rows.extend(rows);
    }
    let header: Vec<String> = RECOVERY_HEADER.iter().map(|s| s.to_string()).collect();
    let records: Vec<Vec<String>> = all_rows.iter().map(recovery_record).collect();
    write_csv(csv_path, &header, &records)?;
    let strata = protocols
        .iter()
        .map(|&protocol| {
            let k_true = match protocol {
                BenchmarkProtocol::UndirectedK2 => 2,
                BenchmarkProtocol::UndirectedK3 => 3,
                BenchmarkProtocol::Bipartite => unreachable!("bipartite runs separately"),
            };
            let rows: Vec<&RecoveryRow> =
                all_rows.iter().filter(|r| r.k_true == k_true).collect();
            summarize_stratum(&format!("k{k_true}"), k_true, &rows)
        })
        .collect();
    Ok(ExperimentSummary::Recovery(RecoverySummary { strata }))
}

fn bipartite_replication(rep: usize, seed: u64) -> Result<(RecoveryRow, RecoveryRow)> {
    let protocol = BenchmarkProtocol::Bipartite;
    let replication = benchmark_replication(protocol, rep, seed)?;
    let proc_seed = derive_seed(seed, &[0x5052_4f43, protocol as u64, rep as u64]);
    let (left_emb, right_emb) = dase(
        &replication.graph,
        STUDY_ANGLE_COLS + 1,
        derive_seed(proc_seed, &[0]),
    )?;
    let left_truth = replication.truth.labels();
    let right_truth = replication
        .truth
        .labels_prime()
        .ok_or_else(|| Error::Degenerate("bipartite truth lacks right-side labels".into()))?;
    let (la, ln, lr) = representation_metrics(&left_emb, &left_truth, derive_seed(proc_seed, &[10]))?;
    let (ra, rn, rr) =
        representation_metrics(&right_emb, &right_truth, derive_seed(proc_seed, &[20]))?;
    Ok((
        RecoveryRow {
            rep,
            k_true: replication.b.nrows(),
            angle: la,
            normed: ln,
            raw: lr,
        },
        RecoveryRow {
            rep,
            k_true: replication.b.ncols(),
            angle: ra,
            normed: rn,
            raw: rr,
        },
    ))
}

fn bipartite_experiment(n_reps: usize, seed: u64, csv_path: &Path) -> Result<ExperimentSummary> {
    let pairs = par_replications(n_reps, |rep| bipartite_replication(rep, seed))?;
    let mut header = vec!["side".to_string()];
    header.extend(RECOVERY_HEADER.iter().map(|s| s.to_string()));
    let mut records = Vec::with_capacity(2 * pairs.len());
    for (left, right) in &pairs {
        let mut rec = vec!["left".to_string()];
        rec.extend(recovery_record(left));
        records.push(rec);
        let mut rec = vec!["right".to_string()];
        rec.extend(recovery_record(right));
        records.push(rec);
    }
    write_csv(csv_path, &header, &records)?;
    let lefts: Vec<&RecoveryRow> = pairs.iter().map(|(l, _)| l).collect();
    let rights: Vec<&RecoveryRow> = pairs.iter().map(|(_, r)| r).collect();
    let strata = vec![
        summarize_stratum("left", 2, &lefts),
        summarize_stratum("right", 3, &rights),
    ];
    Ok(ExperimentSummary::Recovery(RecoverySummary { strata }))
}

// ---------------------------------------------------------------------
// Conditional moment studies
// ---------------------------------------------------------------------

/// One graph configuration of a moment study.
#[derive(Debug, Clone)]
struct MomentConfig {
    /// Seed-stream tag, distinct per configuration.
    tag: u64,
    /// Value of the swept parameter (node count, or cross-community
    /// connection probability).
    value: f64,
    n: usize,
    b: Array2<f64>,
    rho_law: RhoLaw,
    /// Structured angle columns of the true model (block-matrix rank
    /// minus one).
    d_true: usize,
}

/// Three-community model with a full-rank block matrix and Uniform(0,1)
/// degree corrections, used by the moment and normality studies.
fn three_community_block() -> Array2<f64> {
    arr2(&[
        [0.66, 0.16, 0.59],
        [0.16, 0.27, 0.07],
        [0.59, 0.07, 0.81],
    ])
}

fn moment_configs_fixed() -> Vec<MomentConfig> {
    vec![MomentConfig {
        tag: 2000,
        value: 2000.0,
        n: 2000,
        b: three_community_block(),
        rho_law: RhoLaw::Uniform(0.0, 1.0),
        d_true: 2,
    }]
}

fn moment_configs_by_n() -> Vec<MomentConfig> {
    [100usize, 200, 500, 1000, 2000]
        .iter()
        .map(|&n| MomentConfig {
            tag: n as u64,
            value: n as f64,
            n,
            b: three_community_block(),
            rho_law: RhoLaw::Uniform(0.0, 1.0),
            d_true: 2,
        })
        .collect()
}

fn moment_configs_by_assortativity() -> Vec<MomentConfig> {
    [0.05f64, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35]
        .iter()
        .map(|&r| MomentConfig {
            tag: (r * 100.0).round() as u64,
            value: r,
            n: 500,
            b: arr2(&[[0.5, r], [r, 0.35]]),
            rho_law: RhoLaw::Uniform(0.0, 1.0),
            d_true: 1,
        })
        .collect()
}

/// Moments of one node group on one replication. `community` 0 pools
/// all non-isolated nodes; communities are otherwise 1-based.
#[derive(Debug, Clone)]
struct MomentRow {
    rep: usize,
    value: f64,
    community: usize,
    n_members: usize,
    /// Column means of the angle matrix over the group.
    means: Vec<f64>,
    /// Covariance diagonal.
    vars: Vec<f64>,
    /// Covariance upper triangle (i < j), row-major.
    covs: Vec<f64>,
    /// Per-column Kolmogorov–Smirnov distance to a moment-matched
    /// Gaussian.
    ks: Vec<f64>,
}

fn upper_index(m: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < m);
    i * (2 * m - i - 1) / 2 + (j - i - 1)
}

/// Group moments with denominator ℓ (matching the covariance convention
/// of the normality tests). Groups with fewer than two members produce
/// NaN entries.
fn moment_row(
    rep: usize,
    value: f64,
    community: usize,
    data: ArrayView2<f64>,
    rows: &[usize],
) -> MomentRow {
    let m = data.ncols();
    let l = rows.len();
    let mut means = vec![f64::NAN; m];
    let mut vars = vec![f64::NAN; m];
    let mut covs = vec![f64::NAN; m * (m - 1) / 2];
    let mut ks = vec![f64::NAN; m];
    if l >= 2 {
        for j in 0..m {
            means[j] = rows.iter().map(|&r| data[[r, j]]).sum::<f64>() / l as f64;
        }
        for i in 0..m {
            for j in i..m {
                let c = rows
                    .iter()
                    .map(|&r| (data[[r, i]] - means[i]) * (data[[r, j]] - means[j]))
                    .sum::<f64>()
                    / l as f64;
                if i == j {
                    vars[i] = c;
                } else {
                    covs[upper_index(m, i, j)] = c;
                }
            }
        }
        for j in 0..m {
            let col: Vec<f64> = rows.iter().map(|&r| data[[r, j]]).collect();
            ks[j] = ks_gaussian_score(&col).unwrap_or(f64::NAN);
        }
    }
    MomentRow {
        rep,
        value,
        community,
        n_members: l,
        means,
        vars,
        covs,
        ks,
    }
}

/// Row indices (into the kept data matrix) of one true community.
fn community_rows(kept: &[usize], z: &[usize], community: usize) -> Vec<usize> {
    kept.iter()
        .enumerate()
        .filter(|&(_, &orig)| z[orig] == community)
        .map(|(row, _)| row)
        .collect()
}

fn moment_replication(cfg: &MomentConfig, rep: usize, seed: u64) -> Result<Vec<MomentRow>> {
    let rep_seed = derive_seed(seed, &[0x4d4f_4d54, cfg.tag, rep as u64]);
    let k = cfg.b.nrows();
    let spec = BlockModelSpec::undirected(
        cfg.n,
        cfg.b.clone(),
        Allocation::equal(cfg.n, k),
        cfg.rho_law,
        rep_seed,
    );
    let (g, truth) = sample_dcsbm(&spec)?;
    let emb = ase(&g, STUDY_ANGLE_COLS + 1, derive_seed(rep_seed, &[1]))?;
    let theta = transform_embedding(&emb)?;
    let kept = theta.kept_indices();
    let mut rows = Vec::with_capacity(k + 1);
    let pooled: Vec<usize> = (0..theta.angles.nrows()).collect();
    rows.push(moment_row(rep, cfg.value, 0, theta.angles.view(), &pooled));
    for c in 0..k {
        let members = community_rows(&kept, &truth.z, c);
        rows.push(moment_row(
            rep,
            cfg.value,
            c + 1,
            theta.angles.view(),
            &members,
        ));
    }
    Ok(rows)
}

/// Aggregates for one community under one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct CommunityMomentSummary {
    /// 0 pools all non-isolated nodes.
    pub community: usize,
    pub mean_members: f64,
    /// Per-column mean (over replications) of the group mean.
    pub mean_profile: Vec<f64>,
    /// Largest deviation of a noise-column mean from π.
    pub noise_mean_max_dev: f64,
    /// Median |covariance| between the first angle column and each noise
    /// column.
    pub median_abs_cross_cov: f64,
    /// Per-noise-column mean variance.
    pub mean_noise_vars: Vec<f64>,
    /// Per-column mean Kolmogorov–Smirnov distance.
    pub mean_ks: Vec<f64>,
}

/// Aggregates for one swept configuration.
#[derive(Debug, Clone, Serialize)]
pub struct MomentConfigSummary {
    pub value: f64,
    pub n_nodes: usize,
    pub d_true: usize,
    pub communities: Vec<CommunityMomentSummary>,
    /// Per-noise-column ANOVA p-value for equal variance means across
    /// communities (smaller means the noise variances separate).
    pub noise_var_anova_p: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentStudySummary {
    /// Angle columns (data-matrix width).
    pub m: usize,
    pub configs: Vec<MomentConfigSummary>,
}

fn moment_header(m: usize, value_name: &str) -> Vec<String> {
    let mut header = vec![
        "rep".to_string(),
        value_name.to_string(),
        "community".to_string(),
        "n_members".to_string(),
    ];
    header.extend((1..=m).map(|j| format!("mean_{j}")));
    header.extend((1..=m).map(|j| format!("var_{j}")));
    for i in 1..=m {
        for j in (i + 1)..=m {
            header.push(format!("cov_{i}_{j}"));
        }
    }
    header.extend((1..=m).map(|j| format!("ks_{j}")));
    header
}

fn moment_record(row: &MomentRow) -> Vec<String> {
    let mut rec = vec![
        row.rep.to_string(),
        row.value.to_string(),
        row.community.to_string(),
        row.n_members.to_string(),
    ];
    rec.extend(row.means.iter().map(|v| v.to_string()));
    rec.extend(row.vars.iter().map(|v| v.to_string()));
    rec.extend(row.covs.iter().map(|v| v.to_string()));
    rec.extend(row.ks.iter().map(|v| v.to_string()));
    rec
}

fn summarize_moment_config(cfg: &MomentConfig, rows: &[&MomentRow]) -> MomentConfigSummary {
    let m = STUDY_ANGLE_COLS;
    let k = cfg.b.nrows();
    let d = cfg.d_true;
    let mut communities = Vec::with_capacity(k + 1);
    for c in 0..=k {
        let group: Vec<&&MomentRow> = rows.iter().filter(|r| r.community == c).collect();
        let col_mean = |pick: &dyn Fn(&MomentRow) -> &[f64], j: usize| -> f64 {
            mean(
                &group
                    .iter()
                    .map(|r| pick(r)[j])
                    .filter(|v| v.is_finite())
                    .collect::<Vec<_>>(),
            )
        };
        let mean_profile: Vec<f64> = (0..m).map(|j| col_mean(&|r| &r.means, j)).collect();
        let noise_mean_max_dev = mean_profile[d..]
            .iter()
            .map(|v| (v - std::f64::consts::PI).abs())
            .fold(f64::NAN, f64::max);
        let cross: Vec<f64> = group
            .iter()
            .flat_map(|r| (d..m).map(|j| r.covs[upper_index(m, 0, j)].abs()).collect::<Vec<_>>())
            .collect();
        communities.push(CommunityMomentSummary {
            community: c,
            mean_members: mean(&group.iter().map(|r| r.n_members as f64).collect::<Vec<_>>()),
            noise_mean_max_dev,
            median_abs_cross_cov: median(cross),
            mean_noise_vars: (d..m).map(|j| col_mean(&|r| &r.vars, j)).collect(),
            mean_ks: (0..m).map(|j| col_mean(&|r| &r.ks, j)).collect(),
            mean_profile,
        });
    }
    // One ANOVA per noise column: do the per-replication community
    // variances share a mean across communities?
    let noise_var_anova_p = (d..m)
        .map(|j| {
            let groups: Vec<Vec<f64>> = (1..=k)
                .map(|c| {
                    rows.iter()
                        .filter(|r| r.community == c)
                        .map(|r| r.vars[j])
                        .filter(|v| v.is_finite())
                        .collect()
                })
                .collect();
            one_way_anova(&groups)
                .map(|t| t.p_value)
                .unwrap_or(f64::NAN)
        })
        .collect();
    MomentConfigSummary {
        value: cfg.value,
        n_nodes: cfg.n,
        d_true: d,
        communities,
        noise_var_anova_p,
    }
}

fn moment_experiment(
    configs: &[MomentConfig],
    value_name: &str,
    n_reps: usize,
    seed: u64,
    csv_path: &Path,
) -> Result<ExperimentSummary> {
    let mut all_rows: Vec<MomentRow> = Vec::new();
    let mut summaries = Vec::with_capacity(configs.len());
    for cfg in configs {
        let per_rep = par_replications(n_reps, |rep| moment_replication(cfg, rep, seed))?;
        let rows: Vec<MomentRow> = per_rep.into_iter().flatten().collect();
        let refs: Vec<&MomentRow> = rows.iter().collect();
        summaries.push(summarize_moment_config(cfg, &refs));
        all_rows.extend(rows);
    }
    let records: Vec<Vec<String>> = all_rows.iter().map(moment_record).collect();
    write_csv(csv_path, &moment_header(STUDY_ANGLE_COLS, value_name), &records)?;
    Ok(ExperimentSummary::Moments(MomentStudySummary {
        m: STUDY_ANGLE_COLS,
        configs: summaries,
    }))
}

// ---------------------------------------------------------------------
// Normality comparison
// ---------------------------------------------------------------------

/// Per-community multivariate normality p-values of both representations
/// on one replication.
#[derive(Debug, Clone)]
struct NormalityRow {
    rep: usize,
    community: usize,
    angle_skew_p: f64,
    angle_kurt_p: f64,
    normed_skew_p: f64,
    normed_kurt_p: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalitySummary {
    /// (replication, community) pairs entering the sign tests.
    pub n_pairs: usize,
    pub mean_angle_skew_p: f64,
    pub mean_angle_kurt_p: f64,
    pub mean_normed_skew_p: f64,
    pub mean_normed_kurt_p: f64,
    /// Paired sign test that skewness p-values from the structured angle
    /// columns stochastically exceed those from the row-normalised
    /// embedding.
    pub skewness_sign_test: Option<TestReport>,
    /// The same for kurtosis p-values.
    pub kurtosis_sign_test: Option<TestReport>,
}

/// Copy the first `cols` columns of the given rows into a dense matrix.
fn gather_rows(data: ArrayView2<f64>, rows: &[usize], cols: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), cols));
    for (r, &i) in rows.iter().enumerate() {
        for c in 0..cols {
            out[[r, c]] = data[[i, c]];
        }
    }
    out
}

fn normality_replication(rep: usize, seed: u64) -> Result<Vec<NormalityRow>> {
    let rep_seed = derive_seed(seed, &[0x4e4f_524d, rep as u64]);
    let k = 3;
    let spec = BlockModelSpec::undirected(
        2000,
        three_community_block(),
        Allocation::equal(2000, k),
        RhoLaw::Uniform(0.0, 1.0),
        rep_seed,
    );
    let (g, truth) = sample_dcsbm(&spec)?;
    let emb = ase(&g, STUDY_ANGLE_COLS + 1, derive_seed(rep_seed, &[1]))?;
    let theta = transform_embedding(&emb)?;
    // Structured dimensions of the true model: the angle representation
    // concentrates on K − 1 columns, the normalised embedding on K.
    let d_angle = k - 1;
    let d_normed = k;
    // The comparison object for the baseline is the K leading Cartesian
    // columns scaled to unit row norm — points on the sphere in R^K,
    // where each community traces a curved shell.
    let cart = emb.truncated(d_normed)?;
    let (normed, kept_normed) = reference_matrix(&cart, true);
    let kept_theta = theta.kept_indices();
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let angle_rows = community_rows(&kept_theta, &truth.z, c);
        let normed_rows = community_rows(&kept_normed, &truth.z, c);
        let angle_block = gather_rows(theta.angles.view(), &angle_rows, d_angle);
        let normed_block = gather_rows(normed.view(), &normed_rows, d_normed);
        let (a_skew, a_kurt) = mardia_tests(angle_block.view())?;
        let (n_skew, n_kurt) = mardia_tests(normed_block.view())?;
        out.push(NormalityRow {
            rep,
            community: c + 1,
            angle_skew_p: a_skew.p_value,
            angle_kurt_p: a_kurt.p_value,
            normed_skew_p: n_skew.p_value,
            normed_kurt_p: n_kurt.p_value,
        });
    }
    Ok(out)
}

fn normality_experiment(n_reps: usize, seed: u64, csv_path: &Path) -> Result<ExperimentSummary> {
    let per_rep = par_replications(n_reps, |rep| normality_replication(rep, seed))?;
    let rows: Vec<NormalityRow> = per_rep.into_iter().flatten().collect();
    let header: Vec<String> = [
        "rep",
        "community",
        "skew_p_angle",
        "kurt_p_angle",
        "skew_p_normed",
        "kurt_p_normed",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.rep.to_string(),
                r.community.to_string(),
                r.angle_skew_p.to_string(),
                r.angle_kurt_p.to_string(),
                r.normed_skew_p.to_string(),
                r.normed_kurt_p.to_string(),
            ]
        })
        .collect();
    write_csv(csv_path, &header, &records)?;
    let skew_deltas: Vec<f64> = rows.iter().map(|r| r.angle_skew_p - r.normed_skew_p).collect();
    let kurt_deltas: Vec<f64> = rows.iter().map(|r| r.angle_kurt_p - r.normed_kurt_p).collect();
    Ok(ExperimentSummary::Normality(NormalitySummary {
        n_pairs: rows.len(),
        mean_angle_skew_p: mean(&rows.iter().map(|r| r.angle_skew_p).collect::<Vec<_>>()),
        mean_angle_kurt_p: mean(&rows.iter().map(|r| r.angle_kurt_p).collect::<Vec<_>>()),
        mean_normed_skew_p: mean(&rows.iter().map(|r| r.normed_skew_p).collect::<Vec<_>>()),
        mean_normed_kurt_p: mean(&rows.iter().map(|r| r.normed_kurt_p).collect::<Vec<_>>()),
        skewness_sign_test: paired_sign_test(&skew_deltas, Alternative::Greater).ok(),
        kurtosis_sign_test: paired_sign_test(&kurt_deltas, Alternative::Greater).ok(),
    }))
}

// ---------------------------------------------------------------------
// Fixed-model comparison
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ComparisonRow {
    rep: usize,
    ari_angle: f64,
    ari_normed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelComparisonSummary {
    pub n_replications: usize,
    pub mean_ari_angle: f64,
    pub mean_ari_normed: f64,
    /// Paired sign test that the angle model's ARI exceeds the
    /// row-normalised baseline's.
    pub sign_test: Option<TestReport>,
}

fn comparison_replication(rep: usize, seed: u64) -> Result<ComparisonRow> {
    let rep_seed = derive_seed(seed, &[0x434f_4d50, rep as u64]);
    let k = 2;
    let spec = BlockModelSpec::undirected(
        1000,
        arr2(&[[0.10, 0.05], [0.05, 0.15]]),
        Allocation::equal(1000, k),
        RhoLaw::Beta(2.0, 1.0),
        rep_seed,
    );
    let (g, truth) = sample_dcsbm(&spec)?;
    let emb = ase(&g, STUDY_ANGLE_COLS + 1, derive_seed(rep_seed, &[1]))?;
    let truth_labels = truth.labels();
    // Angle model at its true structure: d = K − 1 structured columns.
    let theta = transform_embedding(&emb)?;
    let (angle_labels, _) =
        assign_communities(&theta, k - 1, k, &study_em(derive_seed(rep_seed, &[2])))?;
    // Row-normalised baseline at its true structure: an unconstrained
    // K-component mixture on the K leading Cartesian columns scaled to
    // unit row norm.
    let cart = emb.truncated(k)?;
    let (normed, kept) = reference_matrix(&cart, true);
    let fit = fit_reference_gmm(&normed, k, k, &study_em(derive_seed(rep_seed, &[3])))?;
    let normed_labels = scatter_labels(cart.n_nodes(), &kept, &fit.hard_labels());
    Ok(ComparisonRow {
        rep,
        ari_angle: adjusted_rand_index(&truth_labels, &angle_labels)?,
        ari_normed: adjusted_rand_index(&truth_labels, &normed_labels)?,
    })
}

fn comparison_experiment(n_reps: usize, seed: u64, csv_path: &Path) -> Result<ExperimentSummary> {
    let rows = par_replications(n_reps, |rep| comparison_replication(rep, seed))?;
    let header: Vec<String> = ["rep", "ari_angle", "ari_normed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.rep.to_string(),
                r.ari_angle.to_string(),
                r.ari_normed.to_string(),
            ]
        })
        .collect();
    write_csv(csv_path, &header, &records)?;
    let deltas: Vec<f64> = rows.iter().map(|r| r.ari_angle - r.ari_normed).collect();
    Ok(ExperimentSummary::ModelComparison(ModelComparisonSummary {
        n_replications: rows.len(),
        mean_ari_angle: mean(&rows.iter().map(|r| r.ari_angle).collect::<Vec<_>>()),
        mean_ari_normed: mean(&rows.iter().map(|r| r.ari_normed).collect::<Vec<_>>()),
        sign_test: paired_sign_test(&deltas, Alternative::Greater).ok(),
    }))
}

// ---------------------------------------------------------------------
// Embedding covariance check
// ---------------------------------------------------------------------

/// Nodes whose embedding scatter is tracked across resimulations.
const CLT_TRACKED_NODES: usize = 8;

#[derive(Debug, Clone, Serialize)]
pub struct CltNodeSummary {
    pub node: usize,
    pub community: usize,
    pub rho: f64,
    /// Sample covariance (over resimulations) of the node's aligned
    /// embedding, row-major.
    pub empirical: Vec<Vec<f64>>,
    /// Theoretical limit covariance divided by the node count.
    pub theoretical: Vec<Vec<f64>>,
    /// ‖empirical − theoretical‖_F / ‖theoretical‖_F.
    pub relative_frobenius: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltSummary {
    pub n_resimulations: usize,
    pub n_nodes: usize,
    pub nodes: Vec<CltNodeSummary>,
}

/// Hold one sampled truth (labels and degree corrections) fixed,
/// resimulate the adjacency `n_resims` times, align each embedding to
/// the true positions, and compare each tracked node's empirical
/// covariance with its theoretical limit.
fn clt_experiment(n_resims: usize, seed: u64, csv_path: &Path) -> Result<ExperimentSummary> {
    let n = 1000;
    let mu = arr2(&[[0.25, 0.75], [0.75, 0.25]]);
    let psi = [0.5, 0.5];
    let rho_law = RhoLaw::Uniform(0.0, 1.0);
    let spec = BlockModelSpec::from_positions(
        n,
        mu.clone(),
        Allocation::Probabilities(psi.to_vec()),
        rho_law,
        derive_seed(seed, &[0x434c_5400]),
    );
    let b = spec.b.clone();
    let (_, truth) = sample_dcsbm(&spec)?;
    // True positions: row i is ρ_i μ_{z_i}.
    let mut positions = Array2::zeros((n, mu.ncols()));
    for i in 0..n {
        for j in 0..mu.ncols() {
            positions[[i, j]] = truth.rho[i] * mu[[truth.z[i], j]];
        }
    }
    let tracked = CLT_TRACKED_NODES.min(n);
    let aligned: Vec<Vec<[f64; 2]>> = par_replications(n_resims, |t| {
        let mut rng = stream_rng(seed, &[0x434c_5401, t as u64]);
        let g = sample_adjacency_with_truth(&b, &truth.z, &truth.rho, &mut rng)?;
        let emb = ase(&g, mu.ncols(), derive_seed(seed, &[0x434c_5402, t as u64]))?;
        let q = orthogonal_procrustes(&emb.positions, &positions)?;
        let rotated = emb.positions.dot(&q);
        Ok((0..tracked).map(|i| [rotated[[i, 0]], rotated[[i, 1]]]).collect())
    })?;

    let header: Vec<String> = ["resim", "node", "x1", "x2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut records = Vec::with_capacity(n_resims * tracked);
    for (t, nodes) in aligned.iter().enumerate() {
        for (i, xy) in nodes.iter().enumerate() {
            records.push(vec![
                t.to_string(),
                i.to_string(),
                xy[0].to_string(),
                xy[1].to_string(),
            ]);
        }
    }
    write_csv(csv_path, &header, &records)?;

    let mut nodes = Vec::with_capacity(tracked);
    for i in 0..tracked {
        let samples: Vec<[f64; 2]> = aligned.iter().map(|resim| resim[i]).collect();
        let empirical = sample_covariance_2d(&samples);
        let limit =
            asymptotic_covariance_exact(&mu, &psi, &rho_law, truth.z[i], truth.rho[i])?;
        let theoretical = limit.sigma.mapv(|v| v / n as f64);
        nodes.push(CltNodeSummary {
            node: i,
            community: truth.z[i],
            rho: truth.rho[i],
            relative_frobenius: relative_frobenius(&empirical, &theoretical),
            empirical: matrix_rows(&empirical),
            theoretical: matrix_rows(&theoretical),
        });
    }
    Ok(ExperimentSummary::EmbeddingClt(CltSummary {
        n_resimulations: n_resims,
        n_nodes: n,
        nodes,
    }))
}

/// Unbiased 2×2 sample covariance of a set of points.
fn sample_covariance_2d(samples: &[[f64; 2]]) -> Array2<f64> {
    let t = samples.len();
    let mut mean = [0.0; 2];
    for s in samples {
        mean[0] += s[0];
        mean[1] += s[1];
    }
    mean[0] /= t as f64;
    mean[1] /= t as f64;
    let mut cov = Array2::zeros((2, 2));
    for s in samples {
        let d = [s[0] - mean[0], s[1] - mean[1]];
        for a in 0..2 {
            for b in 0..2 {
                cov[[a, b]] += d[a] * d[b];
            }
        }
    }
    cov.mapv_inplace(|v| v / (t as f64 - 1.0));
    cov
}

fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::sample_dcscbm;

    fn strong_two_block(n: usize, seed: u64) -> (SparseGraph, Vec<Option<usize>>) {
        let spec = BlockModelSpec::undirected(
            n,
            arr2(&[[0.6, 0.05], [0.05, 0.6]]),
            Allocation::equal(n, 2),
            RhoLaw::Constant(1.0),
            seed,
        );
        let (g, truth) = sample_dcsbm(&spec).unwrap();
        (g, truth.labels())
    }

    fn fast_em(seed: u64) -> EmOptions {
        EmOptions {
            max_iter: 100,
            tol: 1e-4,
            restarts: 2,
            seed,
        }
    }

    #[test]
    fn detects_two_communities_with_fixed_dimension() {
        let (g, truth) = strong_two_block(120, 11);
        let opts = DetectionOptions {
            m: Some(1),
            k_star: 3,
            em: fast_em(5),
            ..DetectionOptions::default()
        };
        let out = detect_communities(&g, &opts).unwrap();
        let side = match out {
            DetectionOutput::Undirected(side) => side,
            DetectionOutput::Bipartite { .. } => panic!("undirected graph"),
        };
        assert_eq!(side.m, 1);
        assert!(side.elbows.is_none());
        assert_eq!(side.selection.k_hat, 2);
        let ari = adjusted_rand_index(&truth, &side.selection.labels).unwrap();
        assert!(ari > 0.9, "ari = {ari}");
    }

    #[test]
    fn scree_based_dimension_choice_reports_elbows() {
        let (g, truth) = strong_two_block(120, 13);
        let opts = DetectionOptions {
            m: None,
            spectrum_len: 12,
            k_star: 3,
            em: fast_em(7),
            ..DetectionOptions::default()
        };
        let out = detect_communities(&g, &opts).unwrap();
        let side = match out {
            DetectionOutput::Undirected(side) => side,
            DetectionOutput::Bipartite { .. } => panic!("undirected graph"),
        };
        let report = side.elbows.expect("elbow scan must be recorded");
        assert_eq!(*report.elbows.last().unwrap(), side.m + 1);
        assert!(side.m >= 1);
        assert_eq!(side.selection.k_hat, 2);
        let ari = adjusted_rand_index(&truth, &side.selection.labels).unwrap();
        assert!(ari > 0.8, "ari = {ari}");
    }

    #[test]
    fn empty_graph_fails_in_the_selection_stage() {
        let g = SparseGraph::from_edges(40, &[]).unwrap();
        let opts = DetectionOptions {
            m: Some(2),
            k_star: 3,
            em: fast_em(3),
            ..DetectionOptions::default()
        };
        let err = detect_communities(&g, &opts).unwrap_err();
        match err {
            Error::Stage { stage, .. } => assert_eq!(stage, "selection"),
            other => panic!("expected a stage-tagged error, got {other}"),
        }
    }

    #[test]
    fn bipartite_sides_are_clustered_independently_and_deterministically() {
        let spec = BlockModelSpec::bipartite(
            80,
            100,
            arr2(&[[0.7, 0.08], [0.08, 0.65]]),
            Allocation::equal(80, 2),
            Allocation::equal(100, 2),
            RhoLaw::Constant(1.0),
            RhoLaw::Constant(1.0),
            21,
        );
        let (g, truth) = sample_dcscbm(&spec).unwrap();
        let opts = DetectionOptions {
            m: Some(1),
            k_star: 3,
            em: fast_em(9),
            ..DetectionOptions::default()
        };
        let run = |g: &SparseGraph| match detect_communities(g, &opts).unwrap() {
            DetectionOutput::Bipartite { left, right } => (left, right),
            DetectionOutput::Undirected(_) => panic!("bipartite graph"),
        };
        let (left, right) = run(&g);
        assert_eq!(left.selection.k_hat, 2);
        assert_eq!(right.selection.k_hat, 2);
        assert_eq!(left.selection.labels.len(), 80);
        assert_eq!(right.selection.labels.len(), 100);
        let left_ari =
            adjusted_rand_index(&truth.labels(), &left.selection.labels).unwrap();
        let right_ari =
            adjusted_rand_index(&truth.labels_prime().unwrap(), &right.selection.labels).unwrap();
        assert!(left_ari > 0.9, "left ari = {left_ari}");
        assert!(right_ari > 0.9, "right ari = {right_ari}");
        // Stage determinism: identical inputs give identical outputs.
        let (left2, right2) = run(&g);
        assert_eq!(left.selection.labels, left2.selection.labels);
        assert_eq!(right.selection.labels, right2.selection.labels);
        assert_eq!(left.selection.bic_surface, left2.selection.bic_surface);
    }

    #[test]
    fn unknown_experiment_name_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment("no-such-study", 1, 0, dir.path()).unwrap_err();
        assert!(matches!(err, Error::UnknownExperiment(_)));
    }

    #[test]
    fn zero_replications_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment("model-comparison", 0, 0, dir.path()).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)));
    }

    #[test]
    fn model_comparison_smoke_run_emits_schema_valid_output() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment("model-comparison", 2, 42, dir.path()).unwrap();
        assert_eq!(report.n_replications, 2);
        let summary = match &report.summary {
            ExperimentSummary::ModelComparison(s) => s,
            other => panic!("unexpected summary {other:?}"),
        };
        assert_eq!(summary.n_replications, 2);
        assert!(summary.mean_ari_angle.is_finite());
        // CSV: header plus one row per replication.
        let csv = std::fs::read_to_string(&report.replication_csv).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().next().unwrap().starts_with("rep,ari_angle"));
        // JSON round-trips and carries the study tag.
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&report.summary_json).unwrap()).unwrap();
        assert_eq!(json["summary"]["study"], "model-comparison");
        assert_eq!(json["name"], "model-comparison");
    }

    #[test]
    fn two_ray_graphs_favour_angle_model_on_average() {
        // Paired comparison on two-community graphs with a fixed, well
        // separated block matrix: both representations recover the partition
        // almost perfectly, and the angle model keeps a consistent average
        // edge over the row-normalised baseline. Individual pairs tie often
        // at this separation, so the aggregate ordering is the stable
        // signal; the decisive per-pair sign test lives in the harder
        // random-block recovery benchmark.
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment("model-comparison", 100, 99, dir.path()).unwrap();
        let summary = match &report.summary {
            ExperimentSummary::ModelComparison(s) => s,
            other => panic!("unexpected summary {other:?}"),
        };
        assert!(summary.mean_ari_angle > 0.85);
        assert!(summary.mean_ari_normed > 0.85);
        assert!(summary.mean_ari_angle > summary.mean_ari_normed);
        let sign = summary.sign_test.as_ref().expect("informative pairs");
        assert!(sign.n_obs >= 50, "too few untied pairs: {}", sign.n_obs);
    }

    #[test]
    fn model_comparison_is_deterministic_under_seed() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_experiment("model-comparison", 2, 7, dir.path()).unwrap();
        let b = run_experiment("model-comparison", 2, 7, dir.path()).unwrap();
        let va = serde_json::to_value(&a.summary).unwrap();
        let vb = serde_json::to_value(&b.summary).unwrap();
        assert_eq!(va, vb);
    }

    #[test]
    fn clt_smoke_run_tracks_nodes() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment("embedding-clt", 3, 1, dir.path()).unwrap();
        let summary = match &report.summary {
            ExperimentSummary::EmbeddingClt(s) => s,
            other => panic!("unexpected summary {other:?}"),
        };
        assert_eq!(summary.n_resimulations, 3);
        assert_eq!(summary.nodes.len(), CLT_TRACKED_NODES);
        for node in &summary.nodes {
            assert!(node.rho > 0.0 && node.rho < 1.0);
            assert!(node.relative_frobenius.is_finite());
            assert_eq!(node.empirical.len(), 2);
            assert_eq!(node.theoretical.len(), 2);
        }
        let csv = std::fs::read_to_string(&report.replication_csv).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * CLT_TRACKED_NODES);
    }

    #[test]
    fn moment_study_smoke_run_covers_each_community() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment("angle-moments", 1, 3, dir.path()).unwrap();
        let summary = match &report.summary {
            ExperimentSummary::Moments(s) => s,
            other => panic!("unexpected summary {other:?}"),
        };
        assert_eq!(summary.m, STUDY_ANGLE_COLS);
        assert_eq!(summary.configs.len(), 1);
        let cfg = &summary.configs[0];
        assert_eq!(cfg.d_true, 2);
        // Pooled group plus three communities.
        assert_eq!(cfg.communities.len(), 4);
        for c in &cfg.communities[1..] {
            // Noise-column means concentrate near π even in a single
            // replication at this size.
            assert!(
                c.noise_mean_max_dev < 0.2,
                "noise mean deviation {}",
                c.noise_mean_max_dev
            );
        }
        assert_eq!(cfg.noise_var_anova_p.len(), STUDY_ANGLE_COLS - 2);
        let csv = std::fs::read_to_string(&report.replication_csv).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4);
    }

    #[test]
    fn recovery_smoke_run_emits_one_row_per_replication() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment("recovery-undirected-k2", 1, 11, dir.path()).unwrap();
        let summary = match &report.summary {
            ExperimentSummary::Recovery(s) => s,
            other => panic!("unexpected summary {other:?}"),
        };
        assert_eq!(summary.strata.len(), 1);
        let stratum = &summary.strata[0];
        assert_eq!(stratum.k_true, 2);
        assert_eq!(stratum.n_replications, 1);
        assert!(stratum.angle.mean_ari >= -1.0 && stratum.angle.mean_ari <= 1.0);
        let csv = std::fs::read_to_string(&report.replication_csv).unwrap();
        assert_eq!(csv.lines().count(), 2);
        let header = csv.lines().next().unwrap();
        assert_eq!(header.split(',').count(), RECOVERY_HEADER.len());
    }

    #[test]
    fn upper_triangle_indexing_is_bijective() {
        let m = STUDY_ANGLE_COLS;
        let mut seen = vec![false; m * (m - 1) / 2];
        for i in 0..m {
            for j in (i + 1)..m {
                let idx = upper_index(m, i, j);
                assert!(!seen[idx], "duplicate index for ({i}, {j})");
                seen[idx] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
