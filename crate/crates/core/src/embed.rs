//! Adjacency spectral embeddings.
//!
//! `ase` embeds an undirected graph through the top-m eigenpairs of its
//! adjacency matrix, `dase` embeds the two modes of a bipartite (or
//! otherwise asymmetric) graph through its top-m singular triplets. Both
//! scale eigenvectors by the square root of the spectrum, so rows estimate
//! latent positions. `scree_elbows` picks the working dimension from the
//! spectrum by repeated profile-likelihood splits.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{GraphMode, SparseGraph};
use crate::linalg::{self, svd_topk, sym_eigs_topk};

/// Which mode of the graph an embedding describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSide {
    /// The single node set of an undirected graph.
    Single,
    /// Row nodes of a two-mode graph.
    Left,
    /// Column nodes of a two-mode graph.
    Right,
}

/// Estimated latent positions together with the decomposition spectrum.
#[derive(Debug, Clone)]
pub struct Embedding {
    /// One row per node, `m` columns.
    pub positions: Array2<f64>,
    /// Eigenvalue magnitudes (or singular values), non-increasing.
    pub spectrum: Vec<f64>,
    /// Signed eigenvalues in the same order. Identical to `spectrum` for
    /// SVD-based embeddings, where no sign information exists.
    pub signed_spectrum: Vec<f64>,
    pub side: EmbeddingSide,
}

impl Embedding {
    pub fn n_nodes(&self) -> usize {
        self.positions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    /// Keep only the first `m` columns (the leading part of the spectrum).
    pub fn truncated(&self, m: usize) -> Result<Embedding> {
        if m == 0 || m > self.dim() {
            return Err(Error::Dimension(format!(
                "cannot truncate a {}-dimensional embedding to {m} columns",
                self.dim()
            )));
        }
        Ok(Embedding {
            positions: self.positions.slice(ndarray::s![.., ..m]).to_owned(),
            spectrum: self.spectrum[..m].to_vec(),
            signed_spectrum: self.signed_spectrum[..m].to_vec(),
            side: self.side,
        })
    }

    /// Write positions as CSV: one row per node, columns `x1..xm`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        w.write_record(&header)?;
        for row in self.positions.rows() {
            let rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Write the spectrum (and the side tag) as a JSON sidecar.
    pub fn write_spectrum_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            side: EmbeddingSide,
            spectrum: &'a [f64],
            signed_spectrum: &'a [f64],
        }
        let payload = Sidecar {
            side: self.side,
            spectrum: &self.spectrum,
            signed_spectrum: &self.signed_spectrum,
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, &payload)?;
        Ok(())
    }
}

/// Sign that makes the largest-magnitude entry of `col` positive. The
/// first occurrence wins on ties; an all-zero column keeps its sign.
fn canonical_sign(col: ArrayView1<f64>) -> f64 {
    let mut chosen = 0.0f64;
    let mut best_abs = -1.0f64;
    for &v in col.iter() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            chosen = v;
        }
    }
    if chosen < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Adjacency spectral embedding of an undirected graph: Γ̂|Λ̂|^{1/2} from
/// the top-`m` eigenpairs by magnitude. Columns are sign-canonicalised so
/// each one's largest-magnitude entry is positive; for a connected graph
/// this leaves the whole first column non-negative.
pub fn ase(g: &SparseGraph, m: usize, seed: u64) -> Result<Embedding> {
    if g.mode() != GraphMode::Undirected {
        return Err(Error::InvalidGraph(
            "adjacency spectral embedding requires an undirected graph".into(),
        ));
    }
    let n = g.n_nodes();
    if m == 0 || m > n {
        return Err(Error::Dimension(format!(
            "embedding dimension m={m} must satisfy 1 <= m <= n={n}"
        )));
    }
    let eig = sym_eigs_topk(g, m, seed)?;
    let mut positions = Array2::zeros((n, m));
    let mut spectrum = Vec::with_capacity(m);
    let mut signed_spectrum = Vec::with_capacity(m);
    for j in 0..m {
        let lambda = eig.values[j];
        signed_spectrum.push(lambda);
        spectrum.push(lambda.abs());
        let scale = lambda.abs().sqrt();
        let sign = canonical_sign(eig.vectors.column(j));
        for i in 0..n {
            positions[[i, j]] = sign * scale * eig.vectors[[i, j]];
        }
    }
    Ok(Embedding {
        positions,
        spectrum,
        signed_spectrum,
        side: EmbeddingSide::Single,
    })
}

/// Two-mode spectral embedding: X̂ = ÛŜ^{1/2} for rows and X̂′ = V̂Ŝ^{1/2}
/// for columns, from the top-`m` singular triplets. Sign flips are decided
/// on the left columns and applied jointly so X̂X̂′ᵀ is unchanged.
pub fn dase(g: &SparseGraph, m: usize, seed: u64) -> Result<(Embedding, Embedding)> {
    let (n_rows, n_cols) = (g.n_rows(), g.n_cols());
    let mmax = n_rows.min(n_cols);
    if m == 0 || m > mmax {
        return Err(Error::Dimension(format!(
            "embedding dimension m={m} must satisfy 1 <= m <= min(n_rows, n_cols)={mmax}"
        )));
    }
    let svd = svd_topk(g, m, seed)?;
    let mut left = Array2::zeros((n_rows, m));
    let mut right = Array2::zeros((n_cols, m));
    for j in 0..m {
        let scale = svd.values[j].sqrt();
        let sign = canonical_sign(svd.left.column(j));
        for i in 0..n_rows {
            left[[i, j]] = sign * scale * svd.left[[i, j]];
        }
        for i in 0..n_cols {
            right[[i, j]] = sign * scale * svd.right[[i, j]];
        }
    }
    let spectrum = svd.values;
    Ok((
        Embedding {
            positions: left,
            spectrum: spectrum.clone(),
            signed_spectrum: spectrum.clone(),
            side: EmbeddingSide::Left,
        },
        Embedding {
            positions: right,
            spectrum: spectrum.clone(),
            signed_spectrum: spectrum,
            side: EmbeddingSide::Right,
        },
    ))
}

/// Elbow positions found in a spectrum, with a flag marking that the
/// spectrum ran out before the requested number of elbows was reached.
#[derive(Debug, Clone, Serialize)]
pub struct ElbowReport {
    /// 1-based positions (an elbow at `q` keeps the first `q` values).
    pub elbows: Vec<usize>,
    pub shortfall: bool,
}

/// One profile-likelihood split: model `vals[..q]` and `vals[q..]` as two
/// Gaussian groups sharing one pooled variance and return the `q` with the
/// highest likelihood (first maximiser on ties).
fn profile_split(vals: &[f64]) -> usize {
    let p = vals.len();
    debug_assert!(p >= 2);
    let pf = p as f64;
    let mut best_q = 1;
    let mut best_ll = f64::NEG_INFINITY;
    for q in 1..p {
        let (g1, g2) = vals.split_at(q);
        let m1 = g1.iter().sum::<f64>() / g1.len() as f64;
        let m2 = g2.iter().sum::<f64>() / g2.len() as f64;
        let ss = g1.iter().map(|v| (v - m1).powi(2)).sum::<f64>()
            + g2.iter().map(|v| (v - m2).powi(2)).sum::<f64>();
        // Pooled maximum-likelihood variance; floored so an exactly
        // constant spectrum stays finite instead of dividing by zero.
        let var = (ss / pf).max(f64::MIN_POSITIVE);
        let ll = -0.5 * (pf * (2.0 * std::f64::consts::PI * var).ln() + ss / var);
        if ll > best_ll {
            best_ll = ll;
            best_q = q;
        }
    }
    best_q
}

/// Locate scree-plot elbows by repeated profile-likelihood splits: the
/// first elbow is the best two-group split of the whole spectrum, each
/// subsequent elbow is the best split of the remaining tail. Positions are
/// 1-based in the original spectrum.
pub fn scree_elbows(spectrum: &[f64], n_elbows: usize) -> Result<ElbowReport> {
    if spectrum.len() < 2 {
        return Err(Error::Degenerate(
            "elbow selection needs a spectrum of length >= 2".into(),
        ));
    }
    if n_elbows == 0 {
        return Err(Error::InvalidSpec("n_elbows must be at least 1".into()));
    }
    for w in spectrum.windows(2) {
        if w[1] > w[0] + 1e-9 * w[0].abs().max(1.0) {
            return Err(Error::Degenerate(
                "spectrum must be non-increasing for elbow selection".into(),
            ));
        }
    }
    let mut elbows = Vec::with_capacity(n_elbows);
    let mut offset = 0usize;
    while elbows.len() < n_elbows {
        let rest = &spectrum[offset..];
        if rest.len() < 2 {
            break;
        }
        let q = profile_split(rest);
        offset += q;
        elbows.push(offset);
    }
    let shortfall = elbows.len() < n_elbows;
    Ok(ElbowReport { elbows, shortfall })
}

/// Orthogonal matrix Q minimising ‖A Q − B‖_F (for comparing embeddings,
/// which are only identified up to rotation). Classic closed form via the
/// SVD of AᵀB.
pub fn orthogonal_procrustes(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "procrustes needs equal shapes, got {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let m = a.ncols();
    let mut cross = Array2::zeros((m, m));
    for i in 0..a.nrows() {
        for p in 0..m {
            for q in 0..m {
                cross[[p, q]] += a[[i, p]] * b[[i, q]];
            }
        }
    }
    let svd = linalg::to_dmatrix(&cross).svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let q = u * vt;
    Ok(linalg::to_array2(&q))
}
