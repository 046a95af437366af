//! Constrained Gaussian mixtures for angle matrices, and joint selection
//! of the structured dimension `d` and the component count `K`.
//!
//! The model splits the columns of the data matrix in two blocks. The
//! first `d` columns are structured: component `k` has a free mean and a
//! full covariance there. The remaining columns are noise: their mean is
//! pinned at a fixed location (π for spherical coordinates, 0 for raw
//! Cartesian embeddings — it is a property of the representation, not a
//! fitted parameter) and each component has its own diagonal variances.
//! Fits are scored by BIC over a (d, K) grid, and final labels come from
//! an ordinary full-covariance mixture on the first `d̂` columns only.

use std::f64::consts::PI;

use nalgebra::Cholesky;
use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::linalg::{to_array2, to_dmatrix};
use crate::seed::{derive_seed, stream_rng};
use crate::spherical::SphericalEmbedding;

/// Smallest admissible eigenvalue of a structured covariance matrix,
/// enforced after every M-step. Ray-concentrated angle data can otherwise
/// collapse a component's covariance to singularity.
pub const COV_EIGEN_FLOOR: f64 = 1e-6;
/// Smallest admissible noise variance, enforced after every M-step.
pub const NOISE_VAR_FLOOR: f64 = 1e-8;
/// A component whose total responsibility falls below this is empty.
const EMPTY_COMPONENT_TOL: f64 = 1e-8;
/// Iteration cap for the warm-start phase on the structured columns.
const WARM_MAX_ITER: usize = 25;
/// Lloyd refinement steps after seeding the initial hard clustering.
const KMEANS_ITER: usize = 10;

/// Knobs shared by all fitting entry points.
#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    /// Iteration cap for one EM run.
    pub max_iter: usize,
    /// Absolute log-likelihood change below which a run has converged.
    pub tol: f64,
    /// Independent initialisations; the highest-likelihood fit is kept.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 500,
            tol: 1e-6,
            restarts: 10,
            seed: 0,
        }
    }
}

/// Parameters of the constrained mixture.
#[derive(Debug, Clone, Serialize)]
pub struct MixtureParams {
    /// Number of structured (leading) columns.
    pub d: usize,
    /// Fixed centre of the noise block. Never re-estimated.
    pub noise_mean: f64,
    /// Component weights, on the simplex.
    pub weights: Vec<f64>,
    /// K×d component means of the structured block.
    pub structured_means: Array2<f64>,
    /// Per-component d×d symmetric positive-definite covariances.
    pub structured_covs: Vec<Array2<f64>>,
    /// K×(m−d) per-component noise variances (m = total column count).
    pub noise_vars: Array2<f64>,
}

impl MixtureParams {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Total number of data columns the mixture describes.
    pub fn n_cols(&self) -> usize {
        self.d + self.noise_vars.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.d == 0 {
            return Err(Error::Dimension("mixture needs K ≥ 1 and d ≥ 1".into()));
        }
        if self.structured_means.dim() != (k, self.d)
            || self.structured_covs.len() != k
            || self.structured_covs.iter().any(|c| c.dim() != (self.d, self.d))
            || self.noise_vars.nrows() != k
        {
            return Err(Error::Dimension("mixture parameter blocks disagree on K or d".into()));
        }
        let wsum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| w < 0.0) || (wsum - 1.0).abs() > 1e-8 {
            return Err(Error::Dimension("component weights must form a simplex".into()));
        }
        if self.noise_vars.iter().any(|&v| v <= 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(())
    }
}

/// Outcome of one EM fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub params: MixtureParams,
    pub log_likelihood: f64,
    /// n×K row-stochastic posterior component probabilities.
    #[serde(skip)]
    pub responsibilities: Array2<f64>,
    pub n_iter: usize,
    pub converged: bool,
    /// Per-iteration log-likelihoods, one segment per re-seeding epoch;
    /// within a segment the values are non-decreasing.
    #[serde(skip)]
    pub ll_trace: Vec<Vec<f64>>,
}

impl FitResult {
    /// Rows of data the fit was computed on.
    pub fn n_effective(&self) -> usize {
        self.responsibilities.nrows()
    }

    /// BIC of this fit on its own data.
    pub fn bic(&self) -> f64 {
        bic(
            self.log_likelihood,
            self.params.d,
            self.params.k(),
            self.params.n_cols(),
            self.n_effective(),
        )
    }

    /// Maximum-responsibility component per row, smallest index on ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.responsibilities
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                let mut best_v = row[0];
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > best_v {
                        best = j;
                        best_v = v;
                    }
                }
                best
            })
            .collect()
    }
}

/// BIC: −2ℓ plus a penalty that charges each component d²/2 + d/2
/// parameters for its structured block, one noise variance per remaining
/// column plus one weight (m + 1 with m the total data column count).
pub fn bic(log_likelihood: f64, d: usize, k: usize, m: usize, n_effective: usize) -> f64 {
    let d = d as f64;
    let penalty =
        k as f64 * (n_effective as f64).ln() * (d * d / 2.0 + d / 2.0 + m as f64 + 1.0);
    -2.0 * log_likelihood + penalty
}

/// Joint (d, K) selection outcome.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionResult {
    /// BIC at every grid cell; rows index d = 1.., columns K = 1..
    /// Cells where every restart failed hold +∞.
    pub bic_surface: Array2<f64>,
    pub d_hat: usize,
    pub k_hat: usize,
    /// Per-node community, `None` for nodes excluded from the data
    /// matrix (isolated nodes).
    pub labels: Vec<Option<usize>>,
    /// The unconstrained d̂-column K̂-component mixture behind `labels`.
    pub final_fit: FitResult,
}

// ---------------------------------------------------------------------
// Density evaluation
// ---------------------------------------------------------------------

/// Per-component quantities reused across all rows of an E-step.
struct CompCache {
    log_weight: f64,
    mean: Vec<f64>,
    /// Row-major lower Cholesky factor of the structured covariance.
    chol: Vec<f64>,
    /// Log normalising constant of the full m-column density.
    log_const: f64,
    inv_noise: Vec<f64>,
}

fn build_caches(params: &MixtureParams) -> Result<Vec<CompCache>> {
    let d = params.d;
    let ln_2pi = (2.0 * PI).ln();
    let mut caches = Vec::with_capacity(params.k());
    for k in 0..params.k() {
        let chol = Cholesky::new(to_dmatrix(&params.structured_covs[k]))
            .ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let mut half_log_det = 0.0;
        let mut flat = vec![0.0; d * d];
        for r in 0..d {
            half_log_det += l[(r, r)].ln();
            for c in 0..=r {
                flat[r * d + c] = l[(r, c)];
            }
        }
        let mut log_const = -0.5 * d as f64 * ln_2pi - half_log_det;
        let mut inv_noise = Vec::with_capacity(params.noise_vars.ncols());
        for &v in params.noise_vars.row(k) {
            log_const -= 0.5 * (ln_2pi + v.ln());
            inv_noise.push(1.0 / v);
        }
        caches.push(CompCache {
            log_weight: params.weights[k].ln(),
            mean: params.structured_means.row(k).to_vec(),
            chol: flat,
            log_const,
            inv_noise,
        });
    }
    Ok(caches)
}

/// Log density of one row under one component, excluding the weight.
fn log_component_density(row: &[f64], d: usize, noise_mean: f64, cache: &CompCache, y: &mut [f64]) -> f64 {
    // Solve L y = (x_{:d} − mean); the quadratic form is ‖y‖².
    let mut quad = 0.0;
    for r in 0..d {
        let mut v = row[r] - cache.mean[r];
        for c in 0..r {
            v -= cache.chol[r * d + c] * y[c];
        }
        let yr = v / cache.chol[r * d + r];
        y[r] = yr;
        quad += yr * yr;
    }
    for (j, inv) in cache.inv_noise.iter().enumerate() {
        let dev = row[d + j] - noise_mean;
        quad += dev * dev * inv;
    }
    cache.log_const - 0.5 * quad
}

/// One E-step: fills responsibilities and per-row log mixture densities,
/// returning the total log-likelihood.
fn e_step(
    x: &[f64],
    n: usize,
    m: usize,
    d: usize,
    noise_mean: f64,
    caches: &[CompCache],
    resp: &mut Array2<f64>,
    row_ll: &mut [f64],
) -> f64 {
    let k = caches.len();
    let mut terms = vec![0.0; k];
    let mut y = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..n {
        let row = &x[i * m..(i + 1) * m];
        let mut max_t = f64::NEG_INFINITY;
        for (j, cache) in caches.iter().enumerate() {
            let t = cache.log_weight + log_component_density(row, d, noise_mean, cache, &mut y);
            terms[j] = t;
            if t > max_t {
                max_t = t;
            }
        }
        let mut sum = 0.0;
        for t in &terms {
            sum += (t - max_t).exp();
        }
        let lse = max_t + sum.ln();
        for j in 0..k {
            resp[[i, j]] = (terms[j] - lse).exp();
        }
        row_ll[i] = lse;
        total += lse;
    }
    total
}

/// Clamp the eigenvalues of a symmetric matrix from below.
fn floor_spd(mat: &Array2<f64>, floor: f64) -> Result<Array2<f64>> {
    let mut eig = crate::linalg::robust_symmetric_eigen(&to_dmatrix(mat))?;
    for v in eig.eigenvalues.iter_mut() {
        if *v < floor {
            *v = floor;
        }
    }
    Ok(to_array2(&eig.recompose()))
}

/// One M-step. Empty components are re-seeded from the lowest-density
/// row while the budget lasts; afterwards they are a hard failure.
/// Returns whether a re-seed happened (which restarts the monotonicity
/// epoch).
fn m_step(
    x: &[f64],
    n: usize,
    m: usize,
    d: usize,
    noise_mean: f64,
    resp: &Array2<f64>,
    row_ll: &[f64],
    params: &mut MixtureParams,
    reseed_budget: &mut usize,
) -> Result<bool> {
    let k = params.k();
    let n_noise = m - d;
    let mut reseeded = false;
    let mut weights = vec![0.0; k];
    for j in 0..k {
        let mut nk = 0.0;
        for i in 0..n {
            nk += resp[[i, j]];
        }
        if nk < EMPTY_COMPONENT_TOL {
            if *reseed_budget == 0 {
                return Err(Error::ComponentCollapse { component: j });
            }
            *reseed_budget -= 1;
            reseeded = true;
            reseed_component(x, n, m, d, noise_mean, row_ll, params, j)?;
            weights[j] = 1.0 / n as f64;
            continue;
        }
        weights[j] = nk / n as f64;

        // Sufficient statistics for the structured block.
        let mut sx = vec![0.0; d];
        let mut sxx = vec![0.0; d * d];
        let mut snoise = vec![0.0; n_noise];
        for i in 0..n {
            let r = resp[[i, j]];
            if r == 0.0 {
                continue;
            }
            let row = &x[i * m..(i + 1) * m];
            for a in 0..d {
                let xa = row[a];
                sx[a] += r * xa;
                let base = a * d;
                for b in a..d {
                    sxx[base + b] += r * xa * row[b];
                }
            }
            for (jj, s) in snoise.iter_mut().enumerate() {
                let dev = row[d + jj] - noise_mean;
                *s += r * dev * dev;
            }
        }
        let mut mean = vec![0.0; d];
        for a in 0..d {
            mean[a] = sx[a] / nk;
        }
        let mut cov = Array2::zeros((d, d));
        for a in 0..d {
            for b in a..d {
                let v = sxx[a * d + b] / nk - mean[a] * mean[b];
                cov[[a, b]] = v;
                cov[[b, a]] = v;
            }
        }
        params.structured_covs[j] = floor_spd(&cov, COV_EIGEN_FLOOR)?;
        for a in 0..d {
            params.structured_means[[j, a]] = mean[a];
        }
        for (jj, &s) in snoise.iter().enumerate() {
            params.noise_vars[[j, jj]] = (s / nk).max(NOISE_VAR_FLOOR);
        }
    }
    let total: f64 = weights.iter().sum();
    for (w, out) in weights.iter().zip(params.weights.iter_mut()) {
        *out = w / total;
    }
    Ok(reseeded)
}

/// Re-centre an empty component on the row the current mixture explains
/// worst, with dispersion taken from the global column moments.
fn reseed_component(
    x: &[f64],
    n: usize,
    m: usize,
    d: usize,
    noise_mean: f64,
    row_ll: &[f64],
    params: &mut MixtureParams,
    j: usize,
) -> Result<()> {
    let worst = row_ll
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let row = &x[worst * m..(worst + 1) * m];
    for a in 0..d {
        params.structured_means[[j, a]] = row[a];
    }
    params.structured_covs[j] = floor_spd(&global_covariance(x, n, m, d), COV_EIGEN_FLOOR)?;
    for (jj, v) in global_noise_vars(x, n, m, d, noise_mean).iter().enumerate() {
        params.noise_vars[[j, jj]] = *v;
    }
    Ok(())
}

fn global_covariance(x: &[f64], n: usize, m: usize, d: usize) -> Array2<f64> {
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for a in 0..d {
            mean[a] += x[i * m + a];
        }
    }
    for v in mean.iter_mut() {
        *v /= nf;
    }
    let mut cov = Array2::zeros((d, d));
    for i in 0..n {
        let row = &x[i * m..(i + 1) * m];
        for a in 0..d {
            for b in a..d {
                cov[[a, b]] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[[a, b]] / nf;
            cov[[a, b]] = v;
            cov[[b, a]] = v;
        }
    }
    cov
}

fn global_noise_vars(x: &[f64], n: usize, m: usize, d: usize, noise_mean: f64) -> Vec<f64> {
    let mut vars = vec![0.0; m - d];
    for i in 0..n {
        for (jj, v) in vars.iter_mut().enumerate() {
            let dev = x[i * m + d + jj] - noise_mean;
            *v += dev * dev;
        }
    }
    for v in vars.iter_mut() {
        *v = (*v / n as f64).max(NOISE_VAR_FLOOR);
    }
    vars
}

// ---------------------------------------------------------------------
// EM driver
// ---------------------------------------------------------------------

struct EmRun {
    log_likelihood: f64,
    responsibilities: Array2<f64>,
    n_iter: usize,
    converged: bool,
    trace: Vec<Vec<f64>>,
}

/// Alternate E and M steps until the log-likelihood stabilises. The
/// returned likelihood and responsibilities are evaluated at the returned
/// parameters (a final E-step runs when the iteration cap is hit).
fn run_em(
    data: &Array2<f64>,
    params: &mut MixtureParams,
    noise_mean: f64,
    max_iter: usize,
    tol: f64,
    reseed_budget: &mut usize,
) -> Result<EmRun> {
    let (n, m) = data.dim();
    let d = params.d;
    let x = data.as_slice().expect("standard-layout data matrix");
    let k = params.k();
    let mut resp = Array2::zeros((n, k));
    let mut row_ll = vec![0.0; n];
    let mut prev = f64::NEG_INFINITY;
    let mut trace = vec![Vec::new()];
    for it in 0..max_iter {
        let caches = build_caches(params)?;
        let ll = e_step(x, n, m, d, noise_mean, &caches, &mut resp, &mut row_ll);
        if !ll.is_finite() {
            return Err(Error::NonFiniteLikelihood { iteration: it });
        }
        debug_assert!(
            ll >= prev - 1e-8,
            "log-likelihood decreased: {prev} -> {ll} at iteration {it}"
        );
        trace.last_mut().unwrap().push(ll);
        if (ll - prev).abs() < tol {
            return Ok(EmRun {
                log_likelihood: ll,
                responsibilities: resp,
                n_iter: it + 1,
                converged: true,
                trace,
            });
        }
        prev = ll;
        if m_step(x, n, m, d, noise_mean, &resp, &row_ll, params, reseed_budget)? {
            prev = f64::NEG_INFINITY;
            trace.push(Vec::new());
        }
    }
    let caches = build_caches(params)?;
    let ll = e_step(x, n, m, d, noise_mean, &caches, &mut resp, &mut row_ll);
    if !ll.is_finite() {
        return Err(Error::NonFiniteLikelihood { iteration: max_iter });
    }
    trace.last_mut().unwrap().push(ll);
    Ok(EmRun {
        log_likelihood: ll,
        responsibilities: resp,
        n_iter: max_iter,
        converged: false,
        trace,
    })
}

// ---------------------------------------------------------------------
// Initialisation
// ---------------------------------------------------------------------

/// Weighted farthest-point seeding plus a few Lloyd steps, on the
/// structured columns only. Returns hard labels.
fn kmeans_labels(slice: &Array2<f64>, k: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let (n, d) = slice.dim();
    let x = slice.as_slice().expect("standard-layout slice");
    let dist2 = |i: usize, c: &[f64]| -> f64 {
        let row = &x[i * d..(i + 1) * d];
        row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centers.push(x[first * d..(first + 1) * d].to_vec());
    let mut best = vec![f64::INFINITY; n];
    while centers.len() < k {
        let last = centers.last().unwrap();
        let mut total = 0.0;
        for i in 0..n {
            let di = dist2(i, last);
            if di < best[i] {
                best[i] = di;
            }
            total += best[i];
        }
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &b) in best.iter().enumerate() {
                acc += b;
                if u <= acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(x[next * d..(next + 1) * d].to_vec());
    }

    let mut labels = vec![0usize; n];
    for _ in 0..KMEANS_ITER {
        let mut moved = false;
        for i in 0..n {
            let mut bj = 0;
            let mut bd = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let dj = dist2(i, c);
                if dj < bd {
                    bd = dj;
                    bj = j;
                }
            }
            if labels[i] != bj {
                labels[i] = bj;
                moved = true;
            }
        }
        // Recompute means; hand empty clusters the point farthest from
        // its current centre.
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for a in 0..d {
                sums[labels[i]][a] += x[i * d + a];
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(a, &centers[labels[a]])
                            .partial_cmp(&dist2(b, &centers[labels[b]]))
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .unwrap_or(0);
                labels[far] = j;
                counts[j] = 1;
                centers[j] = x[far * d..(far + 1) * d].to_vec();
            } else {
                for a in 0..d {
                    centers[j][a] = sums[j][a] / counts[j] as f64;
                }
            }
        }
        if !moved {
            break;
        }
    }
    labels
}

/// Initial parameters from a hard clustering: per-cluster moments for
/// the structured block, global per-column spread for the noise block.
fn moments_from_labels(
    data: &Array2<f64>,
    d: usize,
    k: usize,
    labels: &[usize],
    noise_mean: f64,
) -> Result<MixtureParams> {
    let (n, m) = data.dim();
    let x = data.as_slice().expect("standard-layout data matrix");
    let mut counts = vec![0usize; k];
    let mut means = Array2::zeros((k, d));
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for a in 0..d {
            means[[l, a]] += x[i * m + a];
        }
    }
    let global_cov = floor_spd(&global_covariance(x, n, m, d), COV_EIGEN_FLOOR)?;
    let mut covs = vec![Array2::zeros((d, d)); k];
    let mut weights = vec![0.0; k];
    for j in 0..k {
        if counts[j] == 0 {
            weights[j] = 1.0 / n as f64;
            covs[j] = global_cov.clone();
            continue;
        }
        weights[j] = counts[j] as f64 / n as f64;
        for a in 0..d {
            means[[j, a]] /= counts[j] as f64;
        }
    }
    for (i, &l) in labels.iter().enumerate() {
        if counts[l] == 0 {
            continue;
        }
        let row = &x[i * m..(i + 1) * m];
        for a in 0..d {
            for b in a..d {
                covs[l][[a, b]] += (row[a] - means[[l, a]]) * (row[b] - means[[l, b]]);
            }
        }
    }
    for j in 0..k {
        if counts[j] <= (d + 1).max(2) {
            covs[j] = global_cov.clone();
            continue;
        }
        for a in 0..d {
            for b in a..d {
                let v = covs[j][[a, b]] / counts[j] as f64;
                covs[j][[a, b]] = v;
                covs[j][[b, a]] = v;
            }
        }
        covs[j] = floor_spd(&covs[j], COV_EIGEN_FLOOR)?;
    }
    let wsum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= wsum;
    }
    let gnoise = global_noise_vars(x, n, m, d, noise_mean);
    let mut noise_vars = Array2::zeros((k, m - d));
    for j in 0..k {
        for (jj, &v) in gnoise.iter().enumerate() {
            noise_vars[[j, jj]] = v;
        }
    }
    Ok(MixtureParams {
        d,
        noise_mean,
        weights,
        structured_means: means,
        structured_covs: covs,
        noise_vars,
    })
}

/// One full fit from one initialisation: seeding, a warm unconstrained
/// run on the structured columns, then the constrained run on all
/// columns.
fn fit_single(
    data: &Array2<f64>,
    d: usize,
    k: usize,
    noise_mean: f64,
    max_iter: usize,
    tol: f64,
    rng: &mut impl rand::Rng,
) -> Result<FitResult> {
    let (n, m) = data.dim();
    let slice = data.slice(s![.., ..d]).to_owned();
    let labels = kmeans_labels(&slice, k, rng);
    let mut params = moments_from_labels(data, d, k, &labels, noise_mean)?;
    let mut budget = 1usize;
    let mut total_iter = 0;
    let mut trace = Vec::new();

    if d < m {
        let mut warm = MixtureParams {
            d,
            noise_mean,
            weights: params.weights.clone(),
            structured_means: params.structured_means.clone(),
            structured_covs: params.structured_covs.clone(),
            noise_vars: Array2::zeros((k, 0)),
        };
        let run = run_em(&slice, &mut warm, noise_mean, WARM_MAX_ITER, tol.max(1e-4), &mut budget)?;
        params.weights = warm.weights;
        params.structured_means = warm.structured_means;
        params.structured_covs = warm.structured_covs;
        // Conditional noise variances given the warm responsibilities.
        let x = data.as_slice().expect("standard-layout data matrix");
        for j in 0..k {
            let mut nk = 0.0;
            let mut acc = vec![0.0; m - d];
            for i in 0..n {
                let r = run.responsibilities[[i, j]];
                nk += r;
                for (jj, a) in acc.iter_mut().enumerate() {
                    let dev = x[i * m + d + jj] - noise_mean;
                    *a += r * dev * dev;
                }
            }
            for (jj, a) in acc.iter().enumerate() {
                params.noise_vars[[j, jj]] = if nk > 0.0 {
                    (a / nk).max(NOISE_VAR_FLOOR)
                } else {
                    params.noise_vars[[j, jj]]
                };
            }
        }
        total_iter += run.n_iter;
        trace.extend(run.trace);
    }

    let run = run_em(data, &mut params, noise_mean, max_iter, tol, &mut budget)?;
    total_iter += run.n_iter;
    trace.extend(run.trace);
    Ok(FitResult {
        params,
        log_likelihood: run.log_likelihood,
        responsibilities: run.responsibilities,
        n_iter: total_iter,
        converged: run.converged,
        ll_trace: trace,
    })
}

/// Fit on a raw data matrix with restarts, keeping the best likelihood.
pub(crate) fn fit_matrix(
    data: ArrayView2<f64>,
    d: usize,
    k: usize,
    noise_mean: f64,
    opts: &EmOptions,
) -> Result<FitResult> {
    let (n, m) = data.dim();
    if m == 0 || d == 0 || d > m {
        return Err(Error::Dimension(format!(
            "structured dimension d={d} must satisfy 1 ≤ d ≤ {m}"
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Dimension(format!(
            "component count K={k} must satisfy 1 ≤ K ≤ {n}"
        )));
    }
    if opts.tol <= 0.0 || opts.max_iter == 0 || opts.restarts == 0 {
        return Err(Error::InvalidSpec(
            "EM needs tol > 0, max_iter ≥ 1 and restarts ≥ 1".into(),
        ));
    }
    let owned = data.to_owned();
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for r in 0..opts.restarts {
        let mut rng = stream_rng(opts.seed, &[0x454d_6669, r as u64]);
        match fit_single(&owned, d, k, noise_mean, opts.max_iter, opts.tol, &mut rng) {
            Ok(fit) => {
                if best
                    .as_ref()
                    .map_or(true, |b| fit.log_likelihood > b.log_likelihood)
                {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::NoConvergence { iterations: 0 }))
}

/// Fit the π-centred constrained mixture to spherical coordinates.
pub fn fit_constrained_em(
    theta: &SphericalEmbedding,
    d: usize,
    k: usize,
    opts: &EmOptions,
) -> Result<FitResult> {
    fit_matrix(theta.angles.view(), d, k, PI, opts)
}

/// Fit the 0-centred constrained mixture to Cartesian embedding columns
/// (the raw or row-normalised baseline representations).
pub fn fit_reference_gmm(data: &Array2<f64>, d: usize, k: usize, opts: &EmOptions) -> Result<FitResult> {
    fit_matrix(data.view(), d, k, 0.0, opts)
}

/// Log-likelihood of angle data under given parameters.
pub fn log_likelihood(theta: &SphericalEmbedding, params: &MixtureParams) -> Result<f64> {
    log_likelihood_matrix(theta.angles.view(), params)
}

/// Log-likelihood of a raw data matrix under given parameters.
pub fn log_likelihood_matrix(data: ArrayView2<f64>, params: &MixtureParams) -> Result<f64> {
    params.validate()?;
    if data.ncols() != params.n_cols() {
        return Err(Error::Dimension(format!(
            "data has {} columns but the mixture describes {}",
            data.ncols(),
            params.n_cols()
        )));
    }
    let owned;
    let x = match data.as_slice() {
        Some(s) => s,
        None => {
            owned = data.to_owned();
            owned.as_slice().expect("owned matrix is standard layout")
        }
    };
    let (n, m) = data.dim();
    let caches = build_caches(params)?;
    let mut resp = Array2::zeros((n, params.k()));
    let mut row_ll = vec![0.0; n];
    Ok(e_step(
        x,
        n,
        m,
        params.d,
        params.noise_mean,
        &caches,
        &mut resp,
        &mut row_ll,
    ))
}

// ---------------------------------------------------------------------
// Grid selection and assignment
// ---------------------------------------------------------------------

/// Seed used for the (d, K) grid cell, shared by the selection loop and
/// by anything re-evaluating a single cell.
pub fn cell_seed(seed: u64, d: usize, k: usize) -> u64 {
    derive_seed(seed, &[0x4752_4944, d as u64, k as u64])
}

fn assign_seed(seed: u64) -> u64 {
    derive_seed(seed, &[0x4153_5347])
}

/// Expand labels over kept rows back to the original node indexing,
/// leaving excluded rows unassigned.
pub fn scatter_labels(n_total: usize, kept: &[usize], labels: &[usize]) -> Vec<Option<usize>> {
    let mut out = vec![None; n_total];
    for (&node, &label) in kept.iter().zip(labels) {
        out[node] = Some(label);
    }
    out
}

fn selection_core(
    data: ArrayView2<f64>,
    noise_mean: f64,
    k_star: usize,
    opts: &EmOptions,
    kept: &[usize],
    n_total: usize,
) -> Result<SelectionResult> {
    let (n, m) = data.dim();
    if n == 0 || m == 0 {
        return Err(Error::Selection("no effective rows to fit".into()));
    }
    if k_star == 0 {
        return Err(Error::Selection("the component grid needs K* ≥ 1".into()));
    }
    let cells: Vec<(usize, usize)> = (1..=m)
        .flat_map(|d| (1..=k_star).map(move |k| (d, k)))
        .collect();
    let results: Vec<(usize, usize, f64)> = cells
        .par_iter()
        .map(|&(d, k)| {
            let cell_opts = EmOptions {
                seed: cell_seed(opts.seed, d, k),
                ..*opts
            };
            let bic = fit_matrix(data, d, k, noise_mean, &cell_opts)
                .map(|fit| fit.bic())
                .unwrap_or(f64::INFINITY);
            (d, k, bic)
        })
        .collect();
    let mut surface = Array2::from_elem((m, k_star), f64::INFINITY);
    for &(d, k, b) in &results {
        surface[[d - 1, k - 1]] = b;
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for d in 1..=m {
        for k in 1..=k_star {
            let b = surface[[d - 1, k - 1]];
            if b.is_finite() && best.map_or(true, |(_, _, bb)| b < bb) {
                best = Some((d, k, b));
            }
        }
    }
    let (d_hat, k_hat, _) =
        best.ok_or_else(|| Error::Selection("every (d, K) grid cell failed to fit".into()))?;
    let assign_opts = EmOptions {
        seed: assign_seed(opts.seed),
        ..*opts
    };
    let (labels_kept, final_fit) = assign_matrix(data, d_hat, k_hat, &assign_opts)?;
    Ok(SelectionResult {
        bic_surface: surface,
        d_hat,
        k_hat,
        labels: scatter_labels(n_total, kept, &labels_kept),
        final_fit,
    })
}

/// Unconstrained full-covariance mixture on the first `d` columns;
/// labels are the weighted-density argmax.
fn assign_matrix(
    data: ArrayView2<f64>,
    d: usize,
    k: usize,
    opts: &EmOptions,
) -> Result<(Vec<usize>, FitResult)> {
    let slice = data.slice(s![.., ..d]).to_owned();
    let fit = fit_matrix(slice.view(), d, k, 0.0, opts)?;
    let labels = fit.hard_labels();
    Ok((labels, fit))
}

/// Sweep the full (d, K) grid on spherical coordinates and pick the
/// minimum-BIC cell (ties prefer smaller d, then smaller K), then label
/// nodes from a fresh unconstrained mixture on the selected columns.
pub fn select_model(
    theta: &SphericalEmbedding,
    k_star: usize,
    opts: &EmOptions,
) -> Result<SelectionResult> {
    let kept = theta.kept_indices();
    selection_core(
        theta.angles.view(),
        PI,
        k_star,
        opts,
        &kept,
        theta.n_original(),
    )
}

/// The same grid selection on Cartesian embedding columns (noise block
/// centred at 0), optionally row-normalising first. Rows that are
/// numerically zero (isolated nodes) are excluded and left unassigned.
pub fn select_reference_model(
    x: &Embedding,
    normalise: bool,
    k_star: usize,
    opts: &EmOptions,
) -> Result<SelectionResult> {
    let (data, kept) = reference_matrix(x, normalise);
    selection_core(data.view(), 0.0, k_star, opts, &kept, x.n_nodes())
}

/// Extract the non-zero rows of an embedding (optionally normalised to
/// unit length) together with their original indices.
pub fn reference_matrix(x: &Embedding, normalise: bool) -> (Array2<f64>, Vec<usize>) {
    let scale = x
        .positions
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    let zero_tol = 1e-12 * scale;
    let mut kept = Vec::new();
    for (i, row) in x.positions.rows().into_iter().enumerate() {
        if row.iter().any(|v| v.abs() > zero_tol) {
            kept.push(i);
        }
    }
    let m = x.dim();
    let mut data = Array2::zeros((kept.len(), m));
    for (r, &i) in kept.iter().enumerate() {
        let row = x.positions.row(i);
        let norm = if normalise {
            row.iter().map(|v| v * v).sum::<f64>().sqrt()
        } else {
            1.0
        };
        for c in 0..m {
            data[[r, c]] = row[c] / norm;
        }
    }
    (data, kept)
}

/// Final community labels: a fresh unconstrained K-component mixture on
/// the first `d` angle columns, with excluded (isolated) nodes mapped to
/// `None`.
pub fn assign_communities(
    theta: &SphericalEmbedding,
    d: usize,
    k: usize,
    opts: &EmOptions,
) -> Result<(Vec<Option<usize>>, FitResult)> {
    let assign_opts = EmOptions {
        seed: assign_seed(opts.seed),
        ..*opts
    };
    let (labels_kept, fit) = assign_matrix(theta.angles.view(), d, k, &assign_opts)?;
    let kept = theta.kept_indices();
    Ok((
        scatter_labels(theta.n_original(), &kept, &labels_kept),
        fit,
    ))
}
