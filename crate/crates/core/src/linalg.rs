//! Symmetric eigensolvers and truncated SVD.
//!
//! Small problems are materialised and handed to nalgebra's dense
//! decompositions. Large problems go through thick-restart Lanczos with
//! full reorthogonalisation, driven purely by matrix–vector products, so
//! sparse adjacency matrices never need densifying. Singular triplets of
//! a rectangular operator come from the eigendecomposition of the smaller
//! normal matrix (AᵀA or AAᵀ).
//!
//! Eigenpairs are returned ordered by decreasing magnitude. Magnitude
//! ties (±λ pairs, common in bipartite-like spectra) are broken towards
//! the algebraically larger eigenvalue, so +λ always precedes −λ.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{GraphMode, SparseGraph};

/// Problems at or below this dimension use dense decompositions.
pub const DENSE_CUTOFF: usize = 500;

/// Relative residual tolerance for Lanczos Ritz pairs.
const LANCZOS_TOL: f64 = 1e-10;

/// Maximum number of thick restarts before giving up.
const MAX_RESTARTS: usize = 500;

/// Symmetric linear operator defined by its matrix–vector product.
pub trait SymOp {
    fn dim(&self) -> usize;
    /// y = A x.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Rectangular linear operator with forward and adjoint products.
pub trait RectOp {
    /// (n_rows, n_cols).
    fn shape(&self) -> (usize, usize);
    /// y = A x, with `x` of length n_cols.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// x = Aᵀ y, with `y` of length n_rows.
    fn apply_t(&self, y: &[f64], x: &mut [f64]);
}

impl SymOp for SparseGraph {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.mode(), GraphMode::Undirected);
        self.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }
}

impl RectOp for SparseGraph {
    fn shape(&self) -> (usize, usize) {
        (self.n_rows(), self.n_cols())
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }

    fn apply_t(&self, y: &[f64], x: &mut [f64]) {
        self.matvec_t(y, x);
    }
}

impl SymOp for Array2<f64> {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.nrows(), self.ncols());
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                acc += self[[i, j]] * xj;
            }
            *yi = acc;
        }
    }
}

impl RectOp for Array2<f64> {
    fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                acc += self[[i, j]] * xj;
            }
            *yi = acc;
        }
    }

    fn apply_t(&self, y: &[f64], x: &mut [f64]) {
        for (j, xj) in x.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &yi) in y.iter().enumerate() {
                acc += self[[i, j]] * yi;
            }
            *xj = acc;
        }
    }
}

/// Eigenvalues and eigenvectors, ordered by decreasing |λ|.
#[derive(Debug, Clone)]
pub struct EigPairs {
    pub values: Vec<f64>,
    /// One column per eigenvalue, shape (n, k).
    pub vectors: Array2<f64>,
}

/// Singular values and vectors, ordered by decreasing σ.
#[derive(Debug, Clone)]
pub struct SvdTriplets {
    pub values: Vec<f64>,
    /// Left singular vectors, shape (n_rows, k).
    pub left: Array2<f64>,
    /// Right singular vectors, shape (n_cols, k).
    pub right: Array2<f64>,
}

/// Order eigenvalue indices by decreasing magnitude, breaking magnitude
/// ties towards the algebraically larger value.
fn magnitude_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
    idx
}

/// Symmetric eigendecomposition hardened against a QR pathology: on
/// matrices whose tridiagonalisation carries denormal entries (e.g. the
/// adjacency matrix of a graph with a handful of edges) the iteration
/// can underflow into NaN. Shifting the whole spectrum away from zero
/// sidesteps the underflow and leaves the eigenvectors untouched, so the
/// shift is simply subtracted back out.
pub(crate) fn robust_symmetric_eigen(
    a: &DMatrix<f64>,
) -> Result<nalgebra::SymmetricEigen<f64, nalgebra::Dyn>> {
    let finite = |e: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>| {
        e.eigenvalues.iter().all(|v| v.is_finite())
            && e.eigenvectors.iter().all(|v| v.is_finite())
    };
    let eig = a.clone().symmetric_eigen();
    if finite(&eig) {
        return Ok(eig);
    }
    let shift = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut shifted = a.clone();
    for i in 0..a.nrows() {
        shifted[(i, i)] += shift;
    }
    let mut eig = shifted.symmetric_eigen();
    for v in eig.eigenvalues.iter_mut() {
        *v -= shift;
    }
    if finite(&eig) {
        Ok(eig)
    } else {
        Err(Error::Degenerate(
            "symmetric eigendecomposition produced non-finite values".into(),
        ))
    }
}

fn materialize<O: SymOp + ?Sized>(op: &O) -> DMatrix<f64> {
    let n = op.dim();
    let mut a = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        e[j] = 0.0;
        for i in 0..n {
            a[(i, j)] = col[i];
        }
    }
    a
}

fn dense_sym_topk(a: &DMatrix<f64>, k: usize) -> Result<EigPairs> {
    let n = a.nrows();
    let eig = robust_symmetric_eigen(a)?;
    let order = magnitude_order(eig.eigenvalues.as_slice());
    let k = k.min(n);
    let mut values = Vec::with_capacity(k);
    let mut vectors = Array2::zeros((n, k));
    for (c, &src) in order.iter().take(k).enumerate() {
        values.push(eig.eigenvalues[src]);
        for i in 0..n {
            vectors[[i, c]] = eig.eigenvectors[(i, src)];
        }
    }
    Ok(EigPairs { values, vectors })
}

/// Top-`k` eigenpairs of a symmetric operator, by decreasing |λ|.
///
/// Dispatches to a dense solve for small operators and to thick-restart
/// Lanczos otherwise. `seed` fixes the Lanczos start vector.
pub fn sym_eigs_topk<O: SymOp + ?Sized>(op: &O, k: usize, seed: u64) -> Result<EigPairs> {
    let n = op.dim();
    if k == 0 || n == 0 {
        return Err(Error::Dimension(
            "eigendecomposition needs k >= 1 and a non-empty operator".into(),
        ));
    }
    let k = k.min(n);
    if n <= DENSE_CUTOFF || k + 2 >= n {
        return dense_sym_topk(&materialize(op), k);
    }
    lanczos_topk(op, k, seed)
}

/// Dot product of two equal-length slices.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two rounds of classical Gram–Schmidt against `basis[..count]`.
fn reorthogonalize(w: &mut [f64], basis: &[Vec<f64>], count: usize) {
    for _ in 0..2 {
        for v in basis.iter().take(count) {
            let c = dot(w, v);
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi -= c * vi;
            }
        }
    }
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let nrm = norm(&v);
        if nrm > 1e-12 {
            for vi in &mut v {
                *vi /= nrm;
            }
            return v;
        }
    }
}

/// Thick-restart Lanczos (Wu–Simon style) with full reorthogonalisation.
fn lanczos_topk<O: SymOp + ?Sized>(op: &O, k: usize, seed: u64) -> Result<EigPairs> {
    let n = op.dim();
    let m = (2 * k + 16).min(n - 1).max(k + 2);
    let retain = (k + 8).min(m - 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6e63_7a6f_7321);

    // Orthonormal basis; up to m + 1 columns (the extra one carries the
    // restart residual).
    let mut basis: Vec<Vec<f64>> = vec![random_unit(n, &mut rng)];
    // Projected matrix T = Vᵀ A V. Diagonal-plus-arrowhead in the locked
    // block after a restart, tridiagonal beyond it; stored dense because
    // m stays small.
    let mut tmat = DMatrix::<f64>::zeros(m, m);
    let mut locked = 0usize;
    let mut w = vec![0.0; n];
    let mut anorm: f64 = 0.0;

    for _restart in 0..MAX_RESTARTS {
        let mut beta_last = 0.0;
        for j in locked..m {
            op.apply(&basis[j], &mut w);
            let alpha = dot(&basis[j], &w);
            tmat[(j, j)] = alpha;
            // Subtract the known T-components, then clean up residual
            // non-orthogonality with full reorthogonalisation.
            for (wi, vi) in w.iter_mut().zip(&basis[j]) {
                *wi -= alpha * vi;
            }
            if j > locked {
                let beta = tmat[(j - 1, j)];
                for (wi, vi) in w.iter_mut().zip(&basis[j - 1]) {
                    *wi -= beta * vi;
                }
            } else if locked > 0 {
                for i in 0..locked {
                    let s = tmat[(i, locked)];
                    for (wi, vi) in w.iter_mut().zip(&basis[i]) {
                        *wi -= s * vi;
                    }
                }
            }
            reorthogonalize(&mut w, &basis, j + 1);
            let beta = norm(&w);
            anorm = anorm.max(alpha.abs() + beta);
            let next = if beta > 1e-12 * anorm.max(1.0) {
                w.iter().map(|&x| x / beta).collect()
            } else {
                // Invariant subspace found; continue in its complement.
                let mut fresh = random_unit(n, &mut rng);
                reorthogonalize(&mut fresh, &basis, j + 1);
                let nrm = norm(&fresh);
                if nrm < 1e-12 {
                    break;
                }
                fresh.iter_mut().for_each(|x| *x /= nrm);
                fresh
            };
            let beta = if beta > 1e-12 * anorm.max(1.0) { beta } else { 0.0 };
            if j + 1 < m {
                tmat[(j, j + 1)] = beta;
                tmat[(j + 1, j)] = beta;
            }
            beta_last = beta;
            if basis.len() == j + 1 {
                basis.push(next);
            } else {
                basis[j + 1] = next;
            }
        }

        let eig = robust_symmetric_eigen(&tmat)?;
        let theta = eig.eigenvalues.as_slice().to_vec();
        let order = magnitude_order(&theta);
        let scale = theta.iter().fold(0.0f64, |acc, &t| acc.max(t.abs()));
        if scale < 1e-300 {
            // The operator is numerically zero; any orthonormal set works.
            let mut vectors = Array2::zeros((n, k));
            for (c, v) in basis.iter().take(k).enumerate() {
                for i in 0..n {
                    vectors[[i, c]] = v[i];
                }
            }
            return Ok(EigPairs {
                values: vec![0.0; k],
                vectors,
            });
        }

        let residual = |i: usize| (beta_last * eig.eigenvectors[(m - 1, i)]).abs();
        let converged = order.iter().take(k).all(|&i| residual(i) < LANCZOS_TOL * scale);

        if converged {
            let mut values = Vec::with_capacity(k);
            let mut vectors = Array2::zeros((n, k));
            for (c, &i) in order.iter().take(k).enumerate() {
                values.push(theta[i]);
                for (row, basis_v) in basis.iter().take(m).enumerate() {
                    let y = eig.eigenvectors[(row, i)];
                    if y != 0.0 {
                        for r in 0..n {
                            vectors[[r, c]] += y * basis_v[r];
                        }
                    }
                }
            }
            return Ok(EigPairs { values, vectors });
        }

        // Thick restart: keep the leading Ritz vectors, append the
        // residual direction, and rebuild T as diagonal + arrowhead.
        let keep: Vec<usize> = order.iter().take(retain).copied().collect();
        let mut new_basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        for &i in &keep {
            let mut col = vec![0.0; n];
            for (row, basis_v) in basis.iter().take(m).enumerate() {
                let y = eig.eigenvectors[(row, i)];
                if y != 0.0 {
                    for r in 0..n {
                        col[r] += y * basis_v[r];
                    }
                }
            }
            new_basis.push(col);
        }
        new_basis.push(basis[m].clone());
        basis = new_basis;
        locked = keep.len();
        tmat.fill(0.0);
        for (c, &i) in keep.iter().enumerate() {
            tmat[(c, c)] = theta[i];
            let s = beta_last * eig.eigenvectors[(m - 1, i)];
            tmat[(c, locked)] = s;
            tmat[(locked, c)] = s;
        }
    }

    Err(Error::NoConvergence {
        iterations: MAX_RESTARTS,
    })
}

/// Adapter presenting AᵀA (or AAᵀ, whichever is smaller) of a rectangular
/// operator as a symmetric operator.
struct NormalOp<'a, O: RectOp + ?Sized> {
    inner: &'a O,
    /// true: AᵀA (dimension n_cols); false: AAᵀ (dimension n_rows).
    gram: bool,
    scratch: std::cell::RefCell<Vec<f64>>,
}

impl<O: RectOp + ?Sized> SymOp for NormalOp<'_, O> {
    fn dim(&self) -> usize {
        let (r, c) = self.inner.shape();
        if self.gram {
            c
        } else {
            r
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut tmp = self.scratch.borrow_mut();
        if self.gram {
            self.inner.apply(x, &mut tmp);
            self.inner.apply_t(&tmp, y);
        } else {
            self.inner.apply_t(x, &mut tmp);
            self.inner.apply(&tmp, y);
        }
    }
}

fn materialize_rect<O: RectOp + ?Sized>(op: &O) -> DMatrix<f64> {
    let (rows, cols) = op.shape();
    let mut a = DMatrix::zeros(rows, cols);
    let mut e = vec![0.0; cols];
    let mut col = vec![0.0; rows];
    for j in 0..cols {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        e[j] = 0.0;
        for i in 0..rows {
            a[(i, j)] = col[i];
        }
    }
    a
}

fn dense_svd_topk(a: &DMatrix<f64>, k: usize) -> Result<SvdTriplets> {
    let (rows, cols) = (a.nrows(), a.ncols());
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let sigma = svd.singular_values.as_slice().to_vec();
    if sigma.iter().any(|v| !v.is_finite())
        || u.iter().any(|v| !v.is_finite())
        || vt.iter().any(|v| !v.is_finite())
    {
        return Err(Error::Degenerate(
            "singular value decomposition produced non-finite values".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..sigma.len()).collect();
    idx.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]));
    let k = k.min(sigma.len());
    let mut values = Vec::with_capacity(k);
    let mut left = Array2::zeros((rows, k));
    let mut right = Array2::zeros((cols, k));
    for (c, &src) in idx.iter().take(k).enumerate() {
        values.push(sigma[src]);
        for i in 0..rows {
            left[[i, c]] = u[(i, src)];
        }
        for j in 0..cols {
            right[[j, c]] = vt[(src, j)];
        }
    }
    Ok(SvdTriplets {
        values,
        left,
        right,
    })
}

/// Top-`k` singular triplets of a rectangular operator, by decreasing σ.
///
/// Small operators are materialised and decomposed densely; large ones go
/// through Lanczos on the smaller of AᵀA and AAᵀ, with the other side
/// recovered as Av/σ (or Aᵀu/σ).
pub fn svd_topk<O: RectOp + ?Sized>(op: &O, k: usize, seed: u64) -> Result<SvdTriplets> {
    let (rows, cols) = op.shape();
    if k == 0 || rows == 0 || cols == 0 {
        return Err(Error::Dimension(
            "svd needs k >= 1 and a non-empty operator".into(),
        ));
    }
    let k = k.min(rows.min(cols));
    if rows.max(cols) <= DENSE_CUTOFF {
        return dense_svd_topk(&materialize_rect(op), k);
    }

    let gram = cols <= rows;
    let scratch_len = if gram { rows } else { cols };
    let normal = NormalOp {
        inner: op,
        gram,
        scratch: std::cell::RefCell::new(vec![0.0; scratch_len]),
    };
    let eig = sym_eigs_topk(&normal, k, seed)?;

    let mut values = Vec::with_capacity(k);
    let mut left = Array2::zeros((rows, k));
    let mut right = Array2::zeros((cols, k));
    for c in 0..k {
        let sigma = eig.values[c].max(0.0).sqrt();
        values.push(sigma);
        if sigma <= 1e-12 * eig.values[0].max(0.0).sqrt().max(1.0) {
            return Err(Error::Degenerate(format!(
                "singular value {c} is numerically zero; the operator rank is below the requested {k}"
            )));
        }
    }
    if gram {
        let mut u = vec![0.0; rows];
        let mut v = vec![0.0; cols];
        for c in 0..k {
            for j in 0..cols {
                v[j] = eig.vectors[[j, c]];
                right[[j, c]] = v[j];
            }
            op.apply(&v, &mut u);
            for i in 0..rows {
                left[[i, c]] = u[i] / values[c];
            }
        }
    } else {
        let mut u = vec![0.0; rows];
        let mut v = vec![0.0; cols];
        for c in 0..k {
            for i in 0..rows {
                u[i] = eig.vectors[[i, c]];
                left[[i, c]] = u[i];
            }
            op.apply_t(&u, &mut v);
            for j in 0..cols {
                right[[j, c]] = v[j] / values[c];
            }
        }
    }
    Ok(SvdTriplets {
        values,
        left,
        right,
    })
}

/// Convert an ndarray matrix into a nalgebra one.
pub fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Convert a nalgebra matrix into an ndarray one.
pub fn to_array2(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Convert a slice into a nalgebra vector.
pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_sparse_symmetric(n: usize, density: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < density {
                    let v = rng.random::<f64>() * 2.0 - 1.0;
                    a[[i, j]] = v;
                    a[[j, i]] = v;
                }
            }
        }
        a
    }

    #[test]
    fn dense_orders_by_magnitude_with_sign_tiebreak() {
        // diag(1, -3, 2): magnitudes 3, 2, 1.
        let mut a = Array2::zeros((3, 3));
        a[[0, 0]] = 1.0;
        a[[1, 1]] = -3.0;
        a[[2, 2]] = 2.0;
        let eig = sym_eigs_topk(&a, 3, 0).unwrap();
        assert_eq!(eig.values.len(), 3);
        assert!((eig.values[0] - (-3.0)).abs() < 1e-12);
        assert!((eig.values[1] - 2.0).abs() < 1e-12);
        assert!((eig.values[2] - 1.0).abs() < 1e-12);

        // [[0, 2], [2, 0]]: eigenvalues ±2; +2 must come first.
        let mut b = Array2::zeros((2, 2));
        b[[0, 1]] = 2.0;
        b[[1, 0]] = 2.0;
        let eig = sym_eigs_topk(&b, 2, 0).unwrap();
        assert!((eig.values[0] - 2.0).abs() < 1e-12);
        assert!((eig.values[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn dense_two_by_two_closed_form() {
        // [[2, 1], [1, 2]] has eigenpairs (3, [1,1]/√2) and (1, [1,-1]/√2).
        let mut a = Array2::zeros((2, 2));
        a[[0, 0]] = 2.0;
        a[[0, 1]] = 1.0;
        a[[1, 0]] = 1.0;
        a[[1, 1]] = 2.0;
        let eig = sym_eigs_topk(&a, 2, 0).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-12);
        assert!((eig.values[1] - 1.0).abs() < 1e-12);
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        let v0 = [eig.vectors[[0, 0]], eig.vectors[[1, 0]]];
        assert!((v0[0].abs() - inv_sqrt2).abs() < 1e-12);
        assert!((v0[0] - v0[1]).abs() < 1e-12);
    }

    #[test]
    fn lanczos_matches_dense_oracle() {
        let n = 700;
        let a = random_sparse_symmetric(n, 0.01, 42);
        let k = 6;
        let sparse = lanczos_topk(&a, k, 7).unwrap();
        let dense = dense_sym_topk(&to_dmatrix(&a), k).unwrap();
        for c in 0..k {
            assert!(
                (sparse.values[c] - dense.values[c]).abs() < 1e-8,
                "eigenvalue {c}: {} vs {}",
                sparse.values[c],
                dense.values[c]
            );
            let mut dot_uv = 0.0;
            for i in 0..n {
                dot_uv += sparse.vectors[[i, c]] * dense.vectors[[i, c]];
            }
            assert!(
                (dot_uv.abs() - 1.0).abs() < 1e-6,
                "eigenvector {c} misaligned: |<u,v>| = {}",
                dot_uv.abs()
            );
        }
    }

    #[test]
    fn lanczos_vectors_satisfy_residual_bound() {
        let n = 650;
        let a = random_sparse_symmetric(n, 0.02, 9);
        let k = 4;
        let eig = lanczos_topk(&a, k, 3).unwrap();
        let mut av = vec![0.0; n];
        for c in 0..k {
            let v: Vec<f64> = (0..n).map(|i| eig.vectors[[i, c]]).collect();
            SymOp::apply(&a, &v, &mut av);
            let res: f64 = (0..n)
                .map(|i| (av[i] - eig.values[c] * v[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(res < 1e-7 * eig.values[0].abs().max(1.0));
        }
    }

    #[test]
    fn sparse_svd_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (rows, cols) = (620, 530);
        let mut a = Array2::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                if rng.random::<f64>() < 0.01 {
                    a[[i, j]] = rng.random::<f64>();
                }
            }
        }
        let k = 5;
        let sparse = svd_topk(&a, k, 13).unwrap();
        let dense = dense_svd_topk(&to_dmatrix(&a), k).unwrap();
        for c in 0..k {
            assert!((sparse.values[c] - dense.values[c]).abs() < 1e-7);
            let mut du = 0.0;
            let mut dv = 0.0;
            for i in 0..rows {
                du += sparse.left[[i, c]] * dense.left[[i, c]];
            }
            for j in 0..cols {
                dv += sparse.right[[j, c]] * dense.right[[j, c]];
            }
            assert!((du.abs() - 1.0).abs() < 1e-5, "left {c}: {}", du.abs());
            assert!((dv.abs() - 1.0).abs() < 1e-5, "right {c}: {}", dv.abs());
            // Left and right flips must agree: u and v belong to one triplet.
            assert!(du.signum() == dv.signum());
        }
    }

    #[test]
    fn svd_small_matrix_exact() {
        // diag(3, 1) padded: singular values 3 and 1.
        let mut a = Array2::zeros((3, 2));
        a[[0, 0]] = 3.0;
        a[[1, 1]] = 1.0;
        let svd = svd_topk(&a, 2, 0).unwrap();
        assert!((svd.values[0] - 3.0).abs() < 1e-12);
        assert!((svd.values[1] - 1.0).abs() < 1e-12);
    }
}
