//! Spherical reparameterisation of spectral embeddings.
//!
//! Under a degree-corrected blockmodel the latent positions of one
//! community lie on a ray from the origin, so the Cartesian embedding
//! mixes community structure with degree magnitude. Mapping each row to
//! spherical coordinates removes the magnitude: all positions on a ray
//! share the same angles. The first angle keeps the full [0, 2π) range by
//! branching on the sign of the first coordinate; later angles double the
//! arccosine so their noise distribution is centred at π.
//!
//! The module also houses the asymptotic machinery used for validation:
//! the two candidate gradients of the first angle (they genuinely differ;
//! a finite-difference check arbitrates) and the sandwich-form asymptotic
//! covariance of the embedding rows.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;

use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::seed::stream_rng;
use crate::simulate::RhoLaw;

const TWO_PI: f64 = 2.0 * PI;

/// Angular coordinates of embedding rows, with isolated rows removed.
#[derive(Debug, Clone)]
pub struct SphericalEmbedding {
    /// One row per kept node, `source_dim − 1` columns, entries in [0, 2π).
    pub angles: Array2<f64>,
    /// Column count of the source embedding.
    pub source_dim: usize,
    /// Original row indices that were excluded (all-zero embedding rows,
    /// i.e. isolated nodes), ascending.
    pub excluded: Vec<usize>,
}

impl SphericalEmbedding {
    /// Number of rows in the originating embedding.
    pub fn n_original(&self) -> usize {
        self.angles.nrows() + self.excluded.len()
    }

    /// Original row index of each kept angle row, ascending.
    pub fn kept_indices(&self) -> Vec<usize> {
        let n = self.n_original();
        let mut excluded = self.excluded.iter().copied().peekable();
        let mut kept = Vec::with_capacity(self.angles.nrows());
        for i in 0..n {
            if excluded.peek() == Some(&i) {
                excluded.next();
            } else {
                kept.push(i);
            }
        }
        kept
    }

    /// Write angles as CSV (columns `theta1..`), plus a JSON sidecar with
    /// the source dimension and the excluded row indices.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P, sidecar: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = (1..self.source_dim).map(|j| format!("theta{j}")).collect();
        w.write_record(&header)?;
        for row in self.angles.rows() {
            let rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        #[derive(Serialize)]
        struct Sidecar<'a> {
            source_dim: usize,
            excluded: &'a [usize],
        }
        let file = std::fs::File::create(sidecar)?;
        serde_json::to_writer_pretty(
            file,
            &Sidecar {
                source_dim: self.source_dim,
                excluded: &self.excluded,
            },
        )?;
        Ok(())
    }
}

/// Map one Cartesian vector (length m ≥ 2) to its m−1 spherical
/// coordinates.
///
/// The first angle is `arccos(x_2/‖x_{:2}‖)` when `x_1 ≥ 0` and
/// `2π − arccos(x_2/‖x_{:2}‖)` otherwise, covering the full circle. Later
/// angles are `2·arccos(x_{j+1}/‖x_{:j+1}‖)`, with the convention that a
/// zero prefix norm yields π (the argument is read as 0). All outputs are
/// reduced modulo 2π, mapping the boundary 2π to 0.
pub fn to_spherical(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::Dimension(
            "spherical coordinates need at least two Cartesian coordinates".into(),
        ));
    }
    let r2 = x[0].hypot(x[1]);
    if r2 == 0.0 {
        return Err(Error::UndefinedAngle {
            context: "input vector".into(),
        });
    }
    let mut angles = Vec::with_capacity(x.len() - 1);
    let u = (x[1] / r2).clamp(-1.0, 1.0);
    let theta1 = if x[0] >= 0.0 {
        u.acos()
    } else {
        TWO_PI - u.acos()
    };
    angles.push(theta1.rem_euclid(TWO_PI));
    let mut norm_sq = r2 * r2;
    for j in 2..x.len() {
        norm_sq += x[j] * x[j];
        let norm = norm_sq.sqrt();
        let arg = if norm == 0.0 {
            0.0
        } else {
            (x[j] / norm).clamp(-1.0, 1.0)
        };
        angles.push((2.0 * arg.acos()).rem_euclid(TWO_PI));
    }
    Ok(angles)
}

/// Largest absolute entry of a row.
fn row_max_abs(row: ndarray::ArrayView1<f64>) -> f64 {
    row.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Apply `to_spherical` to every row of an embedding. Rows that are
/// numerically zero (isolated nodes embed exactly at the origin) are
/// excluded and recorded; a zero *leading pair* on an otherwise non-zero
/// row is an upstream inconsistency and raises an error.
pub fn transform_embedding(e: &Embedding) -> Result<SphericalEmbedding> {
    let m = e.dim();
    if m < 2 {
        return Err(Error::Dimension(
            "angular transform needs an embedding with at least 2 columns".into(),
        ));
    }
    let n = e.n_nodes();
    let scale = e
        .positions
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    let zero_tol = 1e-12 * scale;
    let mut excluded = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, row) in e.positions.rows().into_iter().enumerate() {
        if row_max_abs(row) <= zero_tol {
            excluded.push(i);
            continue;
        }
        let row_vec: Vec<f64> = row.to_vec();
        let angles = to_spherical(&row_vec).map_err(|err| match err {
            Error::UndefinedAngle { .. } => Error::UndefinedAngle {
                context: format!("embedding row {i}"),
            },
            other => other,
        })?;
        rows.push(angles);
    }
    let mut angles = Array2::zeros((rows.len(), m - 1));
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            angles[[r, c]] = v;
        }
    }
    Ok(SphericalEmbedding {
        angles,
        source_dim: m,
        excluded,
    })
}

/// Alternative closed form for the first-angle gradient that circulates
/// in delta-method derivations of the angle covariance:
/// ∇θ₁ = (0, −2·sign(x₁)·√(1 − x₂²/‖x‖²)/‖x‖). It does not equal the
/// derivative of the arccosine definition — finite differences side with
/// [`first_angle_gradient`] — and is kept so the disagreement can be
/// measured and reported.
pub fn first_angle_gradient_alternative(x: &[f64]) -> Result<[f64; 2]> {
    check_gradient_domain(x)?;
    let r = x[0].hypot(x[1]);
    let inner = (1.0 - (x[1] * x[1]) / (r * r)).max(0.0);
    Ok([0.0, -2.0 * x[0].signum() * inner.sqrt() / r])
}

/// First-angle gradient from differentiating the defining arccosine
/// expression directly: ∇θ₁ = (x₂/‖x‖², −x₁/‖x‖²). This is the variant
/// that matches finite differences; see
/// [`first_angle_gradient_alternative`] for the competing closed form.
pub fn first_angle_gradient(x: &[f64]) -> Result<[f64; 2]> {
    check_gradient_domain(x)?;
    let r_sq = x[0] * x[0] + x[1] * x[1];
    Ok([x[1] / r_sq, -x[0] / r_sq])
}

fn check_gradient_domain(x: &[f64]) -> Result<()> {
    if x.len() != 2 {
        return Err(Error::Dimension(
            "the first-angle gradient is defined on length-2 vectors".into(),
        ));
    }
    let r = x[0].hypot(x[1]);
    if r == 0.0 || x[1].abs() >= r {
        return Err(Error::SingularGradient);
    }
    Ok(())
}

/// Central-difference gradient of the first spherical angle, used to
/// arbitrate between the two analytic variants.
pub fn finite_difference_gradient(x: &[f64], h: f64) -> Result<[f64; 2]> {
    check_gradient_domain(x)?;
    let mut g = [0.0; 2];
    for c in 0..2 {
        let mut plus = [x[0], x[1]];
        let mut minus = [x[0], x[1]];
        plus[c] += h;
        minus[c] -= h;
        let tp = to_spherical(&plus)?[0];
        let tm = to_spherical(&minus)?[0];
        // Unwrap across the 0/2π seam so the difference stays local.
        let mut diff = tp - tm;
        if diff > PI {
            diff -= TWO_PI;
        } else if diff < -PI {
            diff += TWO_PI;
        }
        g[c] = diff / (2.0 * h);
    }
    Ok(g)
}

/// Asymptotic covariance of an embedding row, as a function of the node's
/// community and degree-correction value.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticCovariance {
    /// d×d symmetric positive semidefinite matrix.
    pub sigma: Array2<f64>,
    pub community: usize,
    pub rho: f64,
}

/// Default Monte Carlo sample count for [`asymptotic_covariance`].
pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;

fn validate_covariance_inputs(mu: &Array2<f64>, psi: &[f64], rho_law: &RhoLaw, k: usize, rho: f64) -> Result<()> {
    let kk = mu.nrows();
    if psi.len() != kk {
        return Err(Error::Dimension(format!(
            "psi has {} entries for {kk} communities",
            psi.len()
        )));
    }
    if k >= kk {
        return Err(Error::Dimension(format!(
            "community index {k} out of range for {kk} communities"
        )));
    }
    let sum: f64 = psi.iter().sum();
    if psi.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidSpec(
            "community probabilities must be non-negative and sum to 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidSpec(format!(
            "degree-correction value rho={rho} outside [0, 1]"
        )));
    }
    let sup = rho_law.sup();
    for l in 0..kk {
        let ip: f64 = (0..mu.ncols()).map(|j| mu[[k, j]] * mu[[l, j]]).sum();
        let p = rho * ip * sup;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidSpec(format!(
                "rho * mu_{k}ᵀmu_{l} * sup(rho') = {p:.4} is not a valid probability"
            )));
        }
    }
    Ok(())
}

/// Invert a symmetric PSD matrix, failing when its condition number
/// exceeds 1e12.
fn invert_spd(delta: &Array2<f64>) -> Result<Array2<f64>> {
    let d = delta.nrows();
    let eig = crate::linalg::to_dmatrix(delta).symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min_ev = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let condition = if min_ev <= 0.0 {
        f64::INFINITY
    } else {
        max_ev / min_ev
    };
    if !condition.is_finite() || condition > 1e12 {
        return Err(Error::SingularMoment { condition });
    }
    let mut inv = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for t in 0..d {
                acc += eig.eigenvectors[(i, t)] * eig.eigenvectors[(j, t)] / eig.eigenvalues[t];
            }
            inv[[i, j]] = acc;
        }
    }
    Ok(inv)
}

fn sandwich(delta_inv: &Array2<f64>, inner: &Array2<f64>) -> Array2<f64> {
    let tmp = delta_inv.dot(inner);
    let sigma = tmp.dot(delta_inv);
    // Symmetrise to remove accumulation noise.
    let d = sigma.nrows();
    let mut out = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            out[[i, j]] = 0.5 * (sigma[[i, j]] + sigma[[j, i]]);
        }
    }
    out
}

/// Monte Carlo estimate of the sandwich-form asymptotic covariance
/// Σ_k(ρ) = Δ⁻¹ E{ρ μ_kᵀξ (1 − ρ μ_kᵀξ) ξξᵀ} Δ⁻¹ with Δ = E(ξξᵀ) and
/// ξ = ρ′ μ_Z, Z drawn from ψ and ρ′ from the degree-correction law.
///
/// `mu` is K×d (one community position per row). Draw count `n_mc`
/// defaults to [`DEFAULT_MC_SAMPLES`] when 0 is passed.
pub fn asymptotic_covariance(
    mu: &Array2<f64>,
    psi: &[f64],
    rho_law: &RhoLaw,
    k: usize,
    rho: f64,
    n_mc: usize,
    seed: u64,
) -> Result<AsymptoticCovariance> {
    validate_covariance_inputs(mu, psi, rho_law, k, rho)?;
    let n_mc = if n_mc == 0 { DEFAULT_MC_SAMPLES } else { n_mc };
    let d = mu.ncols();
    let kk = mu.nrows();
    let mut rng = stream_rng(seed, &[0x5349, k as u64]);

    // Cumulative probabilities for the community draw.
    let mut cum = Vec::with_capacity(kk);
    let mut acc = 0.0;
    for &p in psi {
        acc += p;
        cum.push(acc);
    }

    let mut delta = Array2::<f64>::zeros((d, d));
    let mut inner = Array2::<f64>::zeros((d, d));
    let mut xi = vec![0.0; d];
    for _ in 0..n_mc {
        let u: f64 = rng.random();
        let z = cum.iter().position(|&c| u <= c).unwrap_or(kk - 1);
        let r = rho_law.sample(&mut rng);
        for j in 0..d {
            xi[j] = r * mu[[z, j]];
        }
        let ip: f64 = (0..d).map(|j| mu[[k, j]] * xi[j]).sum();
        let w = rho * ip * (1.0 - rho * ip);
        for a in 0..d {
            for b in 0..d {
                let outer = xi[a] * xi[b];
                delta[[a, b]] += outer;
                inner[[a, b]] += w * outer;
            }
        }
    }
    let scale = 1.0 / n_mc as f64;
    delta.mapv_inplace(|v| v * scale);
    inner.mapv_inplace(|v| v * scale);
    let delta_inv = invert_spd(&delta)?;
    Ok(AsymptoticCovariance {
        sigma: sandwich(&delta_inv, &inner),
        community: k,
        rho,
    })
}

/// Closed-form evaluation of the same sandwich covariance, available when
/// the degree-correction law has known moments: with m_p = E(ρ′^p) and
/// M_p = Σ_z ψ_z (μ_kᵀμ_z)^p μ_z μ_zᵀ,
/// Δ = m₂ M₀ and E{ρμ_kᵀξ(1−ρμ_kᵀξ)ξξᵀ} = ρ m₃ M₁ − ρ² m₄ M₂.
pub fn asymptotic_covariance_exact(
    mu: &Array2<f64>,
    psi: &[f64],
    rho_law: &RhoLaw,
    k: usize,
    rho: f64,
) -> Result<AsymptoticCovariance> {
    validate_covariance_inputs(mu, psi, rho_law, k, rho)?;
    let d = mu.ncols();
    let kk = mu.nrows();
    let m2 = rho_law.moment(2);
    let m3 = rho_law.moment(3);
    let m4 = rho_law.moment(4);

    let mut delta = Array2::<f64>::zeros((d, d));
    let mut inner = Array2::<f64>::zeros((d, d));
    for z in 0..kk {
        let ip: f64 = (0..d).map(|j| mu[[k, j]] * mu[[z, j]]).sum();
        for a in 0..d {
            for b in 0..d {
                let outer = psi[z] * mu[[z, a]] * mu[[z, b]];
                delta[[a, b]] += m2 * outer;
                inner[[a, b]] += (rho * m3 * ip - rho * rho * m4 * ip * ip) * outer;
            }
        }
    }
    let delta_inv = invert_spd(&delta)?;
    Ok(AsymptoticCovariance {
        sigma: sandwich(&delta_inv, &inner),
        community: k,
        rho,
    })
}

/// Frobenius norm of the difference between two matrices, relative to the
/// norm of the second.
pub fn relative_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    (num / den).sqrt()
}

/// Row-normalise a matrix: each non-zero row divided by its Euclidean
/// norm. Zero rows are left untouched (they belong to excluded nodes).
pub fn row_normalized(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// Per-row Euclidean norms.
pub fn row_norms(x: &Array2<f64>) -> Array1<f64> {
    Array1::from_iter(
        x.rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SparseGraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn axis_vectors_map_to_reference_angles() {
        assert!((to_spherical(&[1.0, 0.0]).unwrap()[0] - PI / 2.0).abs() < 1e-15);
        assert!((to_spherical(&[-1.0, 0.0]).unwrap()[0] - 3.0 * PI / 2.0).abs() < 1e-15);
        let a = to_spherical(&[1.0, 0.0, 0.0]).unwrap();
        assert!((a[0] - PI / 2.0).abs() < 1e-15);
        assert!((a[1] - PI).abs() < 1e-15);
        // Basis rows behave like the identity embedding.
        let e2 = to_spherical(&[0.0, 1.0, 0.0]).unwrap();
        assert!((e2[0] - 0.0).abs() < 1e-15);
        assert!((e2[1] - PI).abs() < 1e-15);
    }

    #[test]
    fn matches_literal_formula_oracle() {
        // Independent literal implementation of the defining equations.
        fn oracle(x: &[f64]) -> Vec<f64> {
            let m = x.len();
            let mut out = Vec::new();
            let r2 = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let t1 = if x[0] >= 0.0 {
                (x[1] / r2).acos()
            } else {
                TWO_PI - (x[1] / r2).acos()
            };
            out.push(t1 % TWO_PI);
            for j in 2..m {
                let norm = x[..=j].iter().map(|v| v * v).sum::<f64>().sqrt();
                let arg = if norm == 0.0 { 0.0 } else { x[j] / norm };
                out.push((2.0 * arg.acos()) % TWO_PI);
            }
            out
        }
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            if x[0].hypot(x[1]) < 1e-6 {
                continue;
            }
            let got = to_spherical(&x).unwrap();
            let want = oracle(&x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{x:?}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            if x[0].hypot(x[1]) < 1e-6 {
                continue;
            }
            let c = 0.01 + rng.random::<f64>() * 10.0;
            let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
            let a = to_spherical(&x).unwrap();
            let b = to_spherical(&scaled).unwrap();
            for (ai, bi) in a.iter().zip(&b) {
                assert!((ai - bi).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn angles_stay_in_range_and_wrap_boundary_to_zero() {
        // 2·arccos(−1) = 2π must wrap to 0.
        let a = to_spherical(&[0.0, 1e-9, -1.0]).unwrap();
        assert!(a[1] < 1e-4, "got {}", a[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let x: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            if x[0].hypot(x[1]) < 1e-6 {
                continue;
            }
            for v in to_spherical(&x).unwrap() {
                assert!((0.0..TWO_PI).contains(&v));
            }
        }
    }

    #[test]
    fn later_angles_decrease_in_the_new_coordinate() {
        // Fix ‖x_{:3}‖ = 1 and sweep x₃: θ₂ = 2·arccos(x₃) is decreasing.
        let mut last = f64::INFINITY;
        for t in [-0.9, -0.5, 0.0, 0.5, 0.9] {
            let s = (1.0f64 - t * t).sqrt() / 2.0f64.sqrt();
            let angles = to_spherical(&[s, s, t]).unwrap();
            assert!(angles[1] < last);
            last = angles[1];
        }
    }

    #[test]
    fn undefined_angle_is_reported() {
        let err = to_spherical(&[0.0, 0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::UndefinedAngle { .. }));
    }

    #[test]
    fn transform_excludes_isolated_rows() {
        // Node 3 is isolated: its embedding row is zero.
        let g = SparseGraph::from_edges(4, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let e = crate::embed::ase(&g, 2, 0).unwrap();
        let s = transform_embedding(&e).unwrap();
        assert_eq!(s.excluded, vec![3]);
        assert_eq!(s.angles.nrows(), 3);
        assert_eq!(s.source_dim, 2);
        assert_eq!(s.kept_indices(), vec![0, 1, 2]);
    }

    #[test]
    fn first_angles_do_not_depend_on_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut edges = Vec::new();
        for i in 0..60usize {
            for j in (i + 1)..60 {
                let p = if (i < 30) == (j < 30) { 0.5 } else { 0.1 };
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let g = SparseGraph::from_edges(60, &edges).unwrap();
        let small = transform_embedding(&crate::embed::ase(&g, 5, 0).unwrap()).unwrap();
        let large = transform_embedding(&crate::embed::ase(&g, 8, 0).unwrap()).unwrap();
        for i in 0..small.angles.nrows() {
            for j in 0..4 {
                assert!(
                    (small.angles[[i, j]] - large.angles[[i, j]]).abs() < 1e-8,
                    "angle ({i},{j}) differs across m"
                );
            }
        }
    }

    #[test]
    fn gradient_examples() {
        let g = first_angle_gradient_alternative(&[0.6, 0.8]).unwrap();
        assert!((g[0] - 0.0).abs() < 1e-12);
        assert!((g[1] + 1.2).abs() < 1e-12);
        let g = first_angle_gradient_alternative(&[1.0, 0.0]).unwrap();
        assert!((g[0] - 0.0).abs() < 1e-12);
        assert!((g[1] + 2.0).abs() < 1e-12);
        let d = first_angle_gradient(&[0.6, 0.8]).unwrap();
        assert!((d[0] - 0.8).abs() < 1e-12);
        assert!((d[1] + 0.6).abs() < 1e-12);
    }

    #[test]
    fn finite_differences_agree_with_direct_differentiation() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..100 {
            let r = 0.1 + rng.random::<f64>() * 1.9;
            let phi = rng.random::<f64>() * TWO_PI;
            let x = [r * phi.cos(), r * phi.sin()];
            if x[1].abs() >= 0.95 * r {
                continue;
            }
            let fd = finite_difference_gradient(&x, 1e-6).unwrap();
            let direct = first_angle_gradient(&x).unwrap();
            for c in 0..2 {
                assert!(
                    (fd[c] - direct[c]).abs() < 1e-4,
                    "at {x:?}: fd {fd:?} vs direct {direct:?}"
                );
            }
        }
    }

    #[test]
    fn singular_gradient_rejected() {
        assert!(matches!(
            first_angle_gradient_alternative(&[0.0, 1.0]),
            Err(Error::SingularGradient)
        ));
        assert!(matches!(
            first_angle_gradient(&[0.0, 0.0]),
            Err(Error::SingularGradient)
        ));
    }

    #[test]
    fn one_community_covariance_closed_form() {
        // One community at μ = 0.5 with ρ′ ≡ 1 and ρ = 1: Δ = μ²,
        // E{μᵀξ(1−μᵀξ)ξξᵀ} = μ⁴(1−μ²), so the sandwich gives 1 − μ² = 0.75.
        let mu = Array2::from_shape_vec((1, 1), vec![0.5]).unwrap();
        let exact =
            asymptotic_covariance_exact(&mu, &[1.0], &RhoLaw::Constant(1.0), 0, 1.0).unwrap();
        assert!((exact.sigma[[0, 0]] - 0.75).abs() < 1e-12);
        let mc =
            asymptotic_covariance(&mu, &[1.0], &RhoLaw::Constant(1.0), 0, 1.0, 10_000, 1).unwrap();
        assert!((mc.sigma[[0, 0]] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn monte_carlo_matches_closed_form_within_two_percent() {
        let mu =
            Array2::from_shape_vec((2, 2), vec![0.25, 0.75, 0.75, 0.25]).unwrap();
        let psi = [0.5, 0.5];
        let law = RhoLaw::Uniform(0.0, 1.0);
        let exact = asymptotic_covariance_exact(&mu, &psi, &law, 0, 0.5).unwrap();
        let mc = asymptotic_covariance(&mu, &psi, &law, 0, 0.5, 1_000_000, 42).unwrap();
        let rel = relative_frobenius(&mc.sigma, &exact.sigma);
        assert!(rel < 0.02, "relative Frobenius error {rel}");
        // Output is symmetric PSD.
        let eig = crate::linalg::to_dmatrix(&exact.sigma).symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-10));
    }

    #[test]
    fn invalid_probability_configurations_are_rejected() {
        let mu = Array2::from_shape_vec((1, 1), vec![1.5]).unwrap();
        let err =
            asymptotic_covariance_exact(&mu, &[1.0], &RhoLaw::Constant(1.0), 0, 1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)));
    }

    #[test]
    fn row_normalisation_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((15, 4), |_| rng.random::<f64>() - 0.5);
        let xt = row_normalized(&x);
        for row in xt.rows() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
