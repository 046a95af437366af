//! Clustering and distributional diagnostics: adjusted Rand index,
//! multivariate skewness/kurtosis normality tests, Kolmogorov–Smirnov
//! Gaussian-fit scores, paired binomial sign tests, and a one-way ANOVA
//! helper for comparing group spreads.

use std::collections::HashMap;

use nalgebra::Cholesky;
use ndarray::ArrayView2;
use serde::Serialize;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, FisherSnedecor, Normal};

use crate::error::{Error, Result};
use crate::linalg::to_dmatrix;

/// A single hypothesis-test outcome.
#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    /// In [0, 1].
    pub p_value: f64,
    /// Human-readable reference distribution, e.g. "chi-squared(4)".
    pub null: String,
    pub n_obs: usize,
}

/// Direction of a one- or two-sided test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    Greater,
    Less,
    TwoSided,
}

/// Permutation-adjusted pair-counting agreement between two labelings,
/// 1 for identical partitions, near 0 for independent ones. Entries that
/// are `None` in either vector are dropped pairwise. When the adjustment
/// denominator vanishes (e.g. one partition is a single cluster), the
/// index is defined as 0.
pub fn adjusted_rand_index(a: &[Option<usize>], b: &[Option<usize>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "label vectors have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let pairs: Vec<(usize, usize)> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| x.and_then(|x| y.map(|y| (x, y))))
        .collect();
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Degenerate(
            "adjusted Rand index needs at least 2 jointly labelled points".into(),
        ));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for &(x, y) in &pairs {
        *table.entry((x, y)).or_insert(0) += 1;
        *rows.entry(x).or_insert(0) += 1;
        *cols.entry(y).or_insert(0) += 1;
    }
    let comb2 = |x: u64| -> f64 { (x * x.saturating_sub(1)) as f64 / 2.0 };
    let index: f64 = table.values().map(|&v| comb2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| comb2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| comb2(v)).sum();
    let total = comb2(n as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom.abs() < 1e-12 {
        return Ok(0.0);
    }
    Ok((index - expected) / denom)
}

/// Multivariate skewness and kurtosis normality tests.
///
/// With centred rows c_i and the 1/ℓ-normalised sample covariance S, the
/// skewness statistic is (1/6ℓ)·Σ_{i,j}[(c_iᵀS⁻¹c_j)]³ with an upper-tail
/// χ²(d(d+1)(d+2)/6) null, and the kurtosis statistic is the standardised
/// mean of squared Mahalanobis norms with a two-sided N(0,1) null.
pub fn mardia_tests(x: ArrayView2<f64>) -> Result<(TestReport, TestReport)> {
    let (l, d) = x.dim();
    if d == 0 || l <= d + 1 {
        return Err(Error::Dimension(format!(
            "normality tests need more than d+1 = {} rows, got {l}",
            d + 1
        )));
    }
    let lf = l as f64;
    let df = d as f64;
    let mut mean = vec![0.0; d];
    for row in x.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= lf;
    }
    let mut s = ndarray::Array2::zeros((d, d));
    for row in x.rows() {
        for a in 0..d {
            for b in a..d {
                s[[a, b]] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = s[[a, b]] / lf;
            s[[a, b]] = v;
            s[[b, a]] = v;
        }
    }
    let chol = Cholesky::new(to_dmatrix(&s)).ok_or(Error::NotPositiveDefinite)?;

    // Whitened rows w_i = L⁻¹(x_i − x̄), so c_iᵀS⁻¹c_j = w_i·w_j.
    let mut w = vec![0.0; l * d];
    let lmat = chol.l();
    for (i, row) in x.rows().into_iter().enumerate() {
        let wr = &mut w[i * d..(i + 1) * d];
        for r in 0..d {
            let mut v = row[r] - mean[r];
            for c in 0..r {
                v -= lmat[(r, c)] * wr[c];
            }
            wr[r] = v / lmat[(r, r)];
        }
    }

    // Σ_{i,j}(w_i·w_j)³ equals the squared Frobenius norm of the third
    // moment tensor M_abc = Σ_i w_ia·w_ib·w_ic, which is O(ℓ·d³) instead
    // of O(ℓ²·d).
    let mut third = vec![0.0; d * d * d];
    let mut b2 = 0.0;
    for i in 0..l {
        let wr = &w[i * d..(i + 1) * d];
        let sq: f64 = wr.iter().map(|v| v * v).sum();
        b2 += sq * sq;
        for a in 0..d {
            for b in 0..d {
                let ab = wr[a] * wr[b];
                let base = (a * d + b) * d;
                for c in 0..d {
                    third[base + c] += ab * wr[c];
                }
            }
        }
    }
    b2 /= lf;
    let skew_sum: f64 = third.iter().map(|v| v * v).sum();
    let t_s = skew_sum / (6.0 * lf);
    let t_k = (lf / (8.0 * df * (df + 2.0))).sqrt()
        * (b2 - df * (df + 2.0) * (lf - 1.0) / (lf + 1.0));

    let skew_df = df * (df + 1.0) * (df + 2.0) / 6.0;
    let chi = ChiSquared::new(skew_df).expect("positive degrees of freedom");
    let p_s = chi.sf(t_s).clamp(0.0, 1.0);
    let normal = Normal::standard();
    let p_k = (2.0 * normal.sf(t_k.abs())).clamp(0.0, 1.0);
    Ok((
        TestReport {
            statistic: t_s,
            p_value: p_s,
            null: format!("chi-squared({skew_df})"),
            n_obs: l,
        },
        TestReport {
            statistic: t_k,
            p_value: p_k,
            null: "N(0,1), two-sided".into(),
            n_obs: l,
        },
    ))
}

/// Sup-distance between the empirical CDF of `x` and the Gaussian CDF
/// with moment-matched mean and (1/ℓ) variance. Smaller is closer to
/// Gaussian.
pub fn ks_gaussian_score(x: &[f64]) -> Result<f64> {
    let l = x.len();
    if l < 2 {
        return Err(Error::Dimension(
            "a Gaussian-fit score needs at least 2 values".into(),
        ));
    }
    let lf = l as f64;
    let mean = x.iter().sum::<f64>() / lf;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / lf;
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::Degenerate(
            "constant sample has no Gaussian-fit score".into(),
        ));
    }
    let normal = Normal::new(mean, var.sqrt()).expect("positive standard deviation");
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mut sup: f64 = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        let f = normal.cdf(v);
        let above = (i + 1) as f64 / lf;
        let below = i as f64 / lf;
        sup = sup.max((f - above).abs()).max((f - below).abs());
    }
    Ok(sup)
}

/// Exact binomial sign test on paired differences. Zero differences are
/// dropped; the statistic is the number of positive differences among
/// the non-zero ones, tested against Binomial(n, 1/2).
pub fn paired_sign_test(delta: &[f64], alternative: Alternative) -> Result<TestReport> {
    let nonzero: Vec<f64> = delta.iter().copied().filter(|&v| v != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Err(Error::Degenerate(
            "sign test is undefined when every paired difference is zero".into(),
        ));
    }
    let k = nonzero.iter().filter(|&&v| v > 0.0).count() as u64;
    let binom = Binomial::new(0.5, n as u64).expect("valid binomial");
    let p_ge = if k == 0 { 1.0 } else { binom.sf(k - 1) };
    let p_le = binom.cdf(k);
    let p = match alternative {
        Alternative::Greater => p_ge,
        Alternative::Less => p_le,
        Alternative::TwoSided => (2.0 * p_ge.min(p_le)).min(1.0),
    };
    Ok(TestReport {
        statistic: k as f64,
        p_value: p.clamp(0.0, 1.0),
        null: format!("Binomial({n}, 1/2)"),
        n_obs: n,
    })
}

/// One-way ANOVA F-test for equal group means; used to check whether a
/// per-group quantity genuinely differs across groups.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<TestReport> {
    let k = groups.len();
    let n: usize = groups.iter().map(|g| g.len()).sum();
    if k < 2 || groups.iter().any(|g| g.is_empty()) || n <= k {
        return Err(Error::Dimension(
            "ANOVA needs ≥ 2 non-empty groups and more observations than groups".into(),
        ));
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand) * (m - grand);
        ssw += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let df1 = (k - 1) as f64;
    let df2 = (n - k) as f64;
    if ssw <= 0.0 {
        return Err(Error::Degenerate(
            "zero within-group variance makes the F statistic undefined".into(),
        ));
    }
    let f = (ssb / df1) / (ssw / df2);
    let dist = FisherSnedecor::new(df1, df2).expect("positive degrees of freedom");
    Ok(TestReport {
        statistic: f,
        p_value: dist.sf(f).clamp(0.0, 1.0),
        null: format!("F({df1}, {df2})"),
        n_obs: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use rand::Rng;

    fn some(v: &[usize]) -> Vec<Option<usize>> {
        v.iter().map(|&x| Some(x)).collect()
    }

    /// Independent pair-counting form of the adjusted index, enumerating
    /// all pairs directly.
    fn ari_by_pairs(a: &[Option<usize>], b: &[Option<usize>]) -> f64 {
        let pairs: Vec<(usize, usize)> = a
            .iter()
            .zip(b)
            .filter_map(|(x, y)| x.and_then(|x| y.map(|y| (x, y))))
            .collect();
        let (mut both, mut only_a, mut only_b, mut neither) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..pairs.len() {
            for j in (i + 1)..pairs.len() {
                let sa = pairs[i].0 == pairs[j].0;
                let sb = pairs[i].1 == pairs[j].1;
                match (sa, sb) {
                    (true, true) => both += 1.0,
                    (true, false) => only_a += 1.0,
                    (false, true) => only_b += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let num = 2.0 * (both * neither - only_a * only_b);
        let den = (both + only_a) * (only_a + neither) + (both + only_b) * (only_b + neither);
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    #[test]
    fn identical_and_permuted_labelings_score_one() {
        let a = some(&[0, 0, 1, 1, 2]);
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        let permuted = some(&[2, 2, 0, 0, 1]);
        assert_eq!(adjusted_rand_index(&a, &permuted).unwrap(), 1.0);
        // Symmetry.
        let b = some(&[0, 1, 1, 1, 2]);
        let ab = adjusted_rand_index(&a, &b).unwrap();
        let ba = adjusted_rand_index(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-15);
    }

    #[test]
    fn four_point_example_matches_pair_enumeration() {
        let a = some(&[1, 1, 2, 2]);
        let b = some(&[1, 1, 1, 2]);
        let got = adjusted_rand_index(&a, &b).unwrap();
        let want = ari_by_pairs(&a, &b);
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        // For this configuration the pair counts cancel exactly.
        assert_eq!(got, 0.0);
    }

    #[test]
    fn contingency_formula_matches_pair_counting_on_random_labelings() {
        let mut rng = stream_rng(77, &[1]);
        for _ in 0..100 {
            let n = rng.random_range(4..=12);
            let a: Vec<Option<usize>> = (0..n)
                .map(|_| {
                    if rng.random::<f64>() < 0.15 {
                        None
                    } else {
                        Some(rng.random_range(0..3usize))
                    }
                })
                .collect();
            let b: Vec<Option<usize>> = (0..n).map(|_| Some(rng.random_range(0..4usize))).collect();
            let effective = a
                .iter()
                .zip(&b)
                .filter(|(x, y)| x.is_some() && y.is_some())
                .count();
            if effective < 2 {
                continue;
            }
            let got = adjusted_rand_index(&a, &b).unwrap();
            let want = ari_by_pairs(&a, &b);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn unassigned_entries_are_dropped_pairwise() {
        let a = vec![Some(0), None, Some(1), Some(1), Some(0)];
        let b = vec![Some(5), Some(9), None, Some(7), Some(5)];
        // Indices 1 and 2 drop out; the remaining three points carry
        // identical partitions.
        assert_eq!(adjusted_rand_index(&a, &b).unwrap(), 1.0);
        // All-singleton effective sets hit the 0/0 convention.
        let a2 = vec![Some(0), None, Some(1)];
        let b2 = vec![Some(5), Some(9), Some(7)];
        assert_eq!(adjusted_rand_index(&a2, &b2).unwrap(), 0.0);
    }

    #[test]
    fn too_few_effective_points_is_an_error() {
        let a = vec![Some(0), None];
        let b = vec![Some(0), Some(1)];
        assert!(adjusted_rand_index(&a, &b).is_err());
        assert!(adjusted_rand_index(&some(&[1]), &some(&[1])).is_err());
    }

    #[test]
    fn symmetric_univariate_sample_has_zero_skewness_and_kurtosis() {
        let x = ndarray::array![[-1.0], [0.0], [1.0]];
        let (skew, kurt) = mardia_tests(x.view()).unwrap();
        assert!(skew.statistic.abs() < 1e-12);
        // b₂ = 1.5 equals d(d+2)(ℓ−1)/(ℓ+1) = 1.5 exactly here.
        assert!(kurt.statistic.abs() < 1e-12);
        assert!((skew.p_value - 1.0).abs() < 1e-12);
        assert!((kurt.p_value - 1.0).abs() < 1e-12);
        assert_eq!(skew.n_obs, 3);
    }

    #[test]
    fn third_moment_tensor_matches_double_loop() {
        let mut rng = stream_rng(5, &[8]);
        let l = 40;
        let d = 3;
        let mut x = ndarray::Array2::zeros((l, d));
        for v in x.iter_mut() {
            *v = rng.random::<f64>() * 2.0 - 0.5;
        }
        let (skew, _) = mardia_tests(x.view()).unwrap();

        // Direct O(ℓ²) evaluation through the explicit inverse.
        let lf = l as f64;
        let mean: Vec<f64> = (0..d).map(|a| x.column(a).sum() / lf).collect();
        let mut s = ndarray::Array2::zeros((d, d));
        for row in x.rows() {
            for a in 0..d {
                for b in 0..d {
                    s[[a, b]] += (row[a] - mean[a]) * (row[b] - mean[b]) / lf;
                }
            }
        }
        let sinv = to_dmatrix(&s).try_inverse().unwrap();
        let mut total = 0.0;
        for i in 0..l {
            for j in 0..l {
                let mut q = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        q += (x[[i, a]] - mean[a]) * sinv[(a, b)] * (x[[j, b]] - mean[b]);
                    }
                }
                total += q * q * q;
            }
        }
        let want = total / (6.0 * lf);
        assert!(
            (skew.statistic - want).abs() / want.abs() < 1e-10,
            "{} vs {want}",
            skew.statistic
        );
    }

    #[test]
    fn statistics_are_affine_invariant() {
        let mut rng = stream_rng(6, &[3]);
        let l = 60;
        let mut x = ndarray::Array2::zeros((l, 2));
        for v in x.iter_mut() {
            *v = rng.random::<f64>() + 0.3 * rng.random::<f64>();
        }
        let (s1, k1) = mardia_tests(x.view()).unwrap();
        // y = A x + b with invertible A.
        let a = [[2.0, 0.7], [-0.4, 1.1]];
        let b = [5.0, -3.0];
        let mut y = ndarray::Array2::zeros((l, 2));
        for i in 0..l {
            for r in 0..2 {
                y[[i, r]] = a[r][0] * x[[i, 0]] + a[r][1] * x[[i, 1]] + b[r];
            }
        }
        let (s2, k2) = mardia_tests(y.view()).unwrap();
        assert!((s1.statistic - s2.statistic).abs() < 1e-8);
        assert!((k1.statistic - k2.statistic).abs() < 1e-8);
    }

    #[test]
    fn null_calibration_of_normality_p_values() {
        let mut rng = stream_rng(99, &[7]);
        let reps = 200;
        let l = 5000;
        let mut p_s = Vec::with_capacity(reps);
        let mut p_k = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut x = ndarray::Array2::zeros((l, 2));
            for v in x.iter_mut() {
                // Box–Muller.
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                *v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            }
            let (s, k) = mardia_tests(x.view()).unwrap();
            p_s.push(s.p_value);
            p_k.push(k.p_value);
        }
        for p in [&p_s, &p_k] {
            let mut sorted = p.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut ks: f64 = 0.0;
            for (i, &v) in sorted.iter().enumerate() {
                ks = ks
                    .max((v - (i + 1) as f64 / reps as f64).abs())
                    .max((v - i as f64 / reps as f64).abs());
            }
            assert!(ks < 0.1, "null p-values deviate from uniform: KS = {ks}");
        }
    }

    #[test]
    fn gaussian_quantile_sample_scores_near_zero() {
        let normal = Normal::standard();
        let x: Vec<f64> = (1..=100)
            .map(|i| normal.inverse_cdf((i as f64 - 0.5) / 100.0))
            .collect();
        let score = ks_gaussian_score(&x).unwrap();
        assert!(score < 0.01, "score {score}");
    }

    #[test]
    fn two_point_sample_score_is_exact() {
        let score = ks_gaussian_score(&[0.0, 1.0]).unwrap();
        // Mean 1/2, MLE standard deviation 1/2: the worst gap is at each
        // point, |Φ(1) − 1/2|.
        let want = Normal::standard().cdf(1.0) - 0.5;
        assert!((score - want).abs() < 1e-12);
    }

    #[test]
    fn constant_sample_has_no_score() {
        assert!(ks_gaussian_score(&[2.0, 2.0, 2.0]).is_err());
        assert!(ks_gaussian_score(&[1.0]).is_err());
    }

    #[test]
    fn sign_test_extreme_and_balanced_cases() {
        let all_pos = vec![0.5; 20];
        let report = paired_sign_test(&all_pos, Alternative::Greater).unwrap();
        let want = 0.5f64.powi(20);
        assert!((report.p_value - want).abs() / want < 1e-9);
        assert_eq!(report.n_obs, 20);

        let mut balanced = vec![1.0; 10];
        balanced.extend(vec![-1.0; 10]);
        let two = paired_sign_test(&balanced, Alternative::TwoSided).unwrap();
        assert_eq!(two.p_value, 1.0);

        // Zeros are dropped before counting.
        let with_zeros = vec![1.0, 0.0, 1.0, 0.0, 1.0];
        let r = paired_sign_test(&with_zeros, Alternative::Greater).unwrap();
        assert_eq!(r.n_obs, 3);
        assert!((r.p_value - 0.125).abs() < 1e-12);
    }

    #[test]
    fn sign_test_p_decreases_with_more_positives() {
        let mut prev = 1.1;
        for k in 0..=12usize {
            let delta: Vec<f64> = (0..12).map(|i| if i < k { 1.0 } else { -1.0 }).collect();
            let p = paired_sign_test(&delta, Alternative::Greater).unwrap().p_value;
            assert!(p < prev + 1e-15, "p not monotone at k={k}");
            prev = p;
        }
    }

    #[test]
    fn all_zero_differences_are_rejected() {
        assert!(paired_sign_test(&[0.0, 0.0], Alternative::TwoSided).is_err());
    }

    #[test]
    fn anova_separates_shifted_groups() {
        let mut rng = stream_rng(12, &[5]);
        let noise = |rng: &mut rand_chacha::ChaCha8Rng| rng.random::<f64>() * 0.1;
        let g1: Vec<f64> = (0..30).map(|_| 1.0 + noise(&mut rng)).collect();
        let g2: Vec<f64> = (0..30).map(|_| 2.0 + noise(&mut rng)).collect();
        let g3: Vec<f64> = (0..30).map(|_| 3.0 + noise(&mut rng)).collect();
        let separated = one_way_anova(&[g1.clone(), g2, g3]).unwrap();
        assert!(separated.p_value < 1e-10);

        let h1: Vec<f64> = (0..30).map(|_| 1.0 + noise(&mut rng)).collect();
        let same = one_way_anova(&[g1, h1]).unwrap();
        assert!(same.p_value > 0.01);
    }
}
