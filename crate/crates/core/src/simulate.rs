//! Blockmodel samplers with known ground truth.
//!
//! Graphs are drawn from (degree-corrected) stochastic blockmodels: each
//! node gets a community label and a degree-correction value, and edges
//! are independent Bernoulli draws with probability ρ_i ρ_j B_{z_i z_j}
//! (or ρ_i ρ′_j B_{z_i z′_j} across the two modes of a bipartite graph).
//! Setting the correction law to the constant 1 recovers the plain
//! blockmodel. The benchmark protocols used by the replication studies
//! live here too, as deterministic per-replication streams.

use ndarray::Array2;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::seed::stream_rng;

/// Distribution of the node-level degree-correction values, supported on
/// [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoLaw {
    /// Every node gets the same value; `Constant(1.0)` disables degree
    /// correction entirely.
    Constant(f64),
    Uniform(f64, f64),
    Beta(f64, f64),
}

impl RhoLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RhoLaw::Constant(c) => (0.0..=1.0).contains(&c),
            RhoLaw::Uniform(a, b) => 0.0 <= a && a <= b && b <= 1.0,
            RhoLaw::Beta(a, b) => a > 0.0 && b > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "degree-correction law {self:?} is not supported on [0, 1]"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RhoLaw::Constant(c) => c,
            RhoLaw::Uniform(a, b) => a + (b - a) * rng.random::<f64>(),
            RhoLaw::Beta(a, b) => rand_distr::Beta::new(a, b)
                .expect("validated Beta parameters")
                .sample(rng),
        }
    }

    /// E(ρ^p), in closed form.
    pub fn moment(&self, p: u32) -> f64 {
        match *self {
            RhoLaw::Constant(c) => c.powi(p as i32),
            RhoLaw::Uniform(a, b) => {
                if (b - a).abs() < 1e-300 {
                    a.powi(p as i32)
                } else {
                    let q = p as i32 + 1;
                    (b.powi(q) - a.powi(q)) / (q as f64 * (b - a))
                }
            }
            RhoLaw::Beta(a, b) => {
                let mut m = 1.0;
                for i in 0..p {
                    let i = i as f64;
                    m *= (a + i) / (a + b + i);
                }
                m
            }
        }
    }

    /// Supremum of the support.
    pub fn sup(&self) -> f64 {
        match *self {
            RhoLaw::Constant(c) => c,
            RhoLaw::Uniform(_, b) => b,
            RhoLaw::Beta(_, _) => 1.0,
        }
    }
}

/// How nodes are assigned to communities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    /// Sample each label independently from these probabilities.
    Probabilities(Vec<f64>),
    /// Exact block assignment: the first `sizes[0]` nodes get label 0, the
    /// next `sizes[1]` label 1, and so on.
    Sizes(Vec<usize>),
}

impl Allocation {
    /// Exact equal split of `n` nodes over `k` communities, remainders
    /// going to the earliest communities.
    pub fn equal(n: usize, k: usize) -> Allocation {
        let base = n / k;
        let extra = n % k;
        Allocation::Sizes((0..k).map(|c| base + usize::from(c < extra)).collect())
    }

    fn n_communities(&self) -> usize {
        match self {
            Allocation::Probabilities(p) => p.len(),
            Allocation::Sizes(s) => s.len(),
        }
    }

    fn validate(&self, n: usize, k: usize) -> Result<()> {
        if self.n_communities() != k {
            return Err(Error::InvalidSpec(format!(
                "allocation describes {} communities but B has {k}",
                self.n_communities()
            )));
        }
        match self {
            Allocation::Probabilities(p) => {
                let sum: f64 = p.iter().sum();
                if p.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-8 {
                    return Err(Error::InvalidSpec(
                        "community probabilities must be non-negative and sum to 1".into(),
                    ));
                }
            }
            Allocation::Sizes(s) => {
                if s.iter().sum::<usize>() != n {
                    return Err(Error::InvalidSpec(format!(
                        "community sizes sum to {} but n = {n}",
                        s.iter().sum::<usize>()
                    )));
                }
            }
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        match self {
            Allocation::Probabilities(p) => {
                let mut cum = Vec::with_capacity(p.len());
                let mut acc = 0.0;
                for &v in p {
                    acc += v;
                    cum.push(acc);
                }
                (0..n)
                    .map(|_| {
                        let u: f64 = rng.random();
                        cum.iter().position(|&c| u <= c).unwrap_or(p.len() - 1)
                    })
                    .collect()
            }
            Allocation::Sizes(sizes) => {
                let mut z = Vec::with_capacity(n);
                for (label, &s) in sizes.iter().enumerate() {
                    z.extend(std::iter::repeat_n(label, s));
                }
                z
            }
        }
    }
}

/// Full description of a blockmodel to sample from.
#[derive(Debug, Clone)]
pub struct BlockModelSpec {
    pub n: usize,
    /// Destination-side node count; present only for bipartite models.
    pub n_prime: Option<usize>,
    /// K×K block probability matrix (K×K′ for bipartite models).
    pub b: Array2<f64>,
    pub allocation: Allocation,
    pub allocation_prime: Option<Allocation>,
    pub rho_law: RhoLaw,
    pub rho_law_prime: Option<RhoLaw>,
    /// Community latent positions (K×dim) when the model was specified
    /// through positions rather than a raw B; carried into the truth.
    pub latent_mu: Option<Array2<f64>>,
    pub seed: u64,
}

impl BlockModelSpec {
    /// Undirected spec from a block matrix.
    pub fn undirected(n: usize, b: Array2<f64>, allocation: Allocation, rho_law: RhoLaw, seed: u64) -> Self {
        BlockModelSpec {
            n,
            n_prime: None,
            b,
            allocation,
            allocation_prime: None,
            rho_law,
            rho_law_prime: None,
            latent_mu: None,
            seed,
        }
    }

    /// Undirected spec from community latent positions: B = μμᵀ.
    pub fn from_positions(
        n: usize,
        mu: Array2<f64>,
        allocation: Allocation,
        rho_law: RhoLaw,
        seed: u64,
    ) -> Self {
        let k = mu.nrows();
        let mut b = Array2::zeros((k, k));
        for a in 0..k {
            for c in 0..k {
                b[[a, c]] = (0..mu.ncols()).map(|j| mu[[a, j]] * mu[[c, j]]).sum();
            }
        }
        BlockModelSpec {
            n,
            n_prime: None,
            b,
            allocation,
            allocation_prime: None,
            rho_law,
            rho_law_prime: None,
            latent_mu: Some(mu),
            seed,
        }
    }

    pub fn bipartite(
        n: usize,
        n_prime: usize,
        b: Array2<f64>,
        allocation: Allocation,
        allocation_prime: Allocation,
        rho_law: RhoLaw,
        rho_law_prime: RhoLaw,
        seed: u64,
    ) -> Self {
        BlockModelSpec {
            n,
            n_prime: Some(n_prime),
            b,
            allocation,
            allocation_prime: Some(allocation_prime),
            rho_law,
            rho_law_prime: Some(rho_law_prime),
            latent_mu: None,
            seed,
        }
    }

    pub fn k(&self) -> usize {
        self.b.nrows()
    }

    pub fn k_prime(&self) -> usize {
        self.b.ncols()
    }

    fn validate_common(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidSpec("n must be positive".into()));
        }
        if self.b.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidSpec(
                "block probabilities must lie in [0, 1]".into(),
            ));
        }
        self.rho_law.validate()?;
        self.allocation.validate(self.n, self.k())?;
        Ok(())
    }

    fn validate_undirected(&self) -> Result<()> {
        self.validate_common()?;
        if self.n_prime.is_some() {
            return Err(Error::InvalidSpec(
                "undirected sampling does not take a second node set".into(),
            ));
        }
        if self.b.nrows() != self.b.ncols() {
            return Err(Error::InvalidSpec("B must be square for undirected models".into()));
        }
        for a in 0..self.k() {
            for c in 0..a {
                if (self.b[[a, c]] - self.b[[c, a]]).abs() > 1e-12 {
                    return Err(Error::InvalidSpec("B must be symmetric for undirected models".into()));
                }
            }
        }
        Ok(())
    }

    fn validate_bipartite(&self) -> Result<()> {
        self.validate_common()?;
        let n_prime = self
            .n_prime
            .ok_or_else(|| Error::InvalidSpec("bipartite sampling needs n_prime".into()))?;
        if n_prime == 0 {
            return Err(Error::InvalidSpec("n_prime must be positive".into()));
        }
        let alloc = self
            .allocation_prime
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec("bipartite sampling needs allocation_prime".into()))?;
        alloc.validate(n_prime, self.k_prime())?;
        self.rho_law_prime
            .ok_or_else(|| Error::InvalidSpec("bipartite sampling needs rho_law_prime".into()))?
            .validate()?;
        Ok(())
    }

    /// Whether B is positive semidefinite (required for exact latent-
    /// position representations of undirected models).
    pub fn block_matrix_is_psd(&self) -> bool {
        if self.b.nrows() != self.b.ncols() {
            return false;
        }
        let eig = crate::linalg::to_dmatrix(&self.b).symmetric_eigen();
        eig.eigenvalues.iter().all(|&v| v >= -1e-10)
    }
}

/// Sampled node-level truth behind a simulated graph.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub z: Vec<usize>,
    pub z_prime: Option<Vec<usize>>,
    pub rho: Vec<f64>,
    pub rho_prime: Option<Vec<f64>>,
    /// Community latent positions (K×dim), when known.
    pub latent_mu: Option<Array2<f64>>,
}

impl GroundTruth {
    /// Labels as the `Option` form used by the evaluation utilities.
    pub fn labels(&self) -> Vec<Option<usize>> {
        self.z.iter().map(|&l| Some(l)).collect()
    }

    pub fn labels_prime(&self) -> Option<Vec<Option<usize>>> {
        self.z_prime
            .as_ref()
            .map(|z| z.iter().map(|&l| Some(l)).collect())
    }

    /// Write the truth as a JSON sidecar next to an exported graph.
    pub fn write_json<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            z: &'a [usize],
            #[serde(skip_serializing_if = "Option::is_none")]
            z_prime: Option<&'a [usize]>,
            rho: &'a [f64],
            #[serde(skip_serializing_if = "Option::is_none")]
            rho_prime: Option<&'a [f64]>,
            #[serde(skip_serializing_if = "Option::is_none")]
            latent_mu: Option<Vec<Vec<f64>>>,
        }
        let sidecar = Sidecar {
            z: &self.z,
            z_prime: self.z_prime.as_deref(),
            rho: &self.rho,
            rho_prime: self.rho_prime.as_deref(),
            latent_mu: self
                .latent_mu
                .as_ref()
                .map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect()),
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, &sidecar)?;
        Ok(())
    }
}

/// Sample an undirected degree-corrected blockmodel graph.
pub fn sample_dcsbm(spec: &BlockModelSpec) -> Result<(SparseGraph, GroundTruth)> {
    spec.validate_undirected()?;
    let mut rng = stream_rng(spec.seed, &[0x4443_5342]);
    let z = spec.allocation.draw(spec.n, &mut rng);
    let rho: Vec<f64> = (0..spec.n).map(|_| spec.rho_law.sample(&mut rng)).collect();
    let graph = sample_adjacency_with_truth(&spec.b, &z, &rho, &mut rng)?;
    Ok((
        graph,
        GroundTruth {
            z,
            z_prime: None,
            rho,
            rho_prime: None,
            latent_mu: spec.latent_mu.clone(),
        },
    ))
}

/// Resample only the adjacency, holding labels and corrections fixed
/// (used by the repeated-simulation distributional checks).
pub fn sample_adjacency_with_truth<R: Rng + ?Sized>(
    b: &Array2<f64>,
    z: &[usize],
    rho: &[f64],
    rng: &mut R,
) -> Result<SparseGraph> {
    let n = z.len();
    if rho.len() != n {
        return Err(Error::Dimension(
            "labels and corrections must have equal length".into(),
        ));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = rho[i] * rho[j] * b[[z[i], z[j]]];
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    SparseGraph::from_edges(n, &edges)
}

/// Sample a bipartite degree-corrected co-blockmodel graph.
pub fn sample_dcscbm(spec: &BlockModelSpec) -> Result<(SparseGraph, GroundTruth)> {
    spec.validate_bipartite()?;
    let n_prime = spec.n_prime.unwrap();
    let mut rng = stream_rng(spec.seed, &[0x4443_5343]);
    let z = spec.allocation.draw(spec.n, &mut rng);
    let z_prime = spec
        .allocation_prime
        .as_ref()
        .unwrap()
        .draw(n_prime, &mut rng);
    let rho: Vec<f64> = (0..spec.n).map(|_| spec.rho_law.sample(&mut rng)).collect();
    let law_prime = spec.rho_law_prime.unwrap();
    let rho_prime: Vec<f64> = (0..n_prime).map(|_| law_prime.sample(&mut rng)).collect();
    let mut edges = Vec::new();
    for i in 0..spec.n {
        let base = rho[i];
        for (j, &rp) in rho_prime.iter().enumerate() {
            let p = base * rp * spec.b[[z[i], z_prime[j]]];
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = SparseGraph::from_bipartite_edges(spec.n, n_prime, &edges)?;
    Ok((
        graph,
        GroundTruth {
            z,
            z_prime: Some(z_prime),
            rho,
            rho_prime: Some(rho_prime),
            latent_mu: spec.latent_mu.clone(),
        },
    ))
}

/// The named replication protocols behind the recovery benchmarks: a
/// fresh Uniform(0,1) block matrix, Beta(2,1) degree corrections, and
/// equal community sizes at every replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkProtocol {
    /// Undirected, n = 1000, K = 2.
    UndirectedK2,
    /// Undirected, n = 1000, K = 3.
    UndirectedK3,
    /// Bipartite, n = 1000, n′ = 1500, K = 2, K′ = 3.
    Bipartite,
}

impl BenchmarkProtocol {
    pub fn parse(name: &str) -> Result<BenchmarkProtocol> {
        match name.to_ascii_lowercase().as_str() {
            "undirected-k2" => Ok(BenchmarkProtocol::UndirectedK2),
            "undirected-k3" => Ok(BenchmarkProtocol::UndirectedK3),
            "bipartite" => Ok(BenchmarkProtocol::Bipartite),
            other => Err(Error::UnknownExperiment(other.into())),
        }
    }
}

/// One protocol replication: the graph, its truth, and the block matrix
/// drawn for this replication.
#[derive(Debug, Clone)]
pub struct Replication {
    pub graph: SparseGraph,
    pub truth: GroundTruth,
    pub b: Array2<f64>,
}

/// Draw a symmetric K×K block matrix with Uniform(0,1) upper triangle
/// (including the diagonal), mirrored below. No positive-definiteness
/// filtering is applied.
fn draw_symmetric_uniform_b<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Array2<f64> {
    let mut b = Array2::zeros((k, k));
    for i in 0..k {
        for j in i..k {
            let v = rng.random::<f64>();
            b[[i, j]] = v;
            b[[j, i]] = v;
        }
    }
    b
}

/// Generate the `rep`-th replication of a benchmark protocol. Replications
/// are independent streams derived from the base seed, so they can be
/// produced in any order (or in parallel).
pub fn benchmark_replication(which: BenchmarkProtocol, rep: usize, seed: u64) -> Result<Replication> {
    let rep_seed = crate::seed::derive_seed(seed, &[0x5441_424c, which as u64, rep as u64]);
    let mut rng = stream_rng(rep_seed, &[0x42]);
    match which {
        BenchmarkProtocol::UndirectedK2 | BenchmarkProtocol::UndirectedK3 => {
            let k = if which == BenchmarkProtocol::UndirectedK2 { 2 } else { 3 };
            let b = draw_symmetric_uniform_b(k, &mut rng);
            let spec = BlockModelSpec::undirected(
                1000,
                b.clone(),
                Allocation::equal(1000, k),
                RhoLaw::Beta(2.0, 1.0),
                rep_seed,
            );
            let (graph, truth) = sample_dcsbm(&spec)?;
            Ok(Replication { graph, truth, b })
        }
        BenchmarkProtocol::Bipartite => {
            let mut b = Array2::zeros((2, 3));
            for i in 0..2 {
                for j in 0..3 {
                    b[[i, j]] = rng.random::<f64>();
                }
            }
            let spec = BlockModelSpec::bipartite(
                1000,
                1500,
                b.clone(),
                Allocation::equal(1000, 2),
                Allocation::equal(1500, 3),
                RhoLaw::Beta(2.0, 1.0),
                RhoLaw::Beta(2.0, 1.0),
                rep_seed,
            );
            let (graph, truth) = sample_dcscbm(&spec)?;
            Ok(Replication { graph, truth, b })
        }
    }
}

/// Lazy stream of protocol replications.
pub fn sample_benchmark(
    which: BenchmarkProtocol,
    n_reps: usize,
    seed: u64,
) -> impl Iterator<Item = Result<Replication>> {
    (0..n_reps).map(move |rep| benchmark_replication(which, rep, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_block_matrix_gives_empty_graph() {
        let spec = BlockModelSpec::undirected(
            50,
            Array2::zeros((2, 2)),
            Allocation::equal(50, 2),
            RhoLaw::Constant(1.0),
            7,
        );
        let (g, truth) = sample_dcsbm(&spec).unwrap();
        assert_eq!(g.n_edges(), 0);
        assert_eq!(truth.z.len(), 50);
        assert!(truth.rho.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn plain_sbm_block_densities_match_b() {
        let mut b = Array2::zeros((2, 2));
        b[[0, 0]] = 0.3;
        b[[1, 1]] = 0.2;
        b[[0, 1]] = 0.1;
        b[[1, 0]] = 0.1;
        let spec = BlockModelSpec::undirected(
            400,
            b.clone(),
            Allocation::equal(400, 2),
            RhoLaw::Constant(1.0),
            11,
        );
        let (g, truth) = sample_dcsbm(&spec).unwrap();
        let mut count = [[0usize; 2]; 2];
        let mut pairs = [[0usize; 2]; 2];
        for i in 0..400 {
            for j in (i + 1)..400 {
                let (zi, zj) = (truth.z[i], truth.z[j]);
                pairs[zi][zj] += 1;
                if g.neighbors(i).binary_search(&j).is_ok() {
                    count[zi][zj] += 1;
                }
            }
        }
        for zi in 0..2 {
            for zj in zi..2 {
                let n_pairs = pairs[zi][zj] as f64;
                let p = b[[zi, zj]];
                let got = count[zi][zj] as f64 / n_pairs;
                let se = (p * (1.0 - p) / n_pairs).sqrt();
                assert!(
                    (got - p).abs() < 3.0 * se,
                    "block ({zi},{zj}): density {got:.4} vs {p} (se {se:.4})"
                );
            }
        }
    }

    #[test]
    fn undirected_sample_is_symmetric_with_zero_diagonal() {
        let mut b = Array2::zeros((2, 2));
        b.fill(0.4);
        let spec = BlockModelSpec::undirected(
            30,
            b,
            Allocation::equal(30, 2),
            RhoLaw::Uniform(0.2, 1.0),
            3,
        );
        let (g, _) = sample_dcsbm(&spec).unwrap();
        let a = g.to_dense();
        for i in 0..30 {
            assert_eq!(a[[i, i]], 0.0);
            for j in 0..30 {
                assert_eq!(a[[i, j]], a[[j, i]]);
            }
        }
    }

    #[test]
    fn single_cell_bipartite_certain_edge() {
        let spec = BlockModelSpec::bipartite(
            1,
            1,
            Array2::from_elem((1, 1), 1.0),
            Allocation::Sizes(vec![1]),
            Allocation::Sizes(vec![1]),
            RhoLaw::Constant(1.0),
            RhoLaw::Constant(1.0),
            99,
        );
        let (g, _) = sample_dcscbm(&spec).unwrap();
        assert_eq!(g.n_edges(), 1);
    }

    #[test]
    fn bipartite_row_degree_matches_expectation() {
        let spec = BlockModelSpec::bipartite(
            5,
            5000,
            Array2::from_elem((1, 1), 0.3),
            Allocation::Sizes(vec![5]),
            Allocation::Sizes(vec![5000]),
            RhoLaw::Constant(1.0),
            RhoLaw::Constant(1.0),
            13,
        );
        let (g, _) = sample_dcscbm(&spec).unwrap();
        let expect = 5000.0 * 0.3;
        let se = (5000.0f64 * 0.3 * 0.7).sqrt();
        for i in 0..5 {
            let d = g.row_degree(i) as f64;
            assert!((d - expect).abs() < 3.0 * se, "row {i} degree {d}");
        }
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let spec = BlockModelSpec::undirected(
            80,
            Array2::from_elem((2, 2), 0.2),
            Allocation::equal(80, 2),
            RhoLaw::Beta(2.0, 1.0),
            21,
        );
        let (g1, t1) = sample_dcsbm(&spec).unwrap();
        let (g2, t2) = sample_dcsbm(&spec).unwrap();
        assert_eq!(g1.to_dense(), g2.to_dense());
        assert_eq!(t1.rho, t2.rho);
        let other = BlockModelSpec { seed: 22, ..spec };
        let (g3, _) = sample_dcsbm(&other).unwrap();
        assert_ne!(g1.to_dense(), g3.to_dense());
    }

    #[test]
    fn benchmark_protocol_allocates_equal_sizes_and_fresh_b() {
        let rep = benchmark_replication(BenchmarkProtocol::UndirectedK2, 0, 5).unwrap();
        assert_eq!(rep.graph.n_nodes(), 1000);
        let size0 = rep.truth.z.iter().filter(|&&z| z == 0).count();
        assert_eq!(size0, 500);
        let rep2 = benchmark_replication(BenchmarkProtocol::UndirectedK2, 1, 5).unwrap();
        assert_ne!(rep.b, rep2.b, "each replication draws a fresh B");
        // Determinism: same (protocol, rep, seed) gives the same graph.
        let again = benchmark_replication(BenchmarkProtocol::UndirectedK2, 0, 5).unwrap();
        assert_eq!(rep.graph.n_edges(), again.graph.n_edges());
        assert_eq!(rep.b, again.b);
    }

    #[test]
    fn bipartite_protocol_shape() {
        let rep = benchmark_replication(BenchmarkProtocol::Bipartite, 0, 9).unwrap();
        assert_eq!(rep.graph.n_rows(), 1000);
        assert_eq!(rep.graph.n_cols(), 1500);
        assert_eq!(rep.b.dim(), (2, 3));
        let z_prime = rep.truth.z_prime.as_ref().unwrap();
        assert_eq!(z_prime.iter().filter(|&&z| z == 0).count(), 500);
    }

    #[test]
    fn rho_law_moments_match_known_values() {
        assert!((RhoLaw::Constant(0.4).moment(3) - 0.064).abs() < 1e-15);
        for p in 1..=4u32 {
            let want = 1.0 / (p as f64 + 1.0);
            assert!((RhoLaw::Uniform(0.0, 1.0).moment(p) - want).abs() < 1e-15);
        }
        // Beta(2,1): E ρ = 2/3, E ρ² = 1/2.
        assert!((RhoLaw::Beta(2.0, 1.0).moment(1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((RhoLaw::Beta(2.0, 1.0).moment(2) - 0.5).abs() < 1e-15);
        // Uniform(a,b) general case against numeric integration.
        let law = RhoLaw::Uniform(0.2, 0.9);
        let n = 1_000_000;
        let num: f64 = (0..n)
            .map(|i| {
                let x = 0.2 + 0.7 * (i as f64 + 0.5) / n as f64;
                x * x * x
            })
            .sum::<f64>()
            / n as f64;
        assert!((law.moment(3) - num).abs() < 1e-6);
    }

    #[test]
    fn position_spec_builds_gram_block_matrix() {
        let mu = Array2::from_shape_vec((2, 2), vec![0.25, 0.75, 0.75, 0.25]).unwrap();
        let spec = BlockModelSpec::from_positions(
            100,
            mu,
            Allocation::equal(100, 2),
            RhoLaw::Uniform(0.0, 1.0),
            1,
        );
        assert!((spec.b[[0, 0]] - 0.625).abs() < 1e-12);
        assert!((spec.b[[0, 1]] - 0.375).abs() < 1e-12);
        assert!(spec.block_matrix_is_psd());
        sample_dcsbm(&spec).unwrap();
    }
}
