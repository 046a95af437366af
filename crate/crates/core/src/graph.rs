//! Sparse graph storage and edge-list ingestion.
//!
//! Graphs are unweighted and binary. Undirected graphs are stored as a
//! symmetric CSR adjacency (each edge appears in both rows); bipartite
//! graphs keep CSR over rows plus the transpose so that both `A x` and
//! `Aᵀ y` products are cheap. Node labels from edge lists are mapped to
//! dense indices in first-seen order and kept with the graph.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a graph is one-mode (square, symmetric) or two-mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphMode {
    Undirected,
    Bipartite,
}

/// Unweighted sparse graph in compressed sparse row form.
#[derive(Debug, Clone)]
pub struct SparseGraph {
    mode: GraphMode,
    n_rows: usize,
    n_cols: usize,
    /// CSR over rows. For undirected graphs this is the full symmetric
    /// adjacency, so every edge {u, v} contributes entries to both rows.
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// CSR over columns (the transpose). Empty for undirected graphs,
    /// where the matrix is its own transpose.
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Distinct edges; an undirected edge counts once.
    n_edges: usize,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

impl SparseGraph {
    /// Build an undirected graph on `n` nodes from an edge list.
    /// Duplicate edges collapse to a single adjacency entry; self-loops
    /// are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u == v {
                return Err(Error::SelfLoop {
                    node: u.to_string(),
                });
            }
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            pairs.push((u, v));
            pairs.push((v, u));
        }
        let (row_ptr, col_idx, nnz) = build_csr(n, n, &mut pairs);
        debug_assert_eq!(nnz % 2, 0);
        let labels = (0..n).map(|i| i.to_string()).collect();
        Ok(SparseGraph {
            mode: GraphMode::Undirected,
            n_rows: n,
            n_cols: n,
            row_ptr,
            col_idx,
            col_ptr: Vec::new(),
            row_idx: Vec::new(),
            n_edges: nnz / 2,
            row_labels: labels,
            col_labels: Vec::new(),
        })
    }

    /// Build a bipartite graph from (row, column) pairs.
    pub fn from_bipartite_edges(
        n_rows: usize,
        n_cols: usize,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let mut pairs = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i >= n_rows || j >= n_cols {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for {n_rows}x{n_cols} biadjacency"
                )));
            }
            pairs.push((i, j));
        }
        let (row_ptr, col_idx, nnz) = build_csr(n_rows, n_cols, &mut pairs);
        let mut transposed: Vec<(usize, usize)> = Vec::with_capacity(nnz);
        for r in 0..n_rows {
            for &c in &col_idx[row_ptr[r]..row_ptr[r + 1]] {
                transposed.push((c, r));
            }
        }
        let (col_ptr, row_idx, _) = build_csr(n_cols, n_rows, &mut transposed);
        Ok(SparseGraph {
            mode: GraphMode::Bipartite,
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            col_ptr,
            row_idx,
            n_edges: nnz,
            row_labels: (0..n_rows).map(|i| i.to_string()).collect(),
            col_labels: (0..n_cols).map(|j| j.to_string()).collect(),
        })
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Node count for undirected graphs.
    pub fn n_nodes(&self) -> usize {
        debug_assert_eq!(self.mode, GraphMode::Undirected);
        self.n_rows
    }

    /// Number of distinct edges (an undirected edge counts once).
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        match self.mode {
            GraphMode::Undirected => &self.row_labels,
            GraphMode::Bipartite => &self.col_labels,
        }
    }

    /// Neighbours of row node `i` (column indices, ascending).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn row_degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn col_degree(&self, j: usize) -> usize {
        match self.mode {
            GraphMode::Undirected => self.row_degree(j),
            GraphMode::Bipartite => self.col_ptr[j + 1] - self.col_ptr[j],
        }
    }

    /// y = A x over rows.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &j in &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]] {
                acc += x[j];
            }
            *yi = acc;
        }
    }

    /// x = Aᵀ y. For undirected graphs A is symmetric, so this is `matvec`.
    pub fn matvec_t(&self, y: &[f64], x: &mut [f64]) {
        match self.mode {
            GraphMode::Undirected => self.matvec(y, x),
            GraphMode::Bipartite => {
                assert_eq!(y.len(), self.n_rows);
                assert_eq!(x.len(), self.n_cols);
                for (j, xj) in x.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for &i in &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]] {
                        acc += y[i];
                    }
                    *xj = acc;
                }
            }
        }
    }

    /// Dense adjacency (or biadjacency) matrix.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            for &j in self.neighbors(i) {
                a[[i, j]] = 1.0;
            }
        }
        a
    }

    /// Row indices with no incident edges. Such nodes embed at the origin,
    /// where the angular transform is undefined, so downstream fits skip
    /// them.
    pub fn isolated_rows(&self) -> Vec<usize> {
        (0..self.n_rows).filter(|&i| self.row_degree(i) == 0).collect()
    }

    pub fn isolated_cols(&self) -> Vec<usize> {
        (0..self.n_cols).filter(|&j| self.col_degree(j) == 0).collect()
    }

    fn set_labels(&mut self, rows: Vec<String>, cols: Vec<String>) {
        self.row_labels = rows;
        if self.mode == GraphMode::Bipartite {
            self.col_labels = cols;
        }
    }

    /// Write the graph back out as a tab-separated edge list with a size
    /// header, using the stored node labels.
    pub fn save_edge_list<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = String::new();
        match self.mode {
            GraphMode::Undirected => {
                writeln!(out, "# n_nodes={}", self.n_rows).unwrap();
                for i in 0..self.n_rows {
                    for &j in self.neighbors(i) {
                        if i < j {
                            writeln!(out, "{}\t{}", self.row_labels[i], self.row_labels[j])
                                .unwrap();
                        }
                    }
                }
            }
            GraphMode::Bipartite => {
                writeln!(out, "# n_rows={} n_cols={}", self.n_rows, self.n_cols).unwrap();
                for i in 0..self.n_rows {
                    for &j in self.neighbors(i) {
                        writeln!(out, "{}\t{}", self.row_labels[i], self.col_labels[j]).unwrap();
                    }
                }
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Sort, dedupe and compress (row, col) pairs into CSR arrays.
fn build_csr(
    n_rows: usize,
    n_cols: usize,
    pairs: &mut Vec<(usize, usize)>,
) -> (Vec<usize>, Vec<usize>, usize) {
    debug_assert!(pairs.iter().all(|&(r, c)| r < n_rows && c < n_cols));
    pairs.sort_unstable();
    pairs.dedup();
    let mut row_ptr = vec![0usize; n_rows + 1];
    for &(r, _) in pairs.iter() {
        row_ptr[r + 1] += 1;
    }
    for r in 0..n_rows {
        row_ptr[r + 1] += row_ptr[r];
    }
    let col_idx: Vec<usize> = pairs.iter().map(|&(_, c)| c).collect();
    let nnz = col_idx.len();
    (row_ptr, col_idx, nnz)
}

/// Degree summary for one side of a graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegreeProfile {
    pub degrees: Vec<usize>,
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    /// Edge density: observed edges over possible edges.
    pub density: f64,
    pub n_isolated: usize,
}

impl DegreeProfile {
    fn from_degrees(degrees: Vec<usize>, possible: f64, n_edges: usize) -> Self {
        let n = degrees.len();
        let min = degrees.iter().copied().min().unwrap_or(0);
        let max = degrees.iter().copied().max().unwrap_or(0);
        let mean = if n == 0 {
            0.0
        } else {
            degrees.iter().sum::<usize>() as f64 / n as f64
        };
        let n_isolated = degrees.iter().filter(|&&d| d == 0).count();
        let density = if possible > 0.0 {
            n_edges as f64 / possible
        } else {
            0.0
        };
        DegreeProfile {
            degrees,
            min,
            max,
            mean,
            density,
            n_isolated,
        }
    }
}

/// Degree summary over the rows of `graph` (all nodes of an undirected
/// graph). Use [`column_degree_profile`] for the second mode of a
/// bipartite graph.
pub fn degree_profile(graph: &SparseGraph) -> DegreeProfile {
    let degrees: Vec<usize> = (0..graph.n_rows()).map(|i| graph.row_degree(i)).collect();
    let possible = match graph.mode() {
        GraphMode::Undirected => {
            let n = graph.n_rows() as f64;
            n * (n - 1.0) / 2.0
        }
        GraphMode::Bipartite => graph.n_rows() as f64 * graph.n_cols() as f64,
    };
    DegreeProfile::from_degrees(degrees, possible, graph.n_edges())
}

/// Degree summary over the columns of a bipartite graph.
pub fn column_degree_profile(graph: &SparseGraph) -> DegreeProfile {
    let degrees: Vec<usize> = (0..graph.n_cols()).map(|j| graph.col_degree(j)).collect();
    let possible = graph.n_rows() as f64 * graph.n_cols() as f64;
    DegreeProfile::from_degrees(degrees, possible, graph.n_edges())
}

/// Split an edge-list line into exactly two tokens. Comma-separated if a
/// comma is present, otherwise any run of whitespace (tabs included).
fn split_line(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).filter(|t| !t.is_empty()).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parse `key=value` sizing entries out of a header comment such as
/// `# n_rows=400 n_cols=600` or `# n_nodes=1000`.
fn parse_header(line: &str, sizes: &mut HashMap<String, usize>, lineno: usize) -> Result<()> {
    for token in line.trim_start_matches('#').split_whitespace() {
        if let Some((key, value)) = token.split_once('=') {
            if matches!(key, "n_rows" | "n_cols" | "n_nodes") {
                let parsed: usize = value.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("invalid {key} value {value:?}"),
                })?;
                sizes.insert(key.to_string(), parsed);
            }
        }
    }
    Ok(())
}

/// Load a graph from an edge-list file.
///
/// Each non-comment line names one edge as two tab-, comma- or
/// whitespace-separated node labels. Lines starting with `#` are comments;
/// a comment may carry sizing hints (`# n_nodes=…` for undirected,
/// `# n_rows=… n_cols=…` for bipartite) which reserve trailing isolated
/// nodes that no edge mentions. Labels are arbitrary strings, assigned
/// dense indices in first-seen order; for bipartite graphs the two modes
/// have separate label spaces.
pub fn load_edge_list<P: AsRef<Path>>(path: P, mode: GraphMode) -> Result<SparseGraph> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);

    let mut sizes: HashMap<String, usize> = HashMap::new();
    let mut row_ids: HashMap<String, usize> = HashMap::new();
    let mut col_ids: HashMap<String, usize> = HashMap::new();
    let mut row_labels: Vec<String> = Vec::new();
    let mut col_labels: Vec<String> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();

    let mut intern_row = |label: &str, row_labels: &mut Vec<String>| -> usize {
        *row_ids.entry(label.to_string()).or_insert_with(|| {
            row_labels.push(label.to_string());
            row_labels.len() - 1
        })
    };

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            parse_header(line, &mut sizes, lineno)?;
            continue;
        }
        let tokens = split_line(line);
        if tokens.len() != 2 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected two node labels, found {}", tokens.len()),
            });
        }
        match mode {
            GraphMode::Undirected => {
                if tokens[0] == tokens[1] {
                    return Err(Error::SelfLoop {
                        node: tokens[0].to_string(),
                    });
                }
                let u = intern_row(tokens[0], &mut row_labels);
                let v = intern_row(tokens[1], &mut row_labels);
                edges.push((u, v));
            }
            GraphMode::Bipartite => {
                let i = intern_row(tokens[0], &mut row_labels);
                let j = *col_ids.entry(tokens[1].to_string()).or_insert_with(|| {
                    col_labels.push(tokens[1].to_string());
                    col_labels.len() - 1
                });
                edges.push((i, j));
            }
        }
    }

    match mode {
        GraphMode::Undirected => {
            let n_seen = row_labels.len();
            let n = sizes.get("n_nodes").copied().unwrap_or(n_seen).max(n_seen);
            for k in n_seen..n {
                row_labels.push(k.to_string());
            }
            let mut graph = SparseGraph::from_edges(n, &edges)?;
            graph.set_labels(row_labels, Vec::new());
            Ok(graph)
        }
        GraphMode::Bipartite => {
            let rows_seen = row_labels.len();
            let cols_seen = col_labels.len();
            let n_rows = sizes.get("n_rows").copied().unwrap_or(rows_seen).max(rows_seen);
            let n_cols = sizes.get("n_cols").copied().unwrap_or(cols_seen).max(cols_seen);
            for k in rows_seen..n_rows {
                row_labels.push(format!("r{k}"));
            }
            for k in cols_seen..n_cols {
                col_labels.push(format!("c{k}"));
            }
            let mut graph = SparseGraph::from_bipartite_edges(n_rows, n_cols, &edges)?;
            graph.set_labels(row_labels, col_labels);
            Ok(graph)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_tab_separated_with_comments() {
        let f = write_temp("# a comment\na\tb\nb\tc\n\na\tc\n");
        let g = load_edge_list(f.path(), GraphMode::Undirected).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.n_edges(), 3);
        assert_eq!(g.row_labels(), &["a", "b", "c"]);
        assert_eq!(g.neighbors(0), &[1, 2]);
    }

    #[test]
    fn parses_comma_separated() {
        let f = write_temp("u1,u2\nu2,u3\n");
        let g = load_edge_list(f.path(), GraphMode::Undirected).unwrap();
        assert_eq!(g.n_nodes(), 3);
        let degrees: Vec<usize> = (0..3).map(|i| g.row_degree(i)).collect();
        assert_eq!(degrees, vec![1, 2, 1]);
    }

    #[test]
    fn bipartite_sizes_from_header() {
        let f = write_temp("# n_rows=3 n_cols=4\nu0\tv0\nu0\tv1\nu1\tv1\n");
        let g = load_edge_list(f.path(), GraphMode::Bipartite).unwrap();
        assert_eq!((g.n_rows(), g.n_cols()), (3, 4));
        assert_eq!(g.n_edges(), 3);
        assert_eq!(g.isolated_rows(), vec![2]);
        assert_eq!(g.isolated_cols(), vec![2, 3]);
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = SparseGraph::from_edges(3, &[(0, 1), (1, 0), (0, 1), (1, 2)]).unwrap();
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.neighbors(1), &[0, 2]);
    }

    #[test]
    fn self_loop_rejected() {
        let f = write_temp("a\ta\n");
        let err = load_edge_list(f.path(), GraphMode::Undirected).unwrap_err();
        assert!(matches!(err, Error::SelfLoop { .. }));
    }

    #[test]
    fn matvec_matches_dense() {
        let g = SparseGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let a = g.to_dense();
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut y = [0.0; 4];
        g.matvec(&x, &mut y);
        for i in 0..4 {
            let want: f64 = (0..4).map(|j| a[[i, j]] * x[j]).sum();
            assert!((y[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn bipartite_matvec_t_matches_dense() {
        let g =
            SparseGraph::from_bipartite_edges(2, 3, &[(0, 0), (0, 2), (1, 1), (1, 2)]).unwrap();
        let a = g.to_dense();
        let y = [2.0, -1.0];
        let mut x = [0.0; 3];
        g.matvec_t(&y, &mut x);
        for j in 0..3 {
            let want: f64 = (0..2).map(|i| a[[i, j]] * y[i]).sum();
            assert!((x[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn degree_profile_counts() {
        let g = SparseGraph::from_edges(5, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let p = degree_profile(&g);
        assert_eq!(p.degrees, vec![3, 1, 1, 1, 0]);
        assert_eq!((p.min, p.max), (0, 3));
        assert!((p.mean - 1.2).abs() < 1e-12);
        assert!((p.density - 3.0 / 10.0).abs() < 1e-12);
        assert_eq!(p.n_isolated, 1);
    }

    #[test]
    fn round_trips_through_save() {
        let g = SparseGraph::from_bipartite_edges(3, 2, &[(0, 0), (1, 1), (2, 0)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.tsv");
        g.save_edge_list(&path).unwrap();
        let back = load_edge_list(&path, GraphMode::Bipartite).unwrap();
        assert_eq!(back.n_rows(), 3);
        assert_eq!(back.n_cols(), 2);
        assert_eq!(back.to_dense(), g.to_dense());
    }
}
