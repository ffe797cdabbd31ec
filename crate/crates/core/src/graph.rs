//! Graph structures, adjacency construction, and edge-disjoint
//! decompositions.
//!
//! An edge here is an ordered pair `(i, j)`, `i != j`, with positive
//! adjacency weight; symmetric graphs simply carry both directions.
//! Self-loops are never part of an edge set: the model backbone adds its
//! own identity when it normalizes an adjacency.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::csvio;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weighted graph over `n` nodes with a dense adjacency matrix.
///
/// The adjacency is nonnegative, finite, and has a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStructure<S: Scalar> {
    n: usize,
    adjacency: Tensor<S>,
}

impl<S: Scalar> GraphStructure<S> {
    pub fn new(adjacency: Tensor<S>) -> Result<Self> {
        let shape = adjacency.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::shape(
                "graph",
                format!("adjacency must be square, got {shape:?}"),
            ));
        }
        let n = shape[0];
        for i in 0..n {
            for j in 0..n {
                let v = adjacency.at(i, j);
                if !v.is_finite() || v < S::zero() {
                    return Err(Error::domain(
                        "graph",
                        format!("adjacency[{i}][{j}] = {v} is negative or non-finite"),
                    ));
                }
                if i == j && v != S::zero() {
                    return Err(Error::domain(
                        "graph",
                        format!("self-loop at node {i}; diagonals must be zero"),
                    ));
                }
            }
        }
        Ok(GraphStructure { n, adjacency })
    }

    pub fn from_vec(n: usize, values: Vec<S>) -> Result<Self> {
        Self::new(Tensor::new([n, n], values)?)
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self) -> &Tensor<S> {
        &self.adjacency
    }

    /// Ordered pairs `(i, j)` with positive weight, row-major order.
    pub fn edge_set(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && self.adjacency.at(i, j) > S::zero() {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    pub fn num_edges(&self) -> usize {
        self.edge_set().len()
    }

    /// Number of distinct out-neighbors; equals the undirected degree on
    /// symmetric graphs.
    pub fn degree(&self, v: usize) -> usize {
        (0..self.n)
            .filter(|&j| j != v && self.adjacency.at(v, j) > S::zero())
            .count()
    }

    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.adjacency.at(i, j) != self.adjacency.at(j, i) {
                    return false;
                }
            }
        }
        true
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        csvio::write_matrix_csv(path, self.n, self.n, self.adjacency.values())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (rows, cols, values) = csvio::read_matrix_csv::<S>(path)?;
        if rows != cols {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: 0,
                msg: format!("adjacency must be square, got {rows}x{cols}"),
            });
        }
        Self::from_vec(rows, values)
    }
}

/// How a decomposition came to be; affects which invariants apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompositionOrigin {
    /// Built by a generator; exact, disjoint partition.
    GroundTruth,
    /// Hardened from learned masks.
    Learned,
    /// Degree-based edge hashing baseline.
    DegreeHash,
}

/// A graph split into `K` subgraph adjacencies over the same node set.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition<S: Scalar> {
    parts: Vec<Tensor<S>>,
    n: usize,
    origin: DecompositionOrigin,
}

impl<S: Scalar> Decomposition<S> {
    pub fn new(parts: Vec<Tensor<S>>, origin: DecompositionOrigin) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::domain("decomposition", "needs at least one part"));
        }
        let shape = parts[0].shape().to_vec();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::shape(
                "decomposition",
                format!("parts must be square, got {shape:?}"),
            ));
        }
        for (k, p) in parts.iter().enumerate() {
            if p.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "decomposition",
                    format!("part {k} has shape {:?}, expected {shape:?}", p.shape()),
                ));
            }
        }
        Ok(Decomposition {
            n: shape[0],
            parts,
            origin,
        })
    }

    pub fn k(&self) -> usize {
        self.parts.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn parts(&self) -> &[Tensor<S>] {
        &self.parts
    }

    pub fn part(&self, k: usize) -> &Tensor<S> {
        &self.parts[k]
    }

    pub fn origin(&self) -> DecompositionOrigin {
        self.origin
    }

    /// Support of part `k`, excluding the diagonal.
    pub fn part_edges(&self, k: usize) -> Vec<(usize, usize)> {
        let p = &self.parts[k];
        let mut edges = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && p.at(i, j) > S::zero() {
                    edges.push((i, j));
                }
            }
        }
        edges
    }

    /// Number of nodes incident to at least one edge of part `k`.
    pub fn part_node_count(&self, k: usize) -> usize {
        let mut seen = vec![false; self.n];
        for (i, j) in self.part_edges(k) {
            seen[i] = true;
            seen[j] = true;
        }
        seen.iter().filter(|&&b| b).count()
    }

    /// Checks every part entry against the parent graph: soft parts stay in
    /// `[0, a_ij]`, hard parts in `{0, a_ij}`, and nothing lives off the
    /// parent's support.
    pub fn validate_within(&self, graph: &GraphStructure<S>, hard: bool) -> Result<()> {
        if self.n != graph.n_nodes() {
            return Err(Error::shape(
                "decomposition",
                format!("{} nodes vs graph's {}", self.n, graph.n_nodes()),
            ));
        }
        for (k, p) in self.parts.iter().enumerate() {
            for i in 0..self.n {
                for j in 0..self.n {
                    let v = p.at(i, j);
                    let a = graph.adjacency().at(i, j);
                    let ok = if hard {
                        v == S::zero() || v == a
                    } else {
                        v >= S::zero() && v <= a
                    };
                    if !ok {
                        return Err(Error::domain(
                            "decomposition",
                            format!("part {k} entry [{i}][{j}] = {v} outside [0, {a}]"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

// ── series similarity and adjacency builders ───────────────────────────

/// Dynamic time warping distance with absolute-difference local cost and
/// unit steps (match, insert, delete).
pub fn dtw_distance<S: Scalar>(x: &[S], y: &[S]) -> Result<S> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::domain("dtw", "series must be nonempty"));
    }
    let (n, m) = (x.len(), y.len());
    let mut dp = vec![S::infinity(); (n + 1) * (m + 1)];
    dp[0] = S::zero();
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 1..=n {
        for j in 1..=m {
            let cost = (x[i - 1] - y[j - 1]).abs();
            let best = dp[idx(i - 1, j)]
                .min(dp[idx(i, j - 1)])
                .min(dp[idx(i - 1, j - 1)]);
            dp[idx(i, j)] = cost + best;
        }
    }
    Ok(dp[idx(n, m)])
}

/// Binary adjacency from node series: an edge wherever the DTW distance is
/// within `radius`. Diagonal stays zero.
pub fn build_adjacency_dtw<S: Scalar>(series: &[Vec<S>], radius: S) -> Result<GraphStructure<S>> {
    if radius < S::zero() {
        return Err(Error::domain("adjacency_dtw", "radius must be nonnegative"));
    }
    let n = series.len();
    if n == 0 {
        return Err(Error::domain("adjacency_dtw", "need at least one series"));
    }
    let mut a = vec![S::zero(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dtw_distance(&series[i], &series[j])?;
            if d <= radius {
                a[i * n + j] = S::one();
                a[j * n + i] = S::one();
            }
        }
    }
    GraphStructure::from_vec(n, a)
}

/// Thresholded Gaussian kernel over a symmetric distance matrix with zero
/// diagonal: `w_ij = exp(-d_ij^2 / sigma^2)`, kept when `w_ij >= eps`.
pub fn build_adjacency_gaussian<S: Scalar>(
    dist: &Tensor<S>,
    sigma: S,
    eps: S,
) -> Result<GraphStructure<S>> {
    let shape = dist.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape(
            "adjacency_gaussian",
            format!("distance matrix must be square, got {shape:?}"),
        ));
    }
    if sigma <= S::zero() {
        return Err(Error::domain(
            "adjacency_gaussian",
            "sigma must be positive",
        ));
    }
    let n = shape[0];
    for i in 0..n {
        if dist.at(i, i) != S::zero() {
            return Err(Error::domain(
                "adjacency_gaussian",
                format!(
                    "distance diagonal must be zero, found {} at {i}",
                    dist.at(i, i)
                ),
            ));
        }
        for j in 0..n {
            let d = dist.at(i, j);
            if !d.is_finite() || d < S::zero() {
                return Err(Error::domain(
                    "adjacency_gaussian",
                    format!("distance[{i}][{j}] = {d} is negative or non-finite"),
                ));
            }
            if dist.at(i, j) != dist.at(j, i) {
                return Err(Error::domain(
                    "adjacency_gaussian",
                    format!("distance matrix asymmetric at [{i}][{j}]"),
                ));
            }
        }
    }
    let mut a = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist.at(i, j);
            let w = (-(d * d) / (sigma * sigma)).exp();
            if w >= eps {
                a[i * n + j] = w;
            }
        }
    }
    GraphStructure::from_vec(n, a)
}

// ── decomposition diagnostics ───────────────────────────────────────────

/// Number of parent edges absent from the union of part supports.
pub fn check_completeness<S: Scalar>(
    decomp: &Decomposition<S>,
    graph: &GraphStructure<S>,
) -> Result<usize> {
    if decomp.n_nodes() != graph.n_nodes() {
        return Err(Error::shape(
            "completeness",
            format!("{} nodes vs graph's {}", decomp.n_nodes(), graph.n_nodes()),
        ));
    }
    let n = graph.n_nodes();
    let mut covered = vec![false; n * n];
    for k in 0..decomp.k() {
        for (i, j) in decomp.part_edges(k) {
            covered[i * n + j] = true;
        }
    }
    Ok(graph
        .edge_set()
        .into_iter()
        .filter(|&(i, j)| !covered[i * n + j])
        .count())
}

/// Total number of edge-sharing incidences over unordered part pairs:
/// zero means the parts are pairwise edge-disjoint.
pub fn check_independence<S: Scalar>(decomp: &Decomposition<S>) -> usize {
    let n = decomp.n_nodes();
    let supports: Vec<Vec<bool>> = (0..decomp.k())
        .map(|k| {
            let mut sup = vec![false; n * n];
            for (i, j) in decomp.part_edges(k) {
                sup[i * n + j] = true;
            }
            sup
        })
        .collect();
    let mut shared = 0;
    for a in 0..supports.len() {
        for b in (a + 1)..supports.len() {
            shared += supports[a]
                .iter()
                .zip(&supports[b])
                .filter(|(&x, &y)| x && y)
                .count();
        }
    }
    shared
}

/// Splits a graph into `K` edge-disjoint subgraphs by hashing each edge's
/// lower-degree endpoint (ties fall to the smaller node id). The hash is
/// the node id modulo `K`, so the result is complete and pairwise disjoint
/// by construction.
pub fn ted_decompose<S: Scalar>(graph: &GraphStructure<S>, k: usize) -> Result<Decomposition<S>> {
    if k < 1 {
        return Err(Error::domain("ted_decompose", "K must be at least 1"));
    }
    let n = graph.n_nodes();
    let degrees: Vec<usize> = (0..n).map(|v| graph.degree(v)).collect();
    let mut parts = vec![Tensor::zeros([n, n]); k];
    for (i, j) in graph.edge_set() {
        let pick = match degrees[i].cmp(&degrees[j]) {
            std::cmp::Ordering::Less => i,
            std::cmp::Ordering::Greater => j,
            std::cmp::Ordering::Equal => i.min(j),
        };
        let slot = pick % k;
        parts[slot].values_mut()[i * n + j] = graph.adjacency().at(i, j);
    }
    Decomposition::new(parts, DecompositionOrigin::DegreeHash)
}

/// Symmetric normalization with self-loops on plain values:
/// `D^{-1/2} (A + I) D^{-1/2}` where `D` is the row-sum of `A + I`.
/// The differentiable twin lives in the model module; the generator and
/// diagnostics use this one.
pub fn normalize_adjacency_values<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = a.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape(
            "normalize_adjacency",
            format!("expected square matrix, got {shape:?}"),
        ));
    }
    let n = shape[0];
    let mut with_loops = a.values().to_vec();
    for i in 0..n {
        with_loops[i * n + i] += S::one();
    }
    let mut inv_sqrt = vec![S::zero(); n];
    for i in 0..n {
        let d = with_loops[i * n..(i + 1) * n]
            .iter()
            .fold(S::zero(), |acc, &v| acc + v);
        inv_sqrt[i] = S::one() / d.sqrt();
    }
    let mut out = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv_sqrt[i] * with_loops[i * n + j] * inv_sqrt[j];
        }
    }
    Tensor::new([n, n], out)
}
