//! Learnable graph decomposition.
//!
//! Each of the `K` factors owns a dense mask matrix. Squashing a mask
//! entry through `(tanh + 1) / 2` gives a keep-ratio in `(0, 1)`, and the
//! soft subgraph is the elementwise product of those ratios with the base
//! adjacency, so the base zero pattern is preserved exactly. Two
//! regularizers shape the masks: a completeness term that wants the soft
//! subgraphs to add back up to the base graph, and an independence term
//! that penalizes factors sharing edges. `harden` turns the soft state
//! into a discrete decomposition for inspection and baselines.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::csvio;
use crate::error::{Error, Result};
use crate::graph::{Decomposition, DecompositionOrigin, GraphStructure};
use crate::scalar::{s, Scalar};

/// Squashes a mask entry to a keep-ratio in `(0, 1)`: `(tanh(x) + 1) / 2`.
pub fn mask_ratio<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let half = s::<S>(0.5);
    let t = tape.tanh(x)?;
    tape.affine(half, half, &t)
}

/// Smooth step centered at one half: `(tanh(4 (x - 1/2)) + 1) / 2`.
/// Pushes reconstruction weights toward clean 0/1 decisions before the
/// completeness comparison.
pub fn soft_binarize<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let half = s::<S>(0.5);
    let shifted = tape.affine(s::<S>(4.0), s::<S>(-2.0), x)?;
    let t = tape.tanh(&shifted)?;
    tape.affine(half, half, &t)
}

/// Scalar twin of [`mask_ratio`] for hardening and diagnostics.
pub fn mask_ratio_value<S: Scalar>(x: S) -> S {
    (x.tanh() + S::one()) * s::<S>(0.5)
}

/// Soft subgraphs: keep-ratio of each mask times the base adjacency.
pub fn masked_subgraphs<S: Scalar>(
    tape: &mut Tape<S>,
    masks: &[Tensor<S>],
    base: &Tensor<S>,
) -> Result<Vec<Tensor<S>>> {
    masks
        .iter()
        .map(|m| {
            let ratio = mask_ratio(tape, m)?;
            tape.hadamard(&ratio, base)
        })
        .collect()
}

/// How far the soft subgraphs are from reassembling the base graph:
/// `l1(binarize(A) - binarize(sum_k soft_k))`.
pub fn completeness_loss<S: Scalar>(
    tape: &mut Tape<S>,
    base: &Tensor<S>,
    soft: &[Tensor<S>],
) -> Result<Tensor<S>> {
    if soft.is_empty() {
        return Err(Error::domain("completeness_loss", "no soft subgraphs"));
    }
    let mut total = soft[0].clone();
    for part in &soft[1..] {
        total = tape.add(&total, part)?;
    }
    let target = soft_binarize(tape, base)?;
    let recon = soft_binarize(tape, &total)?;
    let diff = tape.sub(&target, &recon)?;
    tape.l1(&diff)
}

/// Average pairwise edge sharing between soft subgraphs:
/// `l1(soft_k^T soft_j)` summed over ordered pairs `k != j`, divided by
/// `K (K - 1)`. With a single factor there are no pairs; the loss is zero
/// and a warning is logged.
pub fn independence_loss<S: Scalar>(tape: &mut Tape<S>, soft: &[Tensor<S>]) -> Result<Tensor<S>> {
    let k = soft.len();
    if k < 2 {
        log::warn!("independence loss needs at least two factors; defining it as zero");
        return Ok(Tensor::scalar(S::zero()));
    }
    let mut acc: Option<Tensor<S>> = None;
    for a in 0..k {
        let at = tape.transpose(&soft[a])?;
        for (b, soft_b) in soft.iter().enumerate() {
            if a == b {
                continue;
            }
            let cross = tape.matmul(&at, soft_b)?;
            let term = tape.l1(&cross)?;
            acc = Some(match acc {
                Some(prev) => tape.add(&prev, &term)?,
                None => term,
            });
        }
    }
    let total = acc.expect("k >= 2 yields at least one pair");
    let denom = s::<S>((k * (k - 1)) as f64);
    tape.scale(S::one() / denom, &total)
}

/// Learnable mask state for one base graph.
#[derive(Debug, Clone)]
pub struct MaskSet<S: Scalar> {
    masks: Vec<Tensor<S>>,
    base: Tensor<S>,
    n: usize,
}

impl<S: Scalar> MaskSet<S> {
    /// All-zero masks: every factor starts at keep-ratio one half.
    pub fn new(graph: &GraphStructure<S>, k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::domain("mask_set", "K must be at least 1"));
        }
        let n = graph.n_nodes();
        Ok(MaskSet {
            masks: vec![Tensor::zeros([n, n]); k],
            base: graph.adjacency().clone(),
            n,
        })
    }

    pub fn from_parts(base: Tensor<S>, masks: Vec<Tensor<S>>) -> Result<Self> {
        let shape = base.shape().to_vec();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::shape(
                "mask_set",
                format!("base adjacency must be square, got {shape:?}"),
            ));
        }
        if masks.is_empty() {
            return Err(Error::domain("mask_set", "K must be at least 1"));
        }
        for (k, m) in masks.iter().enumerate() {
            if m.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "mask_set",
                    format!("mask {k} has shape {:?}, expected {shape:?}", m.shape()),
                ));
            }
        }
        Ok(MaskSet {
            n: shape[0],
            masks,
            base,
        })
    }

    pub fn k(&self) -> usize {
        self.masks.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn base(&self) -> &Tensor<S> {
        &self.base
    }

    pub fn masks(&self) -> &[Tensor<S>] {
        &self.masks
    }

    pub fn masks_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.masks
    }

    /// Clone whose masks are registered as tracked leaves on `tape`; the
    /// base adjacency stays a constant.
    pub fn tracked(&self, tape: &mut Tape<S>) -> MaskSet<S> {
        MaskSet {
            masks: self.masks.iter().map(|m| tape.var(m)).collect(),
            base: self.base.clone(),
            n: self.n,
        }
    }

    /// Soft subgraphs computed off-tape.
    pub fn soft_subgraph_values(&self) -> Vec<Tensor<S>> {
        let mut tape = Tape::new();
        masked_subgraphs(&mut tape, &self.masks, &self.base)
            .expect("masks and base share one shape")
    }

    /// Keep-ratio of factor `k` at entry `(i, j)`.
    fn ratio_at(&self, k: usize, i: usize, j: usize) -> S {
        mask_ratio_value(self.masks[k].at(i, j))
    }

    /// Winning factor for an edge: highest keep-ratio, ties to smallest
    /// index. Returns the ratio too.
    fn winner(&self, i: usize, j: usize) -> (usize, S) {
        let mut best = (0usize, self.ratio_at(0, i, j));
        for k in 1..self.k() {
            let r = self.ratio_at(k, i, j);
            if r > best.1 {
                best = (k, r);
            }
        }
        best
    }

    /// Discrete decomposition: each base edge goes to the factor with the
    /// highest keep-ratio, provided that ratio reaches `tau`; otherwise the
    /// edge is dropped (a completeness miss). Parts are edge-disjoint by
    /// construction.
    pub fn harden(&self, tau: S) -> Result<Decomposition<S>> {
        if tau <= S::zero() || tau >= S::one() {
            return Err(Error::domain("harden", "tau must lie strictly in (0, 1)"));
        }
        let n = self.n;
        let mut parts = vec![Tensor::zeros([n, n]); self.k()];
        for i in 0..n {
            for j in 0..n {
                if i == j || self.base.at(i, j) <= S::zero() {
                    continue;
                }
                let (k, ratio) = self.winner(i, j);
                if ratio >= tau {
                    parts[k].values_mut()[i * n + j] = self.base.at(i, j);
                }
            }
        }
        Decomposition::new(parts, DecompositionOrigin::Learned)
    }

    /// Diagnostics of the discrete state at threshold `tau`.
    pub fn hardening_report(&self, tau: S) -> Result<HardenReport> {
        if tau <= S::zero() || tau >= S::one() {
            return Err(Error::domain(
                "hardening_report",
                "tau must lie strictly in (0, 1)",
            ));
        }
        let hard = self.harden(tau)?;
        let mut missed = 0usize;
        let mut overlap = 0usize;
        for i in 0..self.n {
            for j in 0..self.n {
                if i == j || self.base.at(i, j) <= S::zero() {
                    continue;
                }
                let passing = (0..self.k())
                    .filter(|&k| self.ratio_at(k, i, j) >= tau)
                    .count();
                if passing == 0 {
                    missed += 1;
                }
                // Incidences: one per factor pair that both claim the edge.
                overlap += passing.saturating_sub(1) * passing / 2;
            }
        }
        let base_edges = {
            let mut count = 0;
            for i in 0..self.n {
                for j in 0..self.n {
                    if i != j && self.base.at(i, j) > S::zero() {
                        count += 1;
                    }
                }
            }
            count
        };
        Ok(HardenReport {
            tau: tau.into_f64(),
            base_edges,
            missed_edges: missed,
            overlap_incidences: overlap,
            factor_edges: (0..hard.k()).map(|k| hard.part_edges(k).len()).collect(),
            factor_nodes: (0..hard.k()).map(|k| hard.part_node_count(k)).collect(),
        })
    }

    /// Writes soft and hard subgraph adjacencies plus a summary:
    /// `soft_<k>.csv`, `hard_<k>.csv`, and `summary.json` under `dir`.
    pub fn export(&self, tau: S, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let soft = self.soft_subgraph_values();
        for (k, part) in soft.iter().enumerate() {
            csvio::write_matrix_csv(
                &dir.join(format!("soft_{k}.csv")),
                self.n,
                self.n,
                part.values(),
            )?;
        }
        let hard = self.harden(tau)?;
        for k in 0..hard.k() {
            csvio::write_matrix_csv(
                &dir.join(format!("hard_{k}.csv")),
                self.n,
                self.n,
                hard.part(k).values(),
            )?;
        }
        let report = self.hardening_report(tau)?;
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Config(format!("summary serialization failed: {e}")))?;
        fs::write(dir.join("summary.json"), text)
            .map_err(|e| Error::io(dir.join("summary.json").display().to_string(), e))
    }
}

/// What hardening at a given threshold did to the edge set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardenReport {
    pub tau: f64,
    pub base_edges: usize,
    /// Base edges no factor claimed at the threshold.
    pub missed_edges: usize,
    /// Factor-pair incidences where both factors pass the threshold on the
    /// same edge.
    pub overlap_incidences: usize,
    pub factor_edges: Vec<usize>,
    pub factor_nodes: Vec<usize>,
}
