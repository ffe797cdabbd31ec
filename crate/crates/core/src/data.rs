//! Synthetic multi-factor datasets, windowing, splits, and disk format.
//!
//! A synthetic dataset is built so that decomposition genuinely helps: a
//! random graph is split into edge-disjoint factor subgraphs, and each
//! factor evolves its own signal — diffusion along its subgraph plus a
//! seasonal drive with a factor-specific period, phase, and scale. The
//! observed signal is the sum of the factors, and the construction is kept
//! as ground truth so learned decompositions can be scored against it.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::csvio;
use crate::error::{Error, Result};
use crate::graph::{
    check_completeness, check_independence, normalize_adjacency_values, Decomposition,
    DecompositionOrigin, GraphStructure,
};
use crate::scalar::Scalar;

// ── dataset ─────────────────────────────────────────────────────────────

/// Descriptive header of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    /// Label for what one time step means (e.g. "5min", "step").
    pub interval: String,
    /// Number of time steps.
    pub tau: usize,
    pub n_nodes: usize,
    pub features: usize,
    /// Number of ground-truth factors, when known.
    pub factors: Option<usize>,
    /// Generator seed, when the dataset is synthetic.
    pub seed: Option<u64>,
}

/// The construction behind a synthetic dataset: which subgraph each factor
/// lives on and what each factor contributed to the signal.
#[derive(Debug, Clone)]
pub struct GroundTruth<S: Scalar> {
    pub decomposition: Decomposition<S>,
    /// Per-factor signals, each `tau x N x F`; they sum to the observed
    /// signals.
    pub factor_signals: Vec<Tensor<S>>,
}

/// A graph, its signal history, and (when known) the factor structure.
#[derive(Debug, Clone)]
pub struct Dataset<S: Scalar> {
    pub meta: DatasetMeta,
    pub graph: GraphStructure<S>,
    /// Observed signals, `tau x N x F`.
    pub signals: Tensor<S>,
    pub ground_truth: Option<GroundTruth<S>>,
}

impl<S: Scalar> Dataset<S> {
    /// Validates shapes and, when ground truth is present, that the factor
    /// signals sum to the observed signals within `1e-9` and the factor
    /// subgraphs tile the graph's edges exactly.
    pub fn new(
        meta: DatasetMeta,
        graph: GraphStructure<S>,
        signals: Tensor<S>,
        ground_truth: Option<GroundTruth<S>>,
    ) -> Result<Self> {
        let want = [meta.tau, meta.n_nodes, meta.features];
        if signals.shape() != want {
            return Err(Error::shape(
                "dataset",
                format!(
                    "signals have shape {:?}, expected {want:?}",
                    signals.shape()
                ),
            ));
        }
        if graph.n_nodes() != meta.n_nodes {
            return Err(Error::shape(
                "dataset",
                format!(
                    "graph has {} nodes, meta says {}",
                    graph.n_nodes(),
                    meta.n_nodes
                ),
            ));
        }
        if let Some(gt) = &ground_truth {
            let k = gt.factor_signals.len();
            if meta.factors != Some(k) || gt.decomposition.k() != k {
                return Err(Error::Config(format!(
                    "ground truth has {k} factor signals, {} parts, meta says {:?}",
                    gt.decomposition.k(),
                    meta.factors
                )));
            }
            for (i, fs) in gt.factor_signals.iter().enumerate() {
                if fs.shape() != want {
                    return Err(Error::shape(
                        "dataset",
                        format!("factor {i} signals have shape {:?}", fs.shape()),
                    ));
                }
            }
            for idx in 0..signals.len() {
                let total = gt
                    .factor_signals
                    .iter()
                    .fold(S::zero(), |acc, fs| acc + fs.values()[idx]);
                if (total - signals.values()[idx]).abs() > S::from_f64(1e-9) {
                    return Err(Error::Config(format!(
                        "factor signals do not sum to the observed signal at index {idx}"
                    )));
                }
            }
            gt.decomposition.validate_within(&graph, true)?;
            let missed = check_completeness(&gt.decomposition, &graph)?;
            if missed != 0 {
                return Err(Error::Config(format!(
                    "ground-truth decomposition misses {missed} edges"
                )));
            }
            let shared = check_independence(&gt.decomposition);
            if shared != 0 {
                return Err(Error::Config(format!(
                    "ground-truth decomposition shares {shared} edges across parts"
                )));
            }
        }
        Ok(Dataset {
            meta,
            graph,
            signals,
            ground_truth,
        })
    }

    pub fn tau(&self) -> usize {
        self.meta.tau
    }

    /// Mean over nodes and features at each time step, as one `f64`
    /// series — the whole-signal view fed to the entropy toolkit.
    pub fn mean_series(&self) -> Vec<f64> {
        mean_series_of(&self.signals)
    }

    /// Per-factor mean series (nodes and features averaged per step);
    /// `None` without ground truth. Averaging is linear, so these series
    /// sum to [`Self::mean_series`].
    pub fn factor_mean_series(&self) -> Option<Vec<Vec<f64>>> {
        self.ground_truth
            .as_ref()
            .map(|gt| gt.factor_signals.iter().map(mean_series_of).collect())
    }
}

fn mean_series_of<S: Scalar>(signals: &Tensor<S>) -> Vec<f64> {
    let tau = signals.shape()[0];
    let per_step = signals.shape()[1] * signals.shape()[2];
    (0..tau)
        .map(|t| {
            signals.values()[t * per_step..(t + 1) * per_step]
                .iter()
                .map(|v| v.into_f64())
                .sum::<f64>()
                / per_step as f64
        })
        .collect()
}

// ── synthetic generation ────────────────────────────────────────────────

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_nodes: usize,
    pub factors: usize,
    /// Number of time steps to evolve.
    pub tau: usize,
    pub features: usize,
    /// Probability of each undirected node pair being an edge.
    pub edge_prob: f64,
    /// Standard deviation of the per-step Gaussian noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_nodes: 24,
            factors: 3,
            tau: 2000,
            features: 1,
            edge_prob: 0.25,
            noise_std: 0.05,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors < 1 || self.n_nodes < self.factors {
            return Err(Error::Config(format!(
                "need n_nodes >= factors >= 1, got {} nodes, {} factors",
                self.n_nodes, self.factors
            )));
        }
        if self.tau < 2 {
            return Err(Error::Config("tau must be at least 2".into()));
        }
        if self.features < 1 {
            return Err(Error::Config("features must be at least 1".into()));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob <= 1.0) {
            return Err(Error::Config(format!(
                "edge_prob must lie in (0, 1], got {}",
                self.edge_prob
            )));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::Config(format!(
                "noise_std must be finite and nonnegative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Decay of the diffusion term from one step to the next.
const DIFFUSION_RHO: f64 = 0.9;

/// Generates a dataset with a known factor structure.
///
/// Steps: sample an undirected graph (`edge_prob` per pair, unit weights);
/// split its edges over the factors by seeded shuffle, each factor getting
/// at least one edge; evolve each factor as
/// `x[t+1] = rho * A_norm * x[t] + drive(t) + noise` where the drive is a
/// sinusoid with a factor-specific period, phase, and amplitude, applied
/// on the factor's incident nodes only; observed signals are the factor
/// sum. All randomness comes from one seeded ChaCha8 stream, so equal
/// configs reproduce the dataset bit for bit.
pub fn generate_synthetic<S: Scalar>(cfg: &SyntheticConfig) -> Result<Dataset<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, k, tau, f) = (cfg.n_nodes, cfg.factors, cfg.tau, cfg.features);

    // Undirected graph with unit weights.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < cfg.edge_prob {
                pairs.push((i, j));
            }
        }
    }
    if pairs.len() < k {
        return Err(Error::Config(format!(
            "sampled graph has {} undirected edges, cannot split into {k} non-empty factors",
            pairs.len()
        )));
    }

    // Edge partition: a shuffle guarantees every factor its first edge,
    // the rest land uniformly.
    pairs.shuffle(&mut rng);
    let mut assignment = vec![0usize; pairs.len()];
    for (e, slot) in assignment.iter_mut().enumerate() {
        *slot = if e < k { e } else { rng.gen_range(0..k) };
    }
    let mut part_values = vec![vec![0.0f64; n * n]; k];
    for (&(i, j), &part) in pairs.iter().zip(&assignment) {
        part_values[part][i * n + j] = 1.0;
        part_values[part][j * n + i] = 1.0;
    }

    // Factor-specific drives: distinct periods and scales, one shared
    // phase per factor, small per-node jitter so nodes are not clones of
    // one another (kept small so the node mean stays coherent).
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut factor_signals_f64: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (ki, part) in part_values.iter().enumerate() {
        let period = (8 + 4 * ki) as f64;
        let amplitude = 1.0 + 0.75 * ki as f64;
        let phase = rng.gen::<f64>() * std::f64::consts::TAU;
        let active: Vec<bool> = (0..n)
            .map(|i| (0..n).any(|j| part[i * n + j] != 0.0))
            .collect();
        let node_amp: Vec<f64> = (0..n * f).map(|_| 0.8 + 0.4 * rng.gen::<f64>()).collect();
        let node_phase: Vec<f64> = (0..n * f).map(|_| 0.3 * (rng.gen::<f64>() - 0.5)).collect();

        let part_tensor = Tensor::new([n, n], part.clone())?;
        let a_norm = normalize_adjacency_values(&part_tensor)?;
        let a_norm = a_norm.values();

        let drive = |t: usize, i: usize, c: usize| -> f64 {
            if !active[i] {
                return 0.0;
            }
            let angle = std::f64::consts::TAU * t as f64 / period + phase + node_phase[i * f + c];
            amplitude * node_amp[i * f + c] * angle.sin()
        };

        let mut signal = vec![0.0f64; tau * n * f];
        let mut state = vec![0.0f64; n * f];
        for (i, s) in state.iter_mut().enumerate() {
            *s = drive(0, i / f, i % f) + noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
        }
        signal[..n * f].copy_from_slice(&state);
        for t in 1..tau {
            let mut next = vec![0.0f64; n * f];
            for i in 0..n {
                for j in 0..n {
                    let w = a_norm[i * n + j];
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..f {
                        next[i * f + c] += DIFFUSION_RHO * w * state[j * f + c];
                    }
                }
            }
            for i in 0..n {
                for c in 0..f {
                    next[i * f + c] +=
                        drive(t - 1, i, c) + noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                }
            }
            signal[t * n * f..(t + 1) * n * f].copy_from_slice(&next);
            state = next;
        }
        factor_signals_f64.push(signal);
    }

    // Convert and sum in the target scalar so the stored factor signals
    // add up to the stored observation exactly.
    let factor_signals: Vec<Tensor<S>> = factor_signals_f64
        .iter()
        .map(|vals| Tensor::new([tau, n, f], vals.iter().map(|&v| S::from_f64(v)).collect()))
        .collect::<Result<_>>()?;
    let mut total = vec![S::zero(); tau * n * f];
    for fs in &factor_signals {
        for (acc, &v) in total.iter_mut().zip(fs.values()) {
            *acc += v;
        }
    }
    let signals = Tensor::new([tau, n, f], total)?;

    let mut graph_values = vec![S::zero(); n * n];
    for part in &part_values {
        for (g, &v) in graph_values.iter_mut().zip(part) {
            *g += S::from_f64(v);
        }
    }
    let graph = GraphStructure::from_vec(n, graph_values)?;
    let parts: Vec<Tensor<S>> = part_values
        .iter()
        .map(|vals| Tensor::new([n, n], vals.iter().map(|&v| S::from_f64(v)).collect()))
        .collect::<Result<_>>()?;
    let decomposition = Decomposition::new(parts, DecompositionOrigin::GroundTruth)?;

    let meta = DatasetMeta {
        name: format!("synthetic-{}", cfg.seed),
        interval: "step".into(),
        tau,
        n_nodes: n,
        features: f,
        factors: Some(k),
        seed: Some(cfg.seed),
    };
    Dataset::new(
        meta,
        graph,
        signals,
        Some(GroundTruth {
            decomposition,
            factor_signals,
        }),
    )
}

// ── windowing and splits ────────────────────────────────────────────────

/// Which portion of the timeline a sample set covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Full,
    Train,
    Validation,
    Test,
}

/// Supervised samples: lookback windows and their next frames.
#[derive(Debug, Clone)]
pub struct SampleSet<S: Scalar> {
    /// `T x N x F` windows (`2T x N x F` with a composite lag).
    pub inputs: Vec<Tensor<S>>,
    /// `N x F` next frames.
    pub targets: Vec<Tensor<S>>,
    pub tag: SplitTag,
}

impl<S: Scalar> SampleSet<S> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor<S>, &Tensor<S>)> {
        self.inputs.iter().zip(self.targets.iter())
    }
}

fn frame_slice<S: Scalar>(signals: &Tensor<S>, from: usize, len: usize) -> Tensor<S> {
    let n = signals.shape()[1];
    let f = signals.shape()[2];
    let per = n * f;
    Tensor::new(
        [len, n, f],
        signals.values()[from * per..(from + len) * per].to_vec(),
    )
    .expect("slice extent matches")
}

/// Cuts `tau - window` samples: sample `i` reads steps `[i, i + window)`
/// and predicts step `i + window`.
pub fn sliding_windows<S: Scalar>(signals: &Tensor<S>, window: usize) -> Result<SampleSet<S>> {
    sliding_windows_composite(signals, window, None)
}

/// Like [`sliding_windows`], but when `lag` is given each input also
/// prepends the same-length window taken `lag` steps earlier, modelling a
/// second, coarser lookback (e.g. same hour on a previous day). Inputs are
/// then `2 window x N x F` and the first valid sample starts at `lag`.
pub fn sliding_windows_composite<S: Scalar>(
    signals: &Tensor<S>,
    window: usize,
    lag: Option<usize>,
) -> Result<SampleSet<S>> {
    if signals.shape().len() != 3 {
        return Err(Error::shape(
            "sliding_windows",
            format!("signals have shape {:?}, expected 3 axes", signals.shape()),
        ));
    }
    if window == 0 {
        return Err(Error::domain("sliding_windows", "window must be positive"));
    }
    if let Some(l) = lag {
        if l == 0 {
            return Err(Error::domain(
                "sliding_windows",
                "composite lag must be positive when given",
            ));
        }
    }
    let tau = signals.shape()[0];
    let start = lag.unwrap_or(0);
    if tau < start + window + 1 {
        return Err(Error::domain(
            "sliding_windows",
            format!(
                "{tau} steps cannot produce samples with window {window}{}",
                lag.map(|l| format!(" and lag {l}")).unwrap_or_default()
            ),
        ));
    }
    let n = signals.shape()[1];
    let f = signals.shape()[2];
    let mut inputs = Vec::with_capacity(tau - window - start);
    let mut targets = Vec::with_capacity(tau - window - start);
    for i in start..tau - window {
        let recent = frame_slice(signals, i, window);
        let input = match lag {
            None => recent,
            Some(l) => {
                let earlier = frame_slice(signals, i - l, window);
                let mut vals = earlier.into_values();
                vals.extend_from_slice(recent.values());
                Tensor::new([2 * window, n, f], vals)?
            }
        };
        inputs.push(input);
        targets.push(Tensor::new(
            [n, f],
            signals.values()[(i + window) * n * f..(i + window + 1) * n * f].to_vec(),
        )?);
    }
    Ok(SampleSet {
        inputs,
        targets,
        tag: SplitTag::Full,
    })
}

/// Chronological 7:1:2 split: the first `floor(0.7 n)` samples train, the
/// next `floor(0.1 n)` validate, the rest test. Every part must be
/// non-empty.
pub fn split_samples<S: Scalar>(
    samples: &SampleSet<S>,
) -> Result<(SampleSet<S>, SampleSet<S>, SampleSet<S>)> {
    let n = samples.len();
    let n_train = n * 7 / 10;
    let n_val = n / 10;
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::domain(
            "split",
            format!("{n} samples are too few for a 7:1:2 split"),
        ));
    }
    let cut = |range: std::ops::Range<usize>, tag: SplitTag| SampleSet {
        inputs: samples.inputs[range.clone()].to_vec(),
        targets: samples.targets[range].to_vec(),
        tag,
    };
    Ok((
        cut(0..n_train, SplitTag::Train),
        cut(n_train..n_train + n_val, SplitTag::Validation),
        cut(n_train + n_val..n, SplitTag::Test),
    ))
}

// ── disk format ─────────────────────────────────────────────────────────

fn signals_to_disk<S: Scalar>(signals: &Tensor<S>, path: &Path) -> Result<()> {
    let tau = signals.shape()[0];
    let per = signals.shape()[1] * signals.shape()[2];
    csvio::write_matrix_csv(path, tau, per, signals.values())
}

fn signals_from_disk<S: Scalar>(path: &Path, tau: usize, n: usize, f: usize) -> Result<Tensor<S>> {
    let (rows, cols, values) = csvio::read_matrix_csv(path)?;
    if rows != tau || cols != n * f {
        return Err(Error::Parse {
            file: path.display().to_string(),
            line: 0,
            msg: format!("{rows}x{cols} signal matrix, expected {tau}x{}", n * f),
        });
    }
    Tensor::new([tau, n, f], values)
}

impl<S: Scalar> Dataset<S> {
    /// Writes `meta.json`, `adjacency.csv`, `signals.csv`, and per-factor
    /// `factor_<k>/{adjacency,signals}.csv` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let meta_path = dir.join("meta.json");
        let text = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| Error::Config(format!("meta serialization failed: {e}")))?;
        fs::write(&meta_path, text).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
        self.graph.write_csv(&dir.join("adjacency.csv"))?;
        signals_to_disk(&self.signals, &dir.join("signals.csv"))?;
        if let Some(gt) = &self.ground_truth {
            for (k, (part, fs)) in gt
                .decomposition
                .parts()
                .iter()
                .zip(&gt.factor_signals)
                .enumerate()
            {
                let sub = dir.join(format!("factor_{k}"));
                fs::create_dir_all(&sub).map_err(|e| Error::io(sub.display().to_string(), e))?;
                let n = self.meta.n_nodes;
                csvio::write_matrix_csv(&sub.join("adjacency.csv"), n, n, part.values())?;
                signals_to_disk(fs, &sub.join("signals.csv"))?;
            }
        }
        Ok(())
    }

    /// Reads a dataset saved by [`Self::save`]. A dataset without factor
    /// directories loads with `ground_truth` absent.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path)
            .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: meta_path.display().to_string(),
            line: 0,
            msg: format!("invalid meta: {e}"),
        })?;
        let graph = GraphStructure::read_csv(&dir.join("adjacency.csv"))?;
        let signals = signals_from_disk(
            &dir.join("signals.csv"),
            meta.tau,
            meta.n_nodes,
            meta.features,
        )?;
        let ground_truth = match meta.factors {
            None => None,
            Some(k) => {
                let mut parts = Vec::with_capacity(k);
                let mut factor_signals = Vec::with_capacity(k);
                for ki in 0..k {
                    let sub = dir.join(format!("factor_{ki}"));
                    let adj_path = sub.join("adjacency.csv");
                    let (rows, cols, values) = csvio::read_matrix_csv(&adj_path)?;
                    if rows != meta.n_nodes || cols != meta.n_nodes {
                        return Err(Error::Parse {
                            file: adj_path.display().to_string(),
                            line: 0,
                            msg: format!(
                                "{rows}x{cols} part adjacency, expected {0}x{0}",
                                meta.n_nodes
                            ),
                        });
                    }
                    parts.push(Tensor::new([rows, cols], values)?);
                    factor_signals.push(signals_from_disk(
                        &sub.join("signals.csv"),
                        meta.tau,
                        meta.n_nodes,
                        meta.features,
                    )?);
                }
                Some(GroundTruth {
                    decomposition: Decomposition::new(parts, DecompositionOrigin::GroundTruth)?,
                    factor_signals,
                })
            }
        };
        Dataset::new(meta, graph, signals, ground_truth)
    }
}
