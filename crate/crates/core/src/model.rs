//! Spatio-temporal blocks stacked with dual residuals.
//!
//! One block reads a `T x N x F` window and a subgraph adjacency, runs a
//! symmetric-normalized graph convolution followed by a learned temporal
//! mix (tanh after each), and decodes the embedding twice: a forecast head
//! predicts the next frame, an extraction head reconstructs the part of
//! the window the block explained. The stack wires `K` blocks in series on
//! a subtractive residual: block `k+1` sees the window minus everything
//! blocks `1..k` extracted, and the model forecast is the sum of all block
//! forecasts. What survives the last subtraction is the final residual,
//! which training pushes toward zero.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::decomp::{masked_subgraphs, MaskSet};
use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};

/// Dimensions shared by every block of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_nodes: usize,
    pub features: usize,
    pub window: usize,
    pub hidden: usize,
    pub factors: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_nodes", self.n_nodes),
            ("features", self.features),
            ("window", self.window),
            ("hidden", self.hidden),
            ("factors", self.factors),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!(
                    "model spec field {name} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// One spatio-temporal block.
///
/// Parameter shapes for window `T`, features `F`, hidden width `H`:
/// `w_in: F x H`, `w_g: H x H`, `w_t: T x T`, `w_p: (T H) x F`,
/// `w_x: (T H) x (T F)`.
#[derive(Debug, Clone)]
pub struct StBlock<S: Scalar> {
    pub w_in: Tensor<S>,
    pub w_g: Tensor<S>,
    pub w_t: Tensor<S>,
    pub w_p: Tensor<S>,
    pub w_x: Tensor<S>,
}

fn uniform_init<S: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor<S> {
    let bound = 1.0 / (rows as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| S::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * bound))
        .collect();
    Tensor::new([rows, cols], values).expect("extent matches values")
}

impl<S: Scalar> StBlock<S> {
    /// Samples every weight uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng>(features: usize, hidden: usize, window: usize, rng: &mut R) -> Self {
        let th = window * hidden;
        StBlock {
            w_in: uniform_init(rng, features, hidden),
            w_g: uniform_init(rng, hidden, hidden),
            w_t: uniform_init(rng, window, window),
            w_p: uniform_init(rng, th, features),
            w_x: uniform_init(rng, th, window * features),
        }
    }

    pub fn zeros(features: usize, hidden: usize, window: usize) -> Self {
        let th = window * hidden;
        StBlock {
            w_in: Tensor::zeros([features, hidden]),
            w_g: Tensor::zeros([hidden, hidden]),
            w_t: Tensor::zeros([window, window]),
            w_p: Tensor::zeros([th, features]),
            w_x: Tensor::zeros([th, window * features]),
        }
    }

    pub fn params(&self) -> [(&'static str, &Tensor<S>); 5] {
        [
            ("w_in", &self.w_in),
            ("w_g", &self.w_g),
            ("w_t", &self.w_t),
            ("w_p", &self.w_p),
            ("w_x", &self.w_x),
        ]
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Tensor<S>); 5] {
        [
            ("w_in", &mut self.w_in),
            ("w_g", &mut self.w_g),
            ("w_t", &mut self.w_t),
            ("w_p", &mut self.w_p),
            ("w_x", &mut self.w_x),
        ]
    }

    fn tracked(&self, tape: &mut Tape<S>) -> StBlock<S> {
        StBlock {
            w_in: tape.var(&self.w_in),
            w_g: tape.var(&self.w_g),
            w_t: tape.var(&self.w_t),
            w_p: tape.var(&self.w_p),
            w_x: tape.var(&self.w_x),
        }
    }

    /// Like `tracked`, but leaves the extraction head untracked. Used by
    /// the monolithic baseline, which never runs it.
    fn tracked_forecast_only(&self, tape: &mut Tape<S>) -> StBlock<S> {
        StBlock {
            w_in: tape.var(&self.w_in),
            w_g: tape.var(&self.w_g),
            w_t: tape.var(&self.w_t),
            w_p: tape.var(&self.w_p),
            w_x: self.w_x.clone(),
        }
    }
}

/// Backcast and forecast of one block.
#[derive(Debug, Clone)]
pub struct BlockOutput<S: Scalar> {
    /// `T x N x F` reconstruction of what the block explained.
    pub backcast: Tensor<S>,
    /// `N x F` next-frame prediction.
    pub forecast: Tensor<S>,
}

/// Differentiable symmetric normalization with self-loops:
/// `D^{-1/2} (A + I) D^{-1/2}`, `D` the row-sum of `A + I`. Gradients flow
/// through the degrees, which matters when `A` comes from learned masks.
pub fn normalize_adjacency<S: Scalar>(tape: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = a.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape(
            "normalize_adjacency",
            format!("expected square matrix, got {shape:?}"),
        ));
    }
    let n = shape[0];
    let eye = Tensor::eye(n);
    let ai = tape.add(a, &eye)?;
    let degrees = tape.row_sum(&ai)?;
    let inv_sqrt = tape.powf(s::<S>(-0.5), &degrees)?;
    let row = tape.transpose(&inv_sqrt)?;
    let outer = tape.matmul(&inv_sqrt, &row)?;
    tape.hadamard(&ai, &outer)
}

fn check_window_shape<S: Scalar>(x: &Tensor<S>, spec: &ModelSpec, op: &'static str) -> Result<()> {
    let want = [spec.window, spec.n_nodes, spec.features];
    if x.shape() != want {
        return Err(Error::shape(
            op,
            format!("window has shape {:?}, expected {want:?}", x.shape()),
        ));
    }
    Ok(())
}

/// Node-major embedding `N x (T H)` of a window under one adjacency.
fn st_block_embed<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    a_norm: &Tensor<S>,
    block: &StBlock<S>,
) -> Result<Tensor<S>> {
    let (t, n) = (x.shape()[0], x.shape()[1]);
    let f = x.shape()[2];
    let h = block.w_in.shape()[1];

    // Lift features, per time step and node.
    let flat = tape.reshape(x, [t * n, f])?;
    let lifted = tape.matmul(&flat, &block.w_in)?;

    // Graph mix: fold time into columns so one matmul covers every step.
    let cube = tape.reshape(&lifted, [t, n, h])?;
    let node_major = tape.swap_axes01(&cube)?;
    let node_flat = tape.reshape(&node_major, [n, t * h])?;
    let mixed = tape.matmul(a_norm, &node_flat)?;

    // Channel mix and nonlinearity.
    let mixed_cube = tape.reshape(&mixed, [n, t, h])?;
    let time_major = tape.swap_axes01(&mixed_cube)?;
    let time_flat = tape.reshape(&time_major, [t * n, h])?;
    let channel = tape.matmul(&time_flat, &block.w_g)?;
    let spatial = tape.tanh(&channel)?;

    // Temporal mix across the window, shared by all node-channel pairs.
    let by_time = tape.reshape(&spatial, [t, n * h])?;
    let temporal = tape.matmul(&block.w_t, &by_time)?;
    let encoded = tape.tanh(&temporal)?;

    // Back to node-major for the per-node decoders.
    let enc_cube = tape.reshape(&encoded, [t, n, h])?;
    let enc_node = tape.swap_axes01(&enc_cube)?;
    tape.reshape(&enc_node, [n, t * h])
}

/// Runs one block on a raw subgraph adjacency (normalized internally).
pub fn st_block_forward<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    a: &Tensor<S>,
    block: &StBlock<S>,
) -> Result<BlockOutput<S>> {
    let a_norm = normalize_adjacency(tape, a)?;
    st_block_forward_normalized(tape, x, &a_norm, block)
}

/// Runs one block on an already-normalized adjacency.
pub fn st_block_forward_normalized<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    a_norm: &Tensor<S>,
    block: &StBlock<S>,
) -> Result<BlockOutput<S>> {
    let (t, n) = (x.shape()[0], x.shape()[1]);
    let f = x.shape()[2];
    let embedding = st_block_embed(tape, x, a_norm, block)?;

    let forecast = tape.matmul(&embedding, &block.w_p)?;
    let back_flat = tape.matmul(&embedding, &block.w_x)?;
    let back_cube = tape.reshape(&back_flat, [n, t, f])?;
    let backcast = tape.swap_axes01(&back_cube)?;

    if !forecast.all_finite() || !backcast.all_finite() {
        return Err(Error::NonFinite {
            op: "st_block_forward",
            detail: "block output diverged".into(),
        });
    }
    Ok(BlockOutput { backcast, forecast })
}

/// Where the per-block adjacencies come from.
#[derive(Debug, Clone)]
pub enum AdjacencySource<S: Scalar> {
    /// Learned soft subgraphs from a mask set.
    Learned(MaskSet<S>),
    /// Frozen subgraph adjacencies (ground truth or a hashing baseline).
    Fixed(Vec<Tensor<S>>),
}

/// Everything a full forward pass produces.
#[derive(Debug, Clone)]
pub struct ModelOutput<S: Scalar> {
    /// Sum of the block forecasts, `N x F`.
    pub forecast: Tensor<S>,
    pub block_forecasts: Vec<Tensor<S>>,
    pub block_backcasts: Vec<Tensor<S>>,
    /// Window content no block explained, `T x N x F`.
    pub final_residual: Tensor<S>,
}

/// `K` blocks in series over `K` subgraphs.
#[derive(Debug, Clone)]
pub struct FactorModel<S: Scalar> {
    pub spec: ModelSpec,
    pub blocks: Vec<StBlock<S>>,
    pub adjacency: AdjacencySource<S>,
}

impl<S: Scalar> FactorModel<S> {
    pub fn new(
        spec: ModelSpec,
        blocks: Vec<StBlock<S>>,
        adjacency: AdjacencySource<S>,
    ) -> Result<Self> {
        spec.validate()?;
        if blocks.len() != spec.factors {
            return Err(Error::Config(format!(
                "{} blocks for {} factors",
                blocks.len(),
                spec.factors
            )));
        }
        let k = match &adjacency {
            AdjacencySource::Learned(ms) => ms.k(),
            AdjacencySource::Fixed(parts) => parts.len(),
        };
        if k != spec.factors {
            return Err(Error::Config(format!(
                "{k} adjacencies for {} factors",
                spec.factors
            )));
        }
        Ok(FactorModel {
            spec,
            blocks,
            adjacency,
        })
    }

    pub fn init<R: Rng>(
        spec: ModelSpec,
        adjacency: AdjacencySource<S>,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..spec.factors)
            .map(|_| StBlock::init(spec.features, spec.hidden, spec.window, rng))
            .collect();
        Self::new(spec, blocks, adjacency)
    }

    /// Named parameters in checkpoint order: masks first (learned source
    /// only), then per block `w_in, w_g, w_t, w_p, w_x`.
    pub fn params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        if let AdjacencySource::Learned(ms) = &self.adjacency {
            for (k, m) in ms.masks().iter().enumerate() {
                out.push((format!("mask_{k}"), m));
            }
        }
        for (k, b) in self.blocks.iter().enumerate() {
            for (name, p) in b.params() {
                out.push((format!("block_{k}.{name}"), p));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<(String, &mut Tensor<S>)> = Vec::new();
        if let AdjacencySource::Learned(ms) = &mut self.adjacency {
            for (k, m) in ms.masks_mut().iter_mut().enumerate() {
                out.push((format!("mask_{k}"), m));
            }
        }
        for (k, b) in self.blocks.iter_mut().enumerate() {
            for (name, p) in b.params_mut() {
                out.push((format!("block_{k}.{name}"), p));
            }
        }
        out
    }

    /// Number of leading entries of [`Self::params`] that belong to the
    /// decomposition (the masks); the rest belong to the blocks.
    pub fn num_decomposition_params(&self) -> usize {
        match &self.adjacency {
            AdjacencySource::Learned(ms) => ms.k(),
            AdjacencySource::Fixed(_) => 0,
        }
    }

    /// Clone with every parameter registered on `tape`, in the same order
    /// as [`Self::params`].
    pub fn tracked(&self, tape: &mut Tape<S>) -> FactorModel<S> {
        let adjacency = match &self.adjacency {
            AdjacencySource::Learned(ms) => AdjacencySource::Learned(ms.tracked(tape)),
            AdjacencySource::Fixed(parts) => AdjacencySource::Fixed(parts.clone()),
        };
        FactorModel {
            spec: self.spec,
            blocks: self.blocks.iter().map(|b| b.tracked(tape)).collect(),
            adjacency,
        }
    }

    /// Soft subgraphs on the tape (learned source) or the fixed parts.
    pub fn soft_subgraphs(&self, tape: &mut Tape<S>) -> Result<Vec<Tensor<S>>> {
        match &self.adjacency {
            AdjacencySource::Learned(ms) => masked_subgraphs(tape, ms.masks(), ms.base()),
            AdjacencySource::Fixed(parts) => Ok(parts.clone()),
        }
    }

    /// Normalized per-block adjacencies; compute once per tape and reuse
    /// across a batch.
    pub fn normalized_adjacencies(&self, tape: &mut Tape<S>) -> Result<Vec<Tensor<S>>> {
        self.soft_subgraphs(tape)?
            .iter()
            .map(|a| normalize_adjacency(tape, a))
            .collect()
    }

    /// Full forward pass for one window.
    pub fn forward(&self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<ModelOutput<S>> {
        let adjs = self.normalized_adjacencies(tape)?;
        self.forward_with(tape, x, &adjs)
    }

    /// Forward pass with precomputed normalized adjacencies.
    pub fn forward_with(
        &self,
        tape: &mut Tape<S>,
        x: &Tensor<S>,
        norm_adjs: &[Tensor<S>],
    ) -> Result<ModelOutput<S>> {
        check_window_shape(x, &self.spec, "forward")?;
        if norm_adjs.len() != self.blocks.len() {
            return Err(Error::Config(format!(
                "{} adjacencies for {} blocks",
                norm_adjs.len(),
                self.blocks.len()
            )));
        }
        let mut input = x.clone();
        let mut block_forecasts = Vec::with_capacity(self.blocks.len());
        let mut block_backcasts = Vec::with_capacity(self.blocks.len());
        let mut forecast: Option<Tensor<S>> = None;
        for (block, a_norm) in self.blocks.iter().zip(norm_adjs) {
            let out = st_block_forward_normalized(tape, &input, a_norm, block)?;
            input = tape.sub(&input, &out.backcast)?;
            forecast = Some(match forecast {
                Some(acc) => tape.add(&acc, &out.forecast)?,
                None => out.forecast.clone(),
            });
            block_forecasts.push(out.forecast);
            block_backcasts.push(out.backcast);
        }
        Ok(ModelOutput {
            forecast: forecast.expect("at least one block"),
            block_forecasts,
            block_backcasts,
            final_residual: input,
        })
    }

    /// Untracked forecast for one window.
    pub fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        Ok(self.forward(&mut tape, x)?.forecast)
    }
}

/// Single block on the whole graph, forecast head only.
#[derive(Debug, Clone)]
pub struct MonolithicModel<S: Scalar> {
    pub spec: ModelSpec,
    pub block: StBlock<S>,
    pub adjacency: Tensor<S>,
}

impl<S: Scalar> MonolithicModel<S> {
    pub fn init<R: Rng>(spec: ModelSpec, adjacency: Tensor<S>, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if adjacency.shape() != [spec.n_nodes, spec.n_nodes] {
            return Err(Error::shape(
                "monolithic",
                format!(
                    "adjacency {:?} vs {} nodes",
                    adjacency.shape(),
                    spec.n_nodes
                ),
            ));
        }
        Ok(MonolithicModel {
            spec,
            block: StBlock::init(spec.features, spec.hidden, spec.window, rng),
            adjacency,
        })
    }

    /// Named parameters: the forecast path only.
    pub fn params(&self) -> Vec<(String, &Tensor<S>)> {
        self.block
            .params()
            .into_iter()
            .filter(|(name, _)| *name != "w_x")
            .map(|(name, p)| (format!("block_0.{name}"), p))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        self.block
            .params_mut()
            .into_iter()
            .filter(|(name, _)| *name != "w_x")
            .map(|(name, p)| (format!("block_0.{name}"), p))
            .collect()
    }

    pub fn tracked(&self, tape: &mut Tape<S>) -> MonolithicModel<S> {
        MonolithicModel {
            spec: self.spec,
            block: self.block.tracked_forecast_only(tape),
            adjacency: self.adjacency.clone(),
        }
    }

    pub fn forward(&self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        check_window_shape(x, &self.spec, "monolithic_forward")?;
        monolithic_forward(tape, x, &self.adjacency, &self.block)
    }

    pub fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        self.forward(&mut tape, x)
    }
}

/// One block on the original graph; returns only the `N x F` forecast.
pub fn monolithic_forward<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    a: &Tensor<S>,
    block: &StBlock<S>,
) -> Result<Tensor<S>> {
    let a_norm = normalize_adjacency(tape, a)?;
    monolithic_forward_normalized(tape, x, &a_norm, block)
}

/// [`monolithic_forward`] with an already-normalized adjacency, letting a
/// batch share one normalization.
pub fn monolithic_forward_normalized<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    a_norm: &Tensor<S>,
    block: &StBlock<S>,
) -> Result<Tensor<S>> {
    let embedding = st_block_embed(tape, x, a_norm, block)?;
    let forecast = tape.matmul(&embedding, &block.w_p)?;
    if !forecast.all_finite() {
        return Err(Error::NonFinite {
            op: "monolithic_forward",
            detail: "forecast diverged".into(),
        });
    }
    Ok(forecast)
}

// ── checkpoints ─────────────────────────────────────────────────────────

/// Serialized model: config plus flat named parameter arrays, in the order
/// reported by `params()`. Values are `f64`, written with full precision,
/// so a save/load cycle is bit-exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub variant: String,
    pub spec: ModelSpec,
    /// Base graph adjacency, row-major `N x N`.
    pub base_adjacency: Vec<f64>,
    /// Fixed subgraph parts for baseline variants, one per factor.
    pub fixed_parts: Option<Vec<Vec<f64>>>,
    pub params: Vec<ParamRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

fn record<S: Scalar>(name: &str, t: &Tensor<S>) -> ParamRecord {
    ParamRecord {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        values: t.values().iter().map(|v| v.into_f64()).collect(),
    }
}

/// A trained model of any variant, ready to save or evaluate.
#[derive(Debug, Clone)]
pub enum TrainedModel<S: Scalar> {
    Stgdl(FactorModel<S>),
    Ted(FactorModel<S>),
    Monolithic(Box<MonolithicModel<S>>),
}

impl<S: Scalar> TrainedModel<S> {
    pub fn variant_name(&self) -> &'static str {
        match self {
            TrainedModel::Stgdl(_) => "stgdl",
            TrainedModel::Ted(_) => "ted",
            TrainedModel::Monolithic(_) => "monolithic",
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        match self {
            TrainedModel::Stgdl(m) | TrainedModel::Ted(m) => &m.spec,
            TrainedModel::Monolithic(m) => &m.spec,
        }
    }

    pub fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            TrainedModel::Stgdl(m) | TrainedModel::Ted(m) => m.predict(x),
            TrainedModel::Monolithic(m) => m.predict(x),
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor<S>)> {
        match self {
            TrainedModel::Stgdl(m) | TrainedModel::Ted(m) => m.params(),
            TrainedModel::Monolithic(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        match self {
            TrainedModel::Stgdl(m) | TrainedModel::Ted(m) => m.params_mut(),
            TrainedModel::Monolithic(m) => m.params_mut(),
        }
    }

    /// How many leading entries of [`Self::params`] are decomposition
    /// parameters (learned masks) rather than network weights.
    pub fn num_decomposition_params(&self) -> usize {
        match self {
            TrainedModel::Stgdl(m) | TrainedModel::Ted(m) => m.num_decomposition_params(),
            TrainedModel::Monolithic(_) => 0,
        }
    }

    /// Clone with every trainable parameter registered on `tape`, ordered
    /// as in [`Self::params`].
    pub fn tracked(&self, tape: &mut Tape<S>) -> TrainedModel<S> {
        match self {
            TrainedModel::Stgdl(m) => TrainedModel::Stgdl(m.tracked(tape)),
            TrainedModel::Ted(m) => TrainedModel::Ted(m.tracked(tape)),
            TrainedModel::Monolithic(m) => TrainedModel::Monolithic(Box::new(m.tracked(tape))),
        }
    }

    pub fn mask_set(&self) -> Option<&MaskSet<S>> {
        match self {
            TrainedModel::Stgdl(m) => match &m.adjacency {
                AdjacencySource::Learned(ms) => Some(ms),
                AdjacencySource::Fixed(_) => None,
            },
            _ => None,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            TrainedModel::Stgdl(m) => {
                let base = match &m.adjacency {
                    AdjacencySource::Learned(ms) => ms.base(),
                    AdjacencySource::Fixed(_) => unreachable!("stgdl uses learned masks"),
                };
                Checkpoint {
                    variant: "stgdl".into(),
                    spec: m.spec,
                    base_adjacency: base.values().iter().map(|v| v.into_f64()).collect(),
                    fixed_parts: None,
                    params: m.params().iter().map(|(n, p)| record(n, p)).collect(),
                }
            }
            TrainedModel::Ted(m) => {
                let parts = match &m.adjacency {
                    AdjacencySource::Fixed(parts) => parts,
                    AdjacencySource::Learned(_) => unreachable!("ted uses fixed parts"),
                };
                let n = m.spec.n_nodes;
                let mut base = vec![0.0; n * n];
                for p in parts {
                    for (b, v) in base.iter_mut().zip(p.values()) {
                        *b += v.into_f64();
                    }
                }
                Checkpoint {
                    variant: "ted".into(),
                    spec: m.spec,
                    base_adjacency: base,
                    fixed_parts: Some(
                        parts
                            .iter()
                            .map(|p| p.values().iter().map(|v| v.into_f64()).collect())
                            .collect(),
                    ),
                    params: m.params().iter().map(|(n, p)| record(n, p)).collect(),
                }
            }
            TrainedModel::Monolithic(m) => Checkpoint {
                variant: "monolithic".into(),
                spec: m.spec,
                base_adjacency: m.adjacency.values().iter().map(|v| v.into_f64()).collect(),
                fixed_parts: None,
                params: m.params().iter().map(|(n, p)| record(n, p)).collect(),
            },
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        type TakeParam<'a, S> = dyn FnMut(String, &[usize]) -> Result<Tensor<S>> + 'a;
        ck.spec.validate()?;
        let n = ck.spec.n_nodes;
        if ck.base_adjacency.len() != n * n {
            return Err(Error::Config(format!(
                "checkpoint base adjacency has {} values, expected {}",
                ck.base_adjacency.len(),
                n * n
            )));
        }
        let base = Tensor::new(
            [n, n],
            ck.base_adjacency.iter().map(|&v| S::from_f64(v)).collect(),
        )?;

        let mut params = ck.params.iter();
        let mut take = |name: String, shape: &[usize]| -> Result<Tensor<S>> {
            let rec = params
                .next()
                .ok_or_else(|| Error::Config(format!("checkpoint is missing parameter {name}")))?;
            if rec.name != name || rec.shape != shape {
                return Err(Error::Config(format!(
                    "checkpoint parameter mismatch: found {} {:?}, expected {name} {shape:?}",
                    rec.name, rec.shape
                )));
            }
            if rec.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "parameter {name} has non-finite values"
                )));
            }
            Tensor::new(
                shape.to_vec(),
                rec.values.iter().map(|&v| S::from_f64(v)).collect(),
            )
        };

        let spec = ck.spec;
        let (f, h, t) = (spec.features, spec.hidden, spec.window);
        let th = t * h;
        let read_block =
            |take: &mut TakeParam<S>, k: usize, with_extraction: bool| -> Result<StBlock<S>> {
                let w_in = take(format!("block_{k}.w_in"), &[f, h])?;
                let w_g = take(format!("block_{k}.w_g"), &[h, h])?;
                let w_t = take(format!("block_{k}.w_t"), &[t, t])?;
                let w_p = take(format!("block_{k}.w_p"), &[th, f])?;
                let w_x = if with_extraction {
                    take(format!("block_{k}.w_x"), &[th, t * f])?
                } else {
                    Tensor::zeros([th, t * f])
                };
                Ok(StBlock {
                    w_in,
                    w_g,
                    w_t,
                    w_p,
                    w_x,
                })
            };

        match ck.variant.as_str() {
            "stgdl" => {
                let mut take_dyn = |name: String, shape: &[usize]| take(name, shape);
                let masks: Vec<Tensor<S>> = (0..spec.factors)
                    .map(|k| take_dyn(format!("mask_{k}"), &[n, n]))
                    .collect::<Result<_>>()?;
                let blocks: Vec<StBlock<S>> = (0..spec.factors)
                    .map(|k| read_block(&mut take_dyn, k, true))
                    .collect::<Result<_>>()?;
                let ms = MaskSet::from_parts(base, masks)?;
                Ok(TrainedModel::Stgdl(FactorModel::new(
                    spec,
                    blocks,
                    AdjacencySource::Learned(ms),
                )?))
            }
            "ted" => {
                let parts_raw = ck.fixed_parts.as_ref().ok_or_else(|| {
                    Error::Config("ted checkpoint is missing its fixed parts".into())
                })?;
                if parts_raw.len() != spec.factors {
                    return Err(Error::Config(format!(
                        "{} fixed parts for {} factors",
                        parts_raw.len(),
                        spec.factors
                    )));
                }
                let parts: Vec<Tensor<S>> = parts_raw
                    .iter()
                    .map(|vals| Tensor::new([n, n], vals.iter().map(|&v| S::from_f64(v)).collect()))
                    .collect::<Result<_>>()?;
                let mut take_dyn = |name: String, shape: &[usize]| take(name, shape);
                let blocks: Vec<StBlock<S>> = (0..spec.factors)
                    .map(|k| read_block(&mut take_dyn, k, true))
                    .collect::<Result<_>>()?;
                Ok(TrainedModel::Ted(FactorModel::new(
                    spec,
                    blocks,
                    AdjacencySource::Fixed(parts),
                )?))
            }
            "monolithic" => {
                let mut take_dyn = |name: String, shape: &[usize]| take(name, shape);
                let block = read_block(&mut take_dyn, 0, false)?;
                Ok(TrainedModel::Monolithic(Box::new(MonolithicModel {
                    spec,
                    block,
                    adjacency: base,
                })))
            }
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| Error::Config(format!("checkpoint serialization failed: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: 0,
            msg: format!("invalid checkpoint: {e}"),
        })?;
        Self::from_checkpoint(&ck)
    }
}
