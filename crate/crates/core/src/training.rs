//! Joint optimization: batching, Adam, early stopping, seeding.
//!
//! One training step computes every loss term on a single tape — the
//! decomposition regularizers once per batch, the residual and prediction
//! terms averaged over the batch — runs one backward pass, and then
//! applies the gradients in two groups: mask parameters first, network
//! weights second. Each group has its own optimizer state, so the two
//! updates mirror a decomposition step followed by a network step while
//! sharing the same gradients.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::{sliding_windows, split_samples, Dataset, SampleSet};
use crate::decomp::{completeness_loss, independence_loss, MaskSet};
use crate::error::{Error, Result};
use crate::eval;
use crate::graph::ted_decompose;
use crate::model::{
    monolithic_forward_normalized, AdjacencySource, FactorModel, ModelSpec, MonolithicModel,
    TrainedModel,
};
use crate::scalar::{s, Scalar};

// ── configuration ───────────────────────────────────────────────────────

/// Multipliers on the four loss terms; the canonical objective is the
/// plain sum (all ones).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub completeness: f64,
    pub independence: f64,
    pub reconstruction: f64,
    pub prediction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            completeness: 1.0,
            independence: 1.0,
            reconstruction: 1.0,
            prediction: 1.0,
        }
    }
}

impl LossWeights {
    fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("completeness", self.completeness),
            ("independence", self.independence),
            ("reconstruction", self.reconstruction),
            ("prediction", self.prediction),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and nonnegative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Training hyperparameters. Defaults: Adam at learning rate `0.001`,
/// batches of 32, up to 100 epochs, early stopping after 10 epochs
/// without validation improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Adam step size; zero freezes the parameters (useful as a probe).
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs of non-improving validation MAE tolerated before stopping.
    pub patience: usize,
    /// Number of factor subgraphs and blocks (ignored by `monolithic`).
    pub factors: usize,
    /// Lookback window length.
    pub window: usize,
    /// Hidden width of each block.
    pub hidden: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            factors: 4,
            window: 12,
            hidden: 8,
            seed: 1,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("factors", self.factors),
            ("window", self.window),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.loss_weights.validate()
    }
}

/// Which model family to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Learned masks, K blocks, full joint loss.
    Stgdl,
    /// One block on the whole graph, prediction loss only.
    Monolithic,
    /// Degree-hash fixed subgraphs, K blocks, residual + prediction loss.
    Ted,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Stgdl, Variant::Monolithic, Variant::Ted];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Stgdl => "stgdl",
            Variant::Monolithic => "monolithic",
            Variant::Ted => "ted",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        match text {
            "stgdl" => Ok(Variant::Stgdl),
            "monolithic" => Ok(Variant::Monolithic),
            "ted" => Ok(Variant::Ted),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected stgdl, monolithic, or ted"
            ))),
        }
    }
}

// ── optimizer ───────────────────────────────────────────────────────────

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam over an ordered parameter list. Moment buffers are
/// allocated on the first step and keyed by position, so the caller must
/// present the same parameters in the same order every step.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    lr: S,
    steps: usize,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            lr: s(learning_rate),
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor<S>)],
        grads: &[Tensor<S>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam",
                format!("{} parameters vs {} gradients", params.len(), grads.len()),
            ));
        }
        if self.m.is_empty() && !params.is_empty() {
            self.m = grads
                .iter()
                .map(|g| Tensor::zeros(g.shape().to_vec()))
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "optimizer was initialized for {} parameters, got {}",
                    self.m.len(),
                    params.len()
                ),
            ));
        }
        for (i, ((name, p), g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    "adam",
                    format!(
                        "parameter {name}: value {:?}, gradient {:?}, state {:?}",
                        p.shape(),
                        g.shape(),
                        self.m[i].shape()
                    ),
                ));
            }
        }

        self.steps += 1;
        let (b1, b2, eps) = (s::<S>(ADAM_BETA1), s::<S>(ADAM_BETA2), s::<S>(ADAM_EPS));
        let one = S::one();
        let t = self.steps as i32;
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].values_mut();
            let v = self.v[i].values_mut();
            for ((pv, &gv), (mv, vv)) in p
                .values_mut()
                .iter_mut()
                .zip(g.values())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

// ── losses ──────────────────────────────────────────────────────────────

/// Values of every loss term for one batch. Terms outside the trained
/// variant's objective are recorded as zero; `joint` is the weighted sum
/// actually optimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub completeness: f64,
    pub independence: f64,
    pub reconstruction: f64,
    pub prediction: f64,
    pub joint: f64,
}

fn scalar_f64<S: Scalar>(t: &Tensor<S>) -> Result<f64> {
    Ok(t.item()?.into_f64())
}

/// Builds the variant's loss for one batch on `tape`. `model` must
/// already be the tracked clone living on this tape. Returns the
/// differentiable joint loss and the per-term values.
pub fn batch_loss<S: Scalar>(
    tape: &mut Tape<S>,
    model: &TrainedModel<S>,
    inputs: &[&Tensor<S>],
    targets: &[&Tensor<S>],
    weights: &LossWeights,
) -> Result<(Tensor<S>, LossTerms)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::domain(
            "batch_loss",
            format!("{} inputs vs {} targets", inputs.len(), targets.len()),
        ));
    }
    let inv_b = s::<S>(1.0 / inputs.len() as f64);
    let add_weighted = |tape: &mut Tape<S>,
                        acc: Option<Tensor<S>>,
                        w: f64,
                        term: &Tensor<S>|
     -> Result<Option<Tensor<S>>> {
        let scaled = tape.scale(s::<S>(w), term)?;
        Ok(Some(match acc {
            Some(prev) => tape.add(&prev, &scaled)?,
            None => scaled,
        }))
    };

    match model {
        TrainedModel::Stgdl(fm) => {
            let base = match &fm.adjacency {
                AdjacencySource::Learned(ms) => ms.base().clone(),
                AdjacencySource::Fixed(_) => {
                    return Err(Error::Config(
                        "stgdl training requires learned masks".into(),
                    ))
                }
            };
            let soft = fm.soft_subgraphs(tape)?;
            let l_c = completeness_loss(tape, &base, &soft)?;
            let l_i = independence_loss(tape, &soft)?;
            let adjs = soft
                .iter()
                .map(|a| crate::model::normalize_adjacency(tape, a))
                .collect::<Result<Vec<_>>>()?;
            let (l_r, l_p) = factor_batch_terms(tape, fm, &adjs, inputs, targets, inv_b)?;

            let mut joint = add_weighted(tape, None, weights.completeness, &l_c)?;
            joint = add_weighted(tape, joint, weights.independence, &l_i)?;
            joint = add_weighted(tape, joint, weights.reconstruction, &l_r)?;
            joint = add_weighted(tape, joint, weights.prediction, &l_p)?;
            let joint = joint.expect("four terms were added");
            let terms = LossTerms {
                completeness: scalar_f64(&l_c)?,
                independence: scalar_f64(&l_i)?,
                reconstruction: scalar_f64(&l_r)?,
                prediction: scalar_f64(&l_p)?,
                joint: scalar_f64(&joint)?,
            };
            Ok((joint, terms))
        }
        TrainedModel::Ted(fm) => {
            let adjs = fm.normalized_adjacencies(tape)?;
            let (l_r, l_p) = factor_batch_terms(tape, fm, &adjs, inputs, targets, inv_b)?;
            let mut joint = add_weighted(tape, None, weights.reconstruction, &l_r)?;
            joint = add_weighted(tape, joint, weights.prediction, &l_p)?;
            let joint = joint.expect("two terms were added");
            let terms = LossTerms {
                completeness: 0.0,
                independence: 0.0,
                reconstruction: scalar_f64(&l_r)?,
                prediction: scalar_f64(&l_p)?,
                joint: scalar_f64(&joint)?,
            };
            Ok((joint, terms))
        }
        TrainedModel::Monolithic(mm) => {
            let a_norm = crate::model::normalize_adjacency(tape, &mm.adjacency)?;
            let mut lp_acc: Option<Tensor<S>> = None;
            for (x, y) in inputs.iter().zip(targets) {
                let forecast = monolithic_forward_normalized(tape, x, &a_norm, &mm.block)?;
                let err = tape.sub(&forecast, y)?;
                let term = tape.l1(&err)?;
                lp_acc = Some(match lp_acc {
                    Some(prev) => tape.add(&prev, &term)?,
                    None => term,
                });
            }
            let l_p = tape.scale(inv_b, &lp_acc.expect("non-empty batch"))?;
            let joint = tape.scale(s::<S>(weights.prediction), &l_p)?;
            let terms = LossTerms {
                completeness: 0.0,
                independence: 0.0,
                reconstruction: 0.0,
                prediction: scalar_f64(&l_p)?,
                joint: scalar_f64(&joint)?,
            };
            Ok((joint, terms))
        }
    }
}

/// Batch-mean residual and prediction terms of a factor model under
/// precomputed normalized adjacencies.
fn factor_batch_terms<S: Scalar>(
    tape: &mut Tape<S>,
    fm: &FactorModel<S>,
    adjs: &[Tensor<S>],
    inputs: &[&Tensor<S>],
    targets: &[&Tensor<S>],
    inv_b: S,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let mut lr_acc: Option<Tensor<S>> = None;
    let mut lp_acc: Option<Tensor<S>> = None;
    for (x, y) in inputs.iter().zip(targets) {
        let out = fm.forward_with(tape, x, adjs)?;
        let r = tape.l1(&out.final_residual)?;
        let err = tape.sub(&out.forecast, y)?;
        let p = tape.l1(&err)?;
        lr_acc = Some(match lr_acc {
            Some(prev) => tape.add(&prev, &r)?,
            None => r,
        });
        lp_acc = Some(match lp_acc {
            Some(prev) => tape.add(&prev, &p)?,
            None => p,
        });
    }
    let l_r = tape.scale(inv_b, &lr_acc.expect("non-empty batch"))?;
    let l_p = tape.scale(inv_b, &lp_acc.expect("non-empty batch"))?;
    Ok((l_r, l_p))
}

// ── training loop ───────────────────────────────────────────────────────

/// Loss-term means and validation MAE of one epoch. Term columns hold the
/// raw (unweighted) values averaged over the epoch's batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub completeness: f64,
    pub independence: f64,
    pub reconstruction: f64,
    pub prediction: f64,
    pub joint: f64,
    pub val_mae: f64,
}

/// History CSV: one row per epoch, columns
/// `epoch,loss_completeness,loss_independence,loss_reconstruction,loss_prediction,loss_joint,val_mae`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(
        "epoch,loss_completeness,loss_independence,loss_reconstruction,loss_prediction,loss_joint,val_mae\n",
    );
    for r in history {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.epoch,
            r.completeness,
            r.independence,
            r.reconstruction,
            r.prediction,
            r.joint,
            r.val_mae
        ));
    }
    out
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// A finished training run: the best-validation model and what happened.
#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    pub model: TrainedModel<S>,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose snapshot is returned.
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

/// Fresh model for a variant: masks start at zero (every soft subgraph is
/// half the base graph), block weights are uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from the seeded stream.
pub fn init_model<S: Scalar>(
    dataset: &Dataset<S>,
    cfg: &TrainConfig,
    variant: Variant,
    rng: &mut ChaCha8Rng,
) -> Result<TrainedModel<S>> {
    let spec = ModelSpec {
        n_nodes: dataset.meta.n_nodes,
        features: dataset.meta.features,
        window: cfg.window,
        hidden: cfg.hidden,
        factors: match variant {
            Variant::Monolithic => 1,
            _ => cfg.factors,
        },
    };
    match variant {
        Variant::Stgdl => {
            let masks = MaskSet::new(&dataset.graph, cfg.factors)?;
            Ok(TrainedModel::Stgdl(FactorModel::init(
                spec,
                AdjacencySource::Learned(masks),
                rng,
            )?))
        }
        Variant::Ted => {
            let parts = ted_decompose(&dataset.graph, cfg.factors)?.parts().to_vec();
            Ok(TrainedModel::Ted(FactorModel::init(
                spec,
                AdjacencySource::Fixed(parts),
                rng,
            )?))
        }
        Variant::Monolithic => Ok(TrainedModel::Monolithic(Box::new(MonolithicModel::init(
            spec,
            dataset.graph.adjacency().clone(),
            rng,
        )?))),
    }
}

/// Mean absolute error of the model's forecasts over a sample set.
pub fn prediction_mae<S: Scalar>(model: &TrainedModel<S>, samples: &SampleSet<S>) -> Result<f64> {
    let preds: Vec<Tensor<S>> = samples
        .inputs
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<_>>()?;
    Ok(eval::metrics(&preds, &samples.targets)?.mae)
}

fn as_divergence(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { op, .. } => Error::Diverged {
            epoch,
            term: op.to_string(),
        },
        other => other,
    }
}

fn check_terms_finite(terms: &LossTerms, epoch: usize) -> Result<()> {
    for (name, v) in [
        ("completeness", terms.completeness),
        ("independence", terms.independence),
        ("reconstruction", terms.reconstruction),
        ("prediction", terms.prediction),
        ("joint", terms.joint),
    ] {
        if !v.is_finite() {
            return Err(Error::Diverged {
                epoch,
                term: name.to_string(),
            });
        }
    }
    Ok(())
}

/// Trains a variant on a dataset: chronological 7:1:2 split, seeded
/// shuffled batches, one shared backward per batch feeding the mask
/// update and then the network update, per-epoch validation MAE with
/// early stopping, best-validation snapshot returned. The whole run is a
/// pure function of `(dataset, cfg, variant)` — identical inputs
/// reproduce the history and the model bit for bit.
pub fn train<S: Scalar>(
    dataset: &Dataset<S>,
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    let windows = sliding_windows(&dataset.signals, cfg.window)?;
    let (train_set, val_set, _) = split_samples(&windows)?;
    train_on_splits(dataset, &train_set, &val_set, cfg, variant)
}

/// [`train`] on presplit samples, for harnesses that manage splits
/// themselves.
pub fn train_on_splits<S: Scalar>(
    dataset: &Dataset<S>,
    train_set: &SampleSet<S>,
    val_set: &SampleSet<S>,
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::domain("train", "empty training or validation split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init_model(dataset, cfg, variant, &mut rng)?;
    let n_decomp = model.num_decomposition_params();
    let mut opt_masks = Adam::<S>::new(cfg.learning_rate);
    let mut opt_net = Adam::<S>::new(cfg.learning_rate);

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_model = model.clone();
    let mut best_epoch = 0usize;
    let mut bad_epochs = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = LossTerms {
            completeness: 0.0,
            independence: 0.0,
            reconstruction: 0.0,
            prediction: 0.0,
            joint: 0.0,
        };
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<&Tensor<S>> = chunk.iter().map(|&i| &train_set.inputs[i]).collect();
            let targets: Vec<&Tensor<S>> = chunk.iter().map(|&i| &train_set.targets[i]).collect();

            let mut tape = Tape::new();
            let tracked = model.tracked(&mut tape);
            let (joint, terms) =
                batch_loss(&mut tape, &tracked, &inputs, &targets, &cfg.loss_weights)
                    .map_err(|e| as_divergence(e, epoch))?;
            check_terms_finite(&terms, epoch)?;

            let grads = tape.backward(&joint).map_err(|e| as_divergence(e, epoch))?;
            let tracked_params = tracked.params();
            let gs: Vec<Tensor<S>> = tracked_params
                .iter()
                .map(|(_, p)| grads.wrt(p))
                .collect::<Result<_>>()?;
            if gs.iter().any(|g| !g.all_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    term: "gradient".to_string(),
                });
            }
            let mut plain = model.params_mut();
            opt_masks.step(&mut plain[..n_decomp], &gs[..n_decomp])?;
            opt_net.step(&mut plain[n_decomp..], &gs[n_decomp..])?;

            sums.completeness += terms.completeness;
            sums.independence += terms.independence;
            sums.reconstruction += terms.reconstruction;
            sums.prediction += terms.prediction;
            sums.joint += terms.joint;
            batches += 1;
        }

        let val_mae = prediction_mae(&model, val_set).map_err(|e| as_divergence(e, epoch))?;
        let b = batches as f64;
        history.push(EpochRecord {
            epoch,
            completeness: sums.completeness / b,
            independence: sums.independence / b,
            reconstruction: sums.reconstruction / b,
            prediction: sums.prediction / b,
            joint: sums.joint / b,
            val_mae,
        });

        if val_mae < best_val {
            best_val = val_mae;
            best_model = model.clone();
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch,
        best_val_mae: best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use crate::model::StBlock;
    use rand::Rng;

    fn tiny_dataset() -> Dataset<f64> {
        generate_synthetic(&SyntheticConfig {
            n_nodes: 8,
            factors: 2,
            tau: 120,
            features: 1,
            edge_prob: 0.5,
            noise_std: 0.02,
            seed: 42,
        })
        .unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 16,
            max_epochs: 3,
            patience: 10,
            factors: 2,
            window: 6,
            hidden: 4,
            seed: 5,
            loss_weights: LossWeights::default(),
        }
    }

    // ── optimizer ───────────────────────────────────────────────────

    #[test]
    fn adam_zero_gradient_leaves_params_alone() {
        let mut opt = Adam::<f64>::new(0.1);
        let mut p = Tensor::new([2], vec![1.0, -2.0]).unwrap();
        let g = Tensor::zeros([2]);
        let mut params = vec![("p".to_string(), &mut p)];
        opt.step(&mut params, &[g]).unwrap();
        assert_eq!(opt.steps(), 1);
        assert_eq!(p.values(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut opt = Adam::<f64>::new(0.001);
        let mut p = Tensor::new([2], vec![0.0, 0.0]).unwrap();
        let g = Tensor::new([2], vec![3.0, -0.5]).unwrap();
        let mut params = vec![("p".to_string(), &mut p)];
        opt.step(&mut params, &[g]).unwrap();
        // Bias-corrected first step: lr * g / (|g| + eps) = lr * sign(g).
        assert!((p.values()[0] + 0.001).abs() < 1e-8);
        assert!((p.values()[1] - 0.001).abs() < 1e-8);
    }

    #[test]
    fn adam_keeps_identical_params_identical() {
        let mut opt = Adam::<f64>::new(0.05);
        let mut a = Tensor::new([1], vec![0.7]).unwrap();
        let mut b = Tensor::new([1], vec![0.7]).unwrap();
        for step in 0..20 {
            let g = Tensor::new([1], vec![(step as f64 * 0.3).sin()]).unwrap();
            let mut params = vec![("a".to_string(), &mut a), ("b".to_string(), &mut b)];
            opt.step(&mut params, &[g.clone(), g]).unwrap();
        }
        assert_eq!(a.values()[0].to_bits(), b.values()[0].to_bits());
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut opt = Adam::<f64>::new(0.1);
        let mut p = Tensor::zeros([2]);
        let g = Tensor::zeros([3]);
        let mut params = vec![("p".to_string(), &mut p)];
        assert!(opt.step(&mut params, &[g]).is_err());
    }

    // ── initialization ──────────────────────────────────────────────

    #[test]
    fn init_is_deterministic_and_masks_start_at_zero() {
        let data = tiny_dataset();
        let cfg = tiny_cfg();
        let fresh = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            init_model(&data, &cfg, Variant::Stgdl, &mut rng).unwrap()
        };
        let (a, b, c) = (fresh(5), fresh(5), fresh(6));
        for ((_, pa), (_, pb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.values(), pb.values());
        }
        // Masks are zero for every seed; block weights differ across seeds.
        for (name, p) in a.params() {
            if name.starts_with("mask_") {
                assert!(p.values().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        let a_w = &a.params()[2].1.values().to_vec();
        let c_w = &c.params()[2].1.values().to_vec();
        assert_ne!(a_w, c_w);
    }

    // ── loss ────────────────────────────────────────────────────────

    #[test]
    fn zero_model_on_zero_data_has_zero_residual_and_prediction() {
        let data = tiny_dataset();
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = init_model(&data, &cfg, Variant::Stgdl, &mut rng).unwrap();
        // Zero every block weight; masks are already zero.
        for (name, p) in model.params_mut() {
            if !name.starts_with("mask_") {
                for v in p.values_mut() {
                    *v = 0.0;
                }
            }
        }
        let x = Tensor::zeros([cfg.window, 8, 1]);
        let y = Tensor::zeros([8, 1]);
        let mut tape = Tape::new();
        let tracked = model.tracked(&mut tape);
        let (_, terms) =
            batch_loss(&mut tape, &tracked, &[&x], &[&y], &LossWeights::default()).unwrap();
        assert_eq!(terms.reconstruction, 0.0);
        assert_eq!(terms.prediction, 0.0);
        // Two zero masks keep half the base each, so their sum reassembles
        // the base exactly; the halves still overlap everywhere.
        assert_eq!(terms.completeness, 0.0);
        assert!(terms.independence > 0.0);
    }

    #[test]
    fn prediction_only_weights_reduce_joint_to_prediction() {
        let data = tiny_dataset();
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = init_model(&data, &cfg, Variant::Stgdl, &mut rng).unwrap();
        let windows = sliding_windows(&data.signals, cfg.window).unwrap();
        let weights = LossWeights {
            completeness: 0.0,
            independence: 0.0,
            reconstruction: 0.0,
            prediction: 1.0,
        };
        let mut tape = Tape::new();
        let tracked = model.tracked(&mut tape);
        let (_, terms) = batch_loss(
            &mut tape,
            &tracked,
            &[&windows.inputs[0], &windows.inputs[1]],
            &[&windows.targets[0], &windows.targets[1]],
            &weights,
        )
        .unwrap();
        assert_eq!(terms.joint.to_bits(), terms.prediction.to_bits());
        assert!(terms.independence > 0.0, "terms are still reported raw");
        assert!(terms.reconstruction > 0.0);
    }

    #[test]
    fn joint_loss_gradient_matches_finite_differences_through_masks() {
        let data = tiny_dataset();
        let n = data.meta.n_nodes;
        let spec = ModelSpec {
            n_nodes: n,
            features: 1,
            window: 4,
            hidden: 3,
            factors: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let blocks: Vec<StBlock<f64>> = (0..2).map(|_| StBlock::init(1, 3, 4, &mut rng)).collect();
        let windows = sliding_windows(&data.signals, 4).unwrap();
        let x0 = windows.inputs[0].clone();
        let y0 = windows.targets[0].clone();
        let x1 = windows.inputs[7].clone();
        let y1 = windows.targets[7].clone();
        let base = data.graph.adjacency().clone();

        let mut mask_seed = ChaCha8Rng::seed_from_u64(11);
        let masks: Vec<Tensor<f64>> = (0..2)
            .map(|_| {
                let vals = (0..n * n).map(|_| mask_seed.gen::<f64>() - 0.5).collect();
                Tensor::new([n, n], vals).unwrap()
            })
            .collect();

        let err = finite_diff_check(
            |tape, ps| {
                let ms = MaskSet::from_parts(base.clone(), ps.to_vec())?;
                let fm = FactorModel::new(spec, blocks.clone(), AdjacencySource::Learned(ms))?;
                let model = TrainedModel::Stgdl(fm);
                let (joint, _) = batch_loss(
                    tape,
                    &model,
                    &[&x0, &x1],
                    &[&y0, &y1],
                    &LossWeights::default(),
                )?;
                Ok(joint)
            },
            &masks,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn non_finite_weights_surface_as_errors() {
        let data = tiny_dataset();
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = init_model(&data, &cfg, Variant::Monolithic, &mut rng).unwrap();
        for (_, p) in model.params_mut() {
            p.values_mut()[0] = f64::INFINITY;
        }
        let x = Tensor::filled([cfg.window, 8, 1], 1.0);
        let y = Tensor::zeros([8, 1]);
        let mut tape = Tape::new();
        let tracked = model.tracked(&mut tape);
        let res = batch_loss(&mut tape, &tracked, &[&x], &[&y], &LossWeights::default());
        assert!(res.is_err());
        let wrapped = as_divergence(res.unwrap_err(), 4);
        assert!(matches!(wrapped, Error::Diverged { epoch: 4, .. }));
    }

    // ── training loop ───────────────────────────────────────────────

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let data = tiny_dataset();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 3,
            ..tiny_cfg()
        };
        let out = train(&data, &cfg, Variant::Stgdl).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fresh = init_model(&data, &cfg, Variant::Stgdl, &mut rng).unwrap();
        for ((_, trained), (_, init)) in out.model.params().iter().zip(fresh.params().iter()) {
            for (a, b) in trained.values().iter().zip(init.values()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(out.history.len(), 3);
        // Epoch loss means move with the reshuffled ragged batches, but the
        // frozen model's validation MAE cannot.
        for r in &out.history {
            assert_eq!(r.val_mae, out.history[0].val_mae);
        }
    }

    #[test]
    fn early_stopping_fires_after_exactly_patience_epochs() {
        let data = tiny_dataset();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 50,
            patience: 3,
            ..tiny_cfg()
        };
        // Frozen parameters give a constant validation MAE: epoch 1
        // improves on infinity, epochs 2-4 do not.
        let out = train(&data, &cfg, Variant::Ted).unwrap();
        assert_eq!(out.history.len(), 4);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn prediction_loss_decreases_on_synthetic_data() {
        let data = tiny_dataset();
        let cfg = TrainConfig {
            max_epochs: 8,
            ..tiny_cfg()
        };
        let out = train(&data, &cfg, Variant::Stgdl).unwrap();
        let first = out.history.first().unwrap().prediction;
        let last = out.history.last().unwrap().prediction;
        assert!(last < first, "prediction loss {first} -> {last}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = tiny_dataset();
        let cfg = tiny_cfg();
        let a = train(&data, &cfg, Variant::Stgdl).unwrap();
        let b = train(&data, &cfg, Variant::Stgdl).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.joint.to_bits(), rb.joint.to_bits());
            assert_eq!(ra.val_mae.to_bits(), rb.val_mae.to_bits());
        }
        for ((_, pa), (_, pb)) in a.model.params().iter().zip(b.model.params().iter()) {
            for (x, y) in pa.values().iter().zip(pb.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn best_snapshot_is_no_worse_than_any_epoch() {
        let data = tiny_dataset();
        let cfg = TrainConfig {
            max_epochs: 6,
            ..tiny_cfg()
        };
        let out = train(&data, &cfg, Variant::Monolithic).unwrap();
        let min_val = out
            .history
            .iter()
            .map(|r| r.val_mae)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_mae, min_val);
        assert!(out.best_val_mae <= out.history.last().unwrap().val_mae);
    }

    #[test]
    fn all_variants_train_and_checkpoint() {
        let data = tiny_dataset();
        let cfg = TrainConfig {
            max_epochs: 2,
            ..tiny_cfg()
        };
        for variant in Variant::ALL {
            let out = train(&data, &cfg, variant).unwrap();
            assert_eq!(out.model.variant_name(), variant.as_str());
            let dir = std::env::temp_dir().join("train_variant_ckpt");
            fs::create_dir_all(&dir).unwrap();
            let path = dir.join(format!("{variant}.json"));
            out.model.save(&path).unwrap();
            let back = TrainedModel::<f64>::load(&path).unwrap();
            assert_eq!(back.variant_name(), variant.as_str());
        }
    }

    #[test]
    fn history_csv_has_one_row_per_epoch() {
        let rec = EpochRecord {
            epoch: 1,
            completeness: 0.5,
            independence: 0.25,
            reconstruction: 1.5,
            prediction: 2.5,
            joint: 4.75,
            val_mae: 0.9,
        };
        let text = history_csv(&[rec]);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,loss_completeness,loss_independence,loss_reconstruction,loss_prediction,loss_joint,val_mae"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("1,"));
        assert_eq!(row.split(',').count(), 7);
    }

    #[test]
    fn config_validation_and_variant_parsing() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            loss_weights: LossWeights {
                prediction: f64::NAN,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());

        assert_eq!("stgdl".parse::<Variant>().unwrap(), Variant::Stgdl);
        assert_eq!("ted".parse::<Variant>().unwrap(), Variant::Ted);
        assert!("other".parse::<Variant>().is_err());
        assert_eq!(Variant::Monolithic.to_string(), "monolithic");
    }
}
