//! Prediction metrics and the comparative experiment harness.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{
    generate_synthetic, sliding_windows, split_samples, Dataset, DatasetMeta, SyntheticConfig,
};
use crate::decomp::HardenReport;
use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use crate::theory::{bounds_report, TheoryReport};
use crate::training::{train_on_splits, EpochRecord, TrainConfig, Variant};

/// Truth entries with magnitude at or below this are excluded from the
/// percentage error, since dividing by them is meaningless.
pub const MAPE_GUARD: f64 = 1e-8;

/// Aggregate prediction errors over a set of frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mae: f64,
    pub rmse: f64,
    /// Absent when every truth entry is within [`MAPE_GUARD`] of zero.
    pub mape_percent: Option<f64>,
}

/// MAE, RMSE, and guarded MAPE over aligned prediction/truth frames. All
/// entries of all frames pool into one mean, so the result is invariant to
/// how the values are grouped into frames.
pub fn metrics<S: Scalar>(pred: &[Tensor<S>], truth: &[Tensor<S>]) -> Result<MetricSet> {
    if pred.len() != truth.len() {
        return Err(Error::shape(
            "metrics",
            format!("{} predictions vs {} truths", pred.len(), truth.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::domain("metrics", "no frames"));
    }
    let mut n = 0usize;
    let mut abs_sum = 0.0f64;
    let mut sq_sum = 0.0f64;
    let mut pct_sum = 0.0f64;
    let mut pct_n = 0usize;
    for (idx, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.shape() != t.shape() {
            return Err(Error::shape(
                "metrics",
                format!(
                    "frame {idx}: prediction {:?} vs truth {:?}",
                    p.shape(),
                    t.shape()
                ),
            ));
        }
        for (&pv, &tv) in p.values().iter().zip(t.values()) {
            let (pv, tv) = (pv.into_f64(), tv.into_f64());
            let d = (pv - tv).abs();
            abs_sum += d;
            sq_sum += d * d;
            if tv.abs() > MAPE_GUARD {
                pct_sum += d / tv.abs();
                pct_n += 1;
            }
            n += 1;
        }
    }
    Ok(MetricSet {
        mae: abs_sum / n as f64,
        rmse: (sq_sum / n as f64).sqrt(),
        mape_percent: (pct_n > 0).then(|| pct_sum / pct_n as f64 * 100.0),
    })
}

/// Relative gain of `enhanced` over `base`, in percent per metric;
/// positive means `enhanced` is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub mae_percent: f64,
    pub rmse_percent: f64,
    /// Absent when either side has no MAPE.
    pub mape_percent: Option<f64>,
}

/// `(base - enhanced) / base * 100` per metric. Errors when a compared
/// base metric is zero — there is no meaningful relative gain over a
/// perfect baseline.
pub fn improvement(base: &MetricSet, enhanced: &MetricSet) -> Result<Improvement> {
    let rel = |b: f64, e: f64, name: &str| -> Result<f64> {
        if b == 0.0 {
            return Err(Error::domain("improvement", format!("base {name} is zero")));
        }
        Ok((b - e) / b * 100.0)
    };
    let mape_percent = match (base.mape_percent, enhanced.mape_percent) {
        (Some(b), Some(e)) => Some(rel(b, e, "mape")?),
        _ => None,
    };
    Ok(Improvement {
        mae_percent: rel(base.mae, enhanced.mae, "mae")?,
        rmse_percent: rel(base.rmse, enhanced.rmse, "rmse")?,
        mape_percent,
    })
}

// ── experiment harness ──────────────────────────────────────────────────

/// Where an experiment's dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    /// Generate a synthetic dataset in memory.
    Generate { config: SyntheticConfig },
    /// Load a dataset directory written by [`Dataset::save`].
    Load { path: PathBuf },
}

/// A full comparative experiment: one dataset, a grid of variants times
/// seeds, shared training hyperparameters, and the information-theoretic
/// bounds alongside. Loadable from JSON; omitted fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Shared hyperparameters; its `seed` is replaced by each grid seed.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Quantization states for the bounds report.
    pub theory_states: usize,
    /// Keep-ratio threshold used to harden learned masks for diagnostics.
    pub harden_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Generate {
                config: SyntheticConfig::default(),
            },
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3],
            variants: Variant::ALL.to_vec(),
            theory_states: 8,
            harden_threshold: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config(
                "experiment needs at least one variant".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.seeds.iter().all(|s| seen.insert(*s)) {
            return Err(Error::Config("duplicate seeds in experiment".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.variants.iter().all(|v| seen.insert(*v)) {
            return Err(Error::Config("duplicate variants in experiment".into()));
        }
        if self.theory_states < 2 {
            return Err(Error::Config("theory_states must be at least 2".into()));
        }
        if !(self.harden_threshold > 0.0 && self.harden_threshold < 1.0) {
            return Err(Error::Config(format!(
                "harden_threshold must lie in (0, 1), got {}",
                self.harden_threshold
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Materializes the dataset a source points at.
pub fn resolve_dataset<S: Scalar>(source: &DatasetSource) -> Result<Dataset<S>> {
    match source {
        DatasetSource::Generate { config } => generate_synthetic(config),
        DatasetSource::Load { path } => Dataset::load(path),
    }
}

/// What one (variant, seed) training run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunOutcome {
    Success {
        /// Metrics on the held-out test split.
        test: MetricSet,
        best_epoch: usize,
        best_val_mae: f64,
        history: Vec<EpochRecord>,
        /// Hardened-mask diagnostics; present only for learned masks.
        decomposition: Option<HardenReport>,
    },
    /// The run hit a non-finite loss; recorded, not fatal to the grid.
    Diverged { epoch: usize, term: String },
}

/// One grid cell: a variant trained with one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: RunOutcome,
}

impl RunRecord {
    pub fn test_metrics(&self) -> Option<&MetricSet> {
        match &self.outcome {
            RunOutcome::Success { test, .. } => Some(test),
            RunOutcome::Diverged { .. } => None,
        }
    }
}

/// Per-variant aggregate over seeds: mean and population standard
/// deviation of the test metrics across the runs that finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub succeeded: usize,
    pub diverged: usize,
    /// Absent when every seed diverged.
    pub mean: Option<MetricSet>,
    pub std_dev: Option<MetricSet>,
}

/// Mean gain of one variant's mean metrics over another's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairImprovement {
    pub enhanced: Variant,
    pub baseline: Variant,
    pub mean_improvement: Improvement,
}

/// Everything a comparative experiment produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: DatasetMeta,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<VariantSummary>,
    /// Mean-level gains of the learned decomposition over each baseline
    /// present in the grid.
    pub improvements: Vec<PairImprovement>,
    /// Bounds on the dataset's factor and mixture series; absent when the
    /// dataset carries no ground-truth factors.
    pub theory: Option<TheoryReport>,
}

fn mean_and_std(cells: &[MetricSet]) -> (MetricSet, MetricSet) {
    let n = cells.len() as f64;
    let mean_of = |f: &dyn Fn(&MetricSet) -> f64| cells.iter().map(f).sum::<f64>() / n;
    let std_of = |f: &dyn Fn(&MetricSet) -> f64, mu: f64| {
        (cells.iter().map(|c| (f(c) - mu).powi(2)).sum::<f64>() / n).sqrt()
    };
    let mae = mean_of(&|c| c.mae);
    let rmse = mean_of(&|c| c.rmse);
    let mapes: Option<Vec<f64>> = cells.iter().map(|c| c.mape_percent).collect();
    let (mape_mean, mape_std) = match mapes {
        Some(v) => {
            let mu = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
            (Some(mu), Some(sd))
        }
        None => (None, None),
    };
    (
        MetricSet {
            mae,
            rmse,
            mape_percent: mape_mean,
        },
        MetricSet {
            mae: std_of(&|c| c.mae, mae),
            rmse: std_of(&|c| c.rmse, rmse),
            mape_percent: mape_std,
        },
    )
}

fn summarize(variants: &[Variant], runs: &[RunRecord]) -> Vec<VariantSummary> {
    variants
        .iter()
        .map(|&variant| {
            let cells: Vec<MetricSet> = runs
                .iter()
                .filter(|r| r.variant == variant)
                .filter_map(|r| r.test_metrics().copied())
                .collect();
            let total = runs.iter().filter(|r| r.variant == variant).count();
            let (mean, std_dev) = if cells.is_empty() {
                (None, None)
            } else {
                let (m, sd) = mean_and_std(&cells);
                (Some(m), Some(sd))
            };
            VariantSummary {
                variant,
                succeeded: cells.len(),
                diverged: total - cells.len(),
                mean,
                std_dev,
            }
        })
        .collect()
}

fn pair_improvements(summaries: &[VariantSummary]) -> Result<Vec<PairImprovement>> {
    let mean_of = |v: Variant| {
        summaries
            .iter()
            .find(|s| s.variant == v)
            .and_then(|s| s.mean)
    };
    let Some(enhanced_mean) = mean_of(Variant::Stgdl) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for baseline in [Variant::Monolithic, Variant::Ted] {
        if let Some(base_mean) = mean_of(baseline) {
            out.push(PairImprovement {
                enhanced: Variant::Stgdl,
                baseline,
                mean_improvement: improvement(&base_mean, &enhanced_mean)?,
            });
        }
    }
    Ok(out)
}

/// Runs the full grid on a resolved dataset: one chronological split
/// shared by every run, each cell trained independently with its own
/// seed. Divergences are recorded in their cells; any other error aborts.
pub fn run_experiment_on<S: Scalar>(
    dataset: &Dataset<S>,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let windows = sliding_windows(&dataset.signals, cfg.train.window)?;
    let (train_set, val_set, test_set) = split_samples(&windows)?;

    let mut runs = Vec::with_capacity(cfg.variants.len() * cfg.seeds.len());
    for &variant in &cfg.variants {
        for &seed in &cfg.seeds {
            let mut tc = cfg.train.clone();
            tc.seed = seed;
            let outcome = match train_on_splits(dataset, &train_set, &val_set, &tc, variant) {
                Ok(out) => {
                    let preds: Result<Vec<Tensor<S>>> = test_set
                        .inputs
                        .iter()
                        .map(|x| out.model.predict(x))
                        .collect();
                    match preds {
                        Ok(preds) => {
                            let test = metrics(&preds, &test_set.targets)?;
                            let decomposition = out
                                .model
                                .mask_set()
                                .map(|ms| ms.hardening_report(s::<S>(cfg.harden_threshold)))
                                .transpose()?;
                            RunOutcome::Success {
                                test,
                                best_epoch: out.best_epoch,
                                best_val_mae: out.best_val_mae,
                                history: out.history,
                                decomposition,
                            }
                        }
                        Err(Error::NonFinite { op, .. }) => RunOutcome::Diverged {
                            epoch: out.best_epoch,
                            term: op.to_string(),
                        },
                        Err(e) => return Err(e),
                    }
                }
                Err(Error::Diverged { epoch, term }) => RunOutcome::Diverged { epoch, term },
                Err(e) => return Err(e),
            };
            runs.push(RunRecord {
                variant,
                seed,
                outcome,
            });
        }
    }

    let summaries = summarize(&cfg.variants, &runs);
    let improvements = pair_improvements(&summaries)?;
    let theory = dataset
        .factor_mean_series()
        .map(|series| bounds_report(&series, cfg.theory_states))
        .transpose()?;

    Ok(ExperimentReport {
        dataset: dataset.meta.clone(),
        config: cfg.clone(),
        runs,
        summaries,
        improvements,
        theory,
    })
}

/// [`run_experiment_on`] after resolving the configured dataset source.
pub fn run_experiment<S: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dataset = resolve_dataset::<S>(&cfg.dataset)?;
    run_experiment_on(&dataset, cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "-".to_string(),
    }
}

impl ExperimentReport {
    pub fn summary_for(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }

    /// Per-run table: `variant,seed,status,mae,rmse,mape_percent,best_epoch,epochs_run`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("variant,seed,status,mae,rmse,mape_percent,best_epoch,epochs_run\n");
        for r in &self.runs {
            match &r.outcome {
                RunOutcome::Success {
                    test,
                    best_epoch,
                    history,
                    ..
                } => {
                    out.push_str(&format!(
                        "{},{},success,{:.16e},{:.16e},{},{},{}\n",
                        r.variant,
                        r.seed,
                        test.mae,
                        test.rmse,
                        test.mape_percent
                            .map(|v| format!("{v:.16e}"))
                            .unwrap_or_default(),
                        best_epoch,
                        history.len(),
                    ));
                }
                RunOutcome::Diverged { epoch, term } => {
                    out.push_str(&format!(
                        "{},{},diverged at epoch {} in {},,,,\n",
                        r.variant, r.seed, epoch, term
                    ));
                }
            }
        }
        out
    }

    /// Human-readable summary of the whole experiment.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "experiment on {:?}: {} nodes, {} steps, {} features\n",
            self.dataset.name, self.dataset.n_nodes, self.dataset.tau, self.dataset.features
        ));
        out.push_str(&format!(
            "grid: variants [{}] x seeds {:?}; window {}, hidden {}, factors {}, lr {}, batch {}\n\n",
            self.config
                .variants
                .iter()
                .map(|v| v.as_str())
                .collect::<Vec<_>>()
                .join(", "),
            self.config.seeds,
            self.config.train.window,
            self.config.train.hidden,
            self.config.train.factors,
            self.config.train.learning_rate,
            self.config.train.batch_size,
        ));

        out.push_str("variant      ok  mean MAE   std MAE    mean RMSE  std RMSE   mean MAPE%\n");
        for s in &self.summaries {
            let (mean, sd) = (s.mean, s.std_dev);
            out.push_str(&format!(
                "{:<11} {:>2}/{:<2} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
                s.variant.as_str(),
                s.succeeded,
                s.succeeded + s.diverged,
                fmt_opt(mean.map(|m| m.mae)),
                fmt_opt(sd.map(|m| m.mae)),
                fmt_opt(mean.map(|m| m.rmse)),
                fmt_opt(sd.map(|m| m.rmse)),
                fmt_opt(mean.and_then(|m| m.mape_percent)),
            ));
        }
        out.push('\n');

        for imp in &self.improvements {
            let i = &imp.mean_improvement;
            out.push_str(&format!(
                "{} vs {}: MAE {:+.2}%, RMSE {:+.2}%{}\n",
                imp.enhanced,
                imp.baseline,
                i.mae_percent,
                i.rmse_percent,
                i.mape_percent
                    .map(|v| format!(", MAPE {v:+.2}%"))
                    .unwrap_or_default(),
            ));
        }

        for r in &self.runs {
            if let RunOutcome::Success {
                decomposition: Some(d),
                ..
            } = &r.outcome
            {
                out.push_str(&format!(
                    "decomposition (seed {}): {} of {} base edges missed, {} overlap incidences, factor edges {:?}\n",
                    r.seed, d.missed_edges, d.base_edges, d.overlap_incidences, d.factor_edges
                ));
            }
        }

        if let Some(t) = &self.theory {
            out.push('\n');
            out.push_str(&format!(
                "bounds at M = {} states: decomposed error floor {:.6} vs mixture floor {:.6} ({})\n",
                t.states,
                t.decomposed_floor,
                t.mixture_floor,
                if t.decomposition_helps() {
                    "decomposition helps"
                } else {
                    "no advantage at this quantization"
                },
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("report serialization failed: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Writes `report.json`, `report.csv`, and `report.txt` into a
    /// directory, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let write = |name: &str, text: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
        };
        write("report.json", self.to_json()?)?;
        write("report.csv", self.to_csv())?;
        write("report.txt", self.to_text())
    }
}
