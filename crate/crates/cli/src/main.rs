//! `stgdl` — generate multi-factor datasets, train and evaluate the
//! decomposed predictor and its baselines, print information-theoretic
//! bounds, run comparative experiments, and export learned decompositions.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! model-file error, 3 training divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stgdl_core::data::{sliding_windows, split_samples, SplitTag, SyntheticConfig};
use stgdl_core::error::{Error, Result};
use stgdl_core::eval::{metrics, run_experiment, ExperimentConfig};
use stgdl_core::theory::bounds_report;
use stgdl_core::training::{train, write_history, TrainConfig, Variant};
use stgdl_core::{Dataset64, Tensor64, TrainedModel64};

#[derive(Parser)]
#[command(
    name = "stgdl",
    version,
    about = "Multi-factor spatio-temporal prediction on graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Prints a line to stdout, ignoring a closed pipe (`stgdl ... | head`).
fn say(text: impl std::fmt::Display) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn parse_variant(text: &str) -> std::result::Result<Variant, String> {
    text.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(text: &str) -> std::result::Result<SplitTag, String> {
    match text {
        "full" => Ok(SplitTag::Full),
        "train" => Ok(SplitTag::Train),
        "validation" => Ok(SplitTag::Validation),
        "test" => Ok(SplitTag::Test),
        other => Err(format!(
            "unknown split {other:?}; expected full, train, validation, or test"
        )),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-factor dataset directory.
    Generate {
        /// Output directory for the dataset files.
        #[arg(long)]
        out: PathBuf,
        /// Number of graph nodes.
        #[arg(long, default_value_t = 24)]
        nodes: usize,
        /// Number of latent factors.
        #[arg(long, default_value_t = 3)]
        factors: usize,
        /// Number of time steps.
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        /// Features per node.
        #[arg(long, default_value_t = 1)]
        features: usize,
        /// Probability of each undirected edge.
        #[arg(long, default_value_t = 0.25)]
        edge_prob: f64,
        /// Standard deviation of the additive observation noise.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Generator seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train one model variant on a dataset directory.
    Train {
        /// Dataset directory written by `generate` (or hand-assembled).
        #[arg(long)]
        data: PathBuf,
        /// Number of factor subgraphs and blocks.
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Lookback window length.
        #[arg(long, default_value_t = 12)]
        window: usize,
        /// Hidden width of each block.
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        /// Adam learning rate.
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        /// Batch size.
        #[arg(long, default_value_t = 32)]
        batch: usize,
        /// Maximum number of epochs.
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        /// Non-improving validation epochs tolerated before stopping.
        #[arg(long, default_value_t = 10)]
        patience: usize,
        /// Training seed (initialization and batch shuffling).
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Model family: stgdl, monolithic, or ted.
        #[arg(long, value_parser = parse_variant, default_value = "stgdl")]
        variant: Variant,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-epoch loss history CSV to write.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split and print its metrics.
    Evaluate {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Which chronological split to score: full, train, validation, test.
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: SplitTag,
    },
    /// Print entropy, predictability, and error-floor bounds for a dataset.
    TheoryReport {
        /// Dataset directory with ground-truth factor signals.
        #[arg(long)]
        data: PathBuf,
        /// Number of quantization states.
        #[arg(long, default_value_t = 8)]
        states: usize,
        /// Also print each factor's bound alongside the mixture's.
        #[arg(long)]
        per_factor: bool,
        /// Optional CSV file to write the full report to.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a grid of variants and seeds and write a comparative report.
    Experiment {
        /// Experiment configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Directory for report.json, report.csv, and report.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Harden a trained decomposition and export its factor subgraphs.
    Decompose {
        /// Checkpoint file with learned masks.
        #[arg(long)]
        model: PathBuf,
        /// Keep-ratio threshold for hardening.
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Output directory for the factor adjacency files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            out,
            nodes,
            factors,
            steps,
            features,
            edge_prob,
            noise,
            seed,
        } => {
            let config = SyntheticConfig {
                n_nodes: nodes,
                factors,
                tau: steps,
                features,
                edge_prob,
                noise_std: noise,
                seed,
            };
            let dataset: Dataset64 = stgdl_core::data::generate_synthetic(&config)?;
            dataset.save(&out)?;
            say(format!(
                "wrote {} nodes x {} steps x {} features with {} factors to {}",
                nodes,
                steps,
                features,
                factors,
                out.display()
            ));
            Ok(())
        }
        Command::Train {
            data,
            k,
            window,
            hidden,
            lr,
            batch,
            epochs,
            patience,
            seed,
            variant,
            out,
            history,
        } => {
            let dataset = Dataset64::load(&data)?;
            let cfg = TrainConfig {
                learning_rate: lr,
                batch_size: batch,
                max_epochs: epochs,
                patience,
                factors: k,
                window,
                hidden,
                seed,
                ..TrainConfig::default()
            };
            let outcome = train(&dataset, &cfg, variant)?;
            outcome.model.save(&out)?;
            if let Some(path) = history {
                write_history(&path, &outcome.history)?;
            }
            say(format!(
                "trained {} for {} epochs; best epoch {} with validation MAE {:.6}; checkpoint {}",
                variant,
                outcome.history.len(),
                outcome.best_epoch,
                outcome.best_val_mae,
                out.display()
            ));
            Ok(())
        }
        Command::Evaluate { data, model, split } => {
            let dataset = Dataset64::load(&data)?;
            let model = TrainedModel64::load(&model)?;
            let windows = sliding_windows(&dataset.signals, model.spec().window)?;
            let samples = match split {
                SplitTag::Full => windows,
                tag => {
                    let (train_set, val_set, test_set) = split_samples(&windows)?;
                    match tag {
                        SplitTag::Train => train_set,
                        SplitTag::Validation => val_set,
                        _ => test_set,
                    }
                }
            };
            let preds: Result<Vec<Tensor64>> =
                samples.inputs.iter().map(|x| model.predict(x)).collect();
            let m = metrics(&preds?, &samples.targets)?;
            let text = serde_json::to_string_pretty(&m)
                .map_err(|e| Error::Config(format!("metric serialization failed: {e}")))?;
            say(&text);
            Ok(())
        }
        Command::TheoryReport {
            data,
            states,
            per_factor,
            out,
        } => {
            let dataset = Dataset64::load(&data)?;
            let series = dataset.factor_mean_series().ok_or_else(|| {
                Error::domain(
                    "theory-report",
                    "dataset carries no ground-truth factor signals",
                )
            })?;
            let report = bounds_report(&series, states)?;
            for (key, value) in report.key_values() {
                if per_factor || !key.starts_with("factor_") {
                    say(format!("{key} = {value}"));
                }
            }
            if let Some(path) = out {
                std::fs::write(&path, report.to_csv())
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            Ok(())
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_experiment::<f64>(&cfg)?;
            report.save(&out)?;
            say(report.to_text().trim_end());
            say(format!("report written to {}", out.display()));
            Ok(())
        }
        Command::Decompose { model, tau, out } => {
            let model = TrainedModel64::load(&model)?;
            let masks = model.mask_set().ok_or_else(|| {
                Error::domain(
                    "decompose",
                    format!(
                        "checkpoint holds a {} model without learned masks",
                        model.variant_name()
                    ),
                )
            })?;
            masks.export(tau, &out)?;
            let report = masks.hardening_report(tau)?;
            say(format!(
                "hardened {} factors at tau {}: {} of {} base edges missed, {} overlap incidences, factor edges {:?}",
                report.factor_edges.len(),
                tau,
                report.missed_edges,
                report.base_edges,
                report.overlap_incidences,
                report.factor_edges
            ));
            Ok(())
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Diverged { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
