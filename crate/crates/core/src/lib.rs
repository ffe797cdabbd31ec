//! Multi-factor spatio-temporal prediction on graphs.
//!
//! A spatio-temporal signal is often a superposition of several latent
//! factors, each living on its own subgraph and each easier to predict than
//! the mixture. This crate learns such a decomposition end to end:
//!
//! * [`autodiff`] — dense tensors and a reverse-mode tape.
//! * [`graph`] — graph structures, DTW and Gaussian-kernel adjacency
//!   builders, and a degree-hash decomposition baseline.
//! * [`decomp`] — learnable edge masks that split a graph into overlapping
//!   soft subgraphs, with completeness and independence regularizers.
//! * [`model`] — spatio-temporal blocks stacked with dual residuals:
//!   each block subtracts what it explained and adds its forecast.
//! * [`theory`] — entropy, predictability, and error lower bounds that
//!   quantify why decomposed prediction can beat monolithic prediction.
//! * [`data`] — synthetic multi-factor datasets, windowing, splits, and a
//!   plain-file serialization format.
//! * [`training`] — joint loss, Adam, and the training loop.
//! * [`eval`] — metrics and the multi-seed experiment harness.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the 64-bit instantiation used by the CLI and the file
//! formats.

pub mod autodiff;
pub(crate) mod csvio;
pub mod data;
pub mod decomp;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod scalar;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// 64-bit tensor, the type the CLI works in.
pub type Tensor64 = autodiff::Tensor<f64>;
/// 64-bit differentiation tape.
pub type Tape64 = autodiff::Tape<f64>;
/// 64-bit graph structure.
pub type Graph64 = graph::GraphStructure<f64>;
/// 64-bit decomposition into edge parts.
pub type Decomposition64 = graph::Decomposition<f64>;
/// 64-bit learnable mask set.
pub type MaskSet64 = decomp::MaskSet<f64>;
/// 64-bit factor model.
pub type FactorModel64 = model::FactorModel<f64>;
/// 64-bit trained model of any variant.
pub type TrainedModel64 = model::TrainedModel<f64>;
/// 64-bit dataset.
pub type Dataset64 = data::Dataset<f64>;
/// 64-bit training outcome.
pub type TrainOutcome64 = training::TrainOutcome<f64>;
