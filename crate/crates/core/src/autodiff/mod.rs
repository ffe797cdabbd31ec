//! Minimal reverse-mode automatic differentiation.
//!
//! Three pieces: dense row-major [`Tensor`]s, a [`Tape`] that records
//! operations and replays them backwards for gradients, and a
//! finite-difference checker used to validate every gradient rule.

mod check;
mod tape;
mod tensor;

pub use check::finite_diff_check;
pub use tape::{ElementwiseKind, Gradients, ReduceKind, Tape};
pub use tensor::Tensor;
