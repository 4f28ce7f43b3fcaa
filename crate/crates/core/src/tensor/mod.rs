//! Dense matrices, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod matrix;
pub mod nn;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use matrix::{argmax, gemm, Matrix};
pub use nn::{BatchNorm, Linear, Params};
pub use tape::{sample_gumbel, BatchStats, Gradients, Tape, Var};
pub(crate) use tape::log_sum_exp;
