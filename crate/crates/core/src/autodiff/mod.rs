//! Minimal reverse-mode automatic differentiation over dense arrays.

mod array;
pub mod gradcheck;
pub mod optim;
mod params;
mod tape;

pub use array::{Array, Real};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use optim::{adamw_step, OptimizerState};
pub use params::{Bound, ParamSet};
pub use tape::{gelu, softmax_rows_array, Gradients, Tape, Var, LAYER_NORM_EPS, NORM_EPS};

#[cfg(test)]
mod tests;
