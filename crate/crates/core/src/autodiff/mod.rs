//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod kernels;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_grad, max_rel_error};
pub use optim::{sgd_momentum_step, OptimState, SgdConfig};
pub use tape::{BatchStats, Gradients, NormStats, Tape, Var};
pub use tensor::{Init, Tensor};
