//! Network building blocks and the concrete `f`, `g`, `h` architectures.

mod arch;
mod forward;
mod io;
mod params;

pub use arch::{ArchSpec, ConvSpec};
pub use forward::{forward_f, forward_g, forward_h, Binding, Mode, Output};
pub use io::manifest_path;
pub use params::{NormUpdate, ParamSet, Subnet, BN_EPS, BN_MOMENTUM};

use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Identity on the forward pass; scales the backward gradient by `-scale`.
pub fn gradient_reversal(tape: &mut Tape, x: Var, scale: f64) -> Result<Var> {
    tape.grad_reverse(x, scale)
}
