//! Scalar losses recorded on a tape.
//!
//! Bias logits are laid out `[n, channels, levels, grid, grid]`; every loss on
//! them averages over the `n × channels × grid × grid` positions.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

const LEVEL_AXIS: usize = 2;

/// Mean cross-entropy of `[n, classes]` logits.
pub fn classification_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let logp = tape.log_softmax(logits)?;
    tape.nll(logp, 1, labels)
}

/// Mean cross-entropy of bias logits against `[n, channels, grid, grid]` levels.
pub fn bias_loss(tape: &mut Tape, bias_logits: Var, levels: &[usize]) -> Result<Var> {
    check_bias_logits(tape, bias_logits)?;
    let logp = tape.log_softmax_axis(bias_logits, LEVEL_AXIS)?;
    tape.nll(logp, LEVEL_AXIS, levels)
}

/// Mean over positions of `Σ q log q`, `q = softmax` over levels. Lies in
/// `[-ln L, 0]`. Callers bind the bias head as constants so that only the
/// features receive this gradient.
pub fn negative_conditional_entropy(tape: &mut Tape, bias_logits: Var) -> Result<Var> {
    let positions = check_bias_logits(tape, bias_logits)?;
    let logq = tape.log_softmax_axis(bias_logits, LEVEL_AXIS)?;
    let q = tape.exp(logq)?;
    let plogp = tape.mul(q, logq)?;
    let total = tape.sum(plogp)?;
    tape.scale(total, 1.0 / positions as f64)
}

/// Mean over positions of `-(1/L) Σ log q`: cross-entropy against the uniform
/// distribution, at least `ln L`.
pub fn confusion_loss(tape: &mut Tape, bias_logits: Var) -> Result<Var> {
    let positions = check_bias_logits(tape, bias_logits)?;
    let levels = tape.value(bias_logits).shape()[LEVEL_AXIS];
    let logq = tape.log_softmax_axis(bias_logits, LEVEL_AXIS)?;
    let total = tape.sum(logq)?;
    tape.scale(total, -1.0 / (positions * levels) as f64)
}

/// Number of positions, after checking the bias logits are 5-d.
fn check_bias_logits(tape: &Tape, x: Var) -> Result<usize> {
    let shape = tape.value(x).shape();
    if shape.len() != 5 {
        return Err(Error::ShapeMismatch {
            op: "bias logits",
            left: shape.to_vec(),
            right: vec![0, 0, 0, 0, 0],
        });
    }
    Ok(shape[0] * shape[1] * shape[3] * shape[4])
}

/// Index of the largest value in each row of `[rows, k]` data; ties go to the
/// lowest index.
pub fn argmax_rows(data: &[f64], k: usize) -> Vec<usize> {
    data.chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best })
                .0
        })
        .collect()
}

/// Argmax over the level axis of `[n, c, levels, g, g]` logits, returned in
/// `[n, c, g, g]` order.
pub fn argmax_levels(data: &[f64], shape: &[usize]) -> Vec<usize> {
    let [n, c, levels, gh, gw] = shape[..] else {
        panic!("bias logits must be 5-d, got {shape:?}");
    };
    let inner = gh * gw;
    let mut out = Vec::with_capacity(n * c * inner);
    for o in 0..n * c {
        for pos in 0..inner {
            let mut best = 0;
            for l in 1..levels {
                if data[(o * levels + l) * inner + pos] > data[(o * levels + best) * inner + pos] {
                    best = l;
                }
            }
            out.push(best);
        }
    }
    out
}
