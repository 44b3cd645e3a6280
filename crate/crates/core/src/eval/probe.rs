//! Bias-leakage probe: a freshly initialised bias head trained on frozen
//! features. Its held-out accuracy measures how much colour information the
//! features still carry.

use super::metrics::{accuracy, balanced_accuracy};
use crate::autodiff::{OptimState, SgdConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::layers::{forward_h, ArchSpec, Binding, Mode, ParamSet, Subnet};
use crate::objectives::{argmax_levels, bias_loss};
use crate::seed;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
    /// Leading fraction of the samples used for fitting; the rest is held out.
    pub train_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 10,
            batch_size: 32,
            sgd: SgdConfig::default(),
            seed: 7,
            train_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    /// Per-position held-out accuracy.
    pub accuracy: f64,
    /// Held-out per-position recall averaged over the levels that occur.
    pub balanced_accuracy: f64,
    /// Largest share of any single level among held-out positions.
    pub majority_rate: f64,
    pub train_samples: usize,
    pub test_samples: usize,
}

fn rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let per: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::from_vec(&shape, data)
}

fn levels(labels: &[u8], idx: &[usize], per: usize) -> Vec<usize> {
    idx.iter()
        .flat_map(|&i| labels[i * per..(i + 1) * per].iter().map(|l| *l as usize))
        .collect()
}

/// Fits a fresh `h` of `arch` on the leading part of `features` (`[n, c, h, w]`,
/// `f`'s output) against `bias_labels` (`[n, 3, g, g]` levels) and scores it on
/// the rest.
pub fn bias_leakage_probe(
    features: &Tensor,
    bias_labels: &[u8],
    arch: &ArchSpec,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let n = features.shape().first().copied().unwrap_or(0);
    let per = bias_labels.len().checked_div(n).unwrap_or(0);
    if n < 4 {
        return Err(Error::EmptyDataset);
    }
    let grid = arch.bias_grid();
    if per != arch.bias_channels * grid * grid || per * n != bias_labels.len() {
        return Err(Error::ShapeMismatch {
            op: "probe bias labels",
            left: vec![bias_labels.len()],
            right: vec![n, arch.bias_channels, grid, grid],
        });
    }
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(2, n - 1);

    let mut params = ParamSet::init(arch, seed::derive_named(cfg.seed, "probe"))?;
    let mut opt = OptimState::new(
        cfg.sgd,
        params.iter().filter(|(k, _)| Subnet::of(k) == Some(Subnet::H)),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_named(cfg.seed, "probe-shuffle"));
    let mut order: Vec<usize> = (0..n_train).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size.max(2)).filter(|c| c.len() >= 2) {
            let mut tape = Tape::new();
            let x = tape.constant(rows(features, idx)?);
            let bh = Binding::new(&mut tape, &params, Subnet::H, true);
            let out = forward_h(&mut tape, &params, &bh, x, Mode::Train)?;
            let loss = bias_loss(&mut tape, out.value, &levels(bias_labels, idx, per))?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("probe loss {value}")));
            }
            let grads = tape.backward(loss)?;
            for (name, var) in bh.iter() {
                if let Some(g) = grads.get(*var) {
                    opt.step(name, params.get_mut(name)?, g)?;
                }
            }
            params.apply_norm_updates(&out.norm_updates)?;
        }
    }

    let held: Vec<usize> = (n_train..n).collect();
    let truth = levels(bias_labels, &held, per);
    let mut preds = Vec::with_capacity(truth.len());
    for idx in held.chunks(100) {
        let mut tape = Tape::new();
        let x = tape.constant(rows(features, idx)?);
        let bh = Binding::new(&mut tape, &params, Subnet::H, false);
        let out = forward_h(&mut tape, &params, &bh, x, Mode::Eval)?;
        let v = tape.value(out.value);
        preds.extend(argmax_levels(v.data(), v.shape()));
    }
    let mut counts = vec![0usize; arch.levels];
    truth.iter().for_each(|l| counts[*l] += 1);
    Ok(ProbeResult {
        accuracy: accuracy(&preds, &truth)?,
        balanced_accuracy: balanced_accuracy(&preds, &truth, arch.levels)?,
        majority_rate: *counts.iter().max().unwrap_or(&0) as f64 / truth.len() as f64,
        train_samples: n_train,
        test_samples: n - n_train,
    })
}
