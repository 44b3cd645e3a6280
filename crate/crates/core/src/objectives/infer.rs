use super::losses::{argmax_levels, argmax_rows};
use crate::autodiff::{Tape, Tensor};
use crate::datagen::BiasedDataset;
use crate::error::{Error, Result};
use crate::layers::{forward_f, forward_g, forward_h, Binding, Mode, ParamSet, Subnet};

use super::step::Batch;

/// Images per forward pass during inference. Eval mode is per-sample, so the
/// chunking never changes results.
const CHUNK: usize = 100;

/// Eval-mode predictions over a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Digit prediction per image.
    pub labels: Vec<usize>,
    /// Level prediction per bias position, `[n, 3, 7, 7]` order.
    pub bias: Vec<usize>,
}

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(CHUNK).map(move |s| (s..(s + CHUNK).min(n)).collect())
}

pub fn predict(params: &ParamSet, ds: &BiasedDataset) -> Result<Predictions> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = Predictions {
        labels: Vec::with_capacity(ds.len()),
        bias: Vec::with_capacity(ds.bias_labels().len()),
    };
    for idx in chunks(ds.len()) {
        let batch = Batch::from_dataset(ds, &idx)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.images);
        let bf = Binding::new(&mut tape, params, Subnet::F, false);
        let bg = Binding::new(&mut tape, params, Subnet::G, false);
        let bh = Binding::new(&mut tape, params, Subnet::H, false);
        let f = forward_f(&mut tape, params, &bf, x, Mode::Eval)?;
        let g = forward_g(&mut tape, params, &bg, f.value, Mode::Eval)?;
        let h = forward_h(&mut tape, params, &bh, f.value, Mode::Eval)?;
        let logits = tape.value(g.value);
        out.labels.extend(argmax_rows(logits.data(), logits.shape()[1]));
        let hv = tape.value(h.value);
        out.bias.extend(argmax_levels(hv.data(), hv.shape()));
    }
    Ok(out)
}

/// Eval-mode output of `f` for every image, `[n, c, h, w]`.
pub fn extract_features(params: &ParamSet, ds: &BiasedDataset) -> Result<Tensor> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut data = Vec::new();
    let mut shape = Vec::new();
    for idx in chunks(ds.len()) {
        let batch = Batch::from_dataset(ds, &idx)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.images);
        let bf = Binding::new(&mut tape, params, Subnet::F, false);
        let f = forward_f(&mut tape, params, &bf, x, Mode::Eval)?;
        let v = tape.value(f.value);
        shape = v.shape().to_vec();
        data.extend_from_slice(v.data());
    }
    shape[0] = ds.len();
    Tensor::from_vec(&shape, data)
}
