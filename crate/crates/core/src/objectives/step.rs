use std::collections::BTreeMap;

use super::config::{LossWeights, Schedule, TrainConfig};
use super::losses::{
    argmax_levels, argmax_rows, bias_loss, classification_loss, confusion_loss,
    negative_conditional_entropy,
};
use crate::autodiff::{OptimState, Tape, Tensor, Var};
use crate::datagen::{BiasedDataset, IMAGE_LEN};
use crate::error::{Error, Result};
use crate::layers::{
    forward_f, forward_g, forward_h, gradient_reversal, Binding, Mode, NormUpdate, ParamSet, Subnet,
};

/// Images `[n, c, h, w]` with digit labels and flattened bias levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub bias_labels: Vec<usize>,
}

impl Batch {
    pub fn from_dataset(ds: &BiasedDataset, idx: &[usize]) -> Result<Batch> {
        let mut images = Vec::with_capacity(idx.len() * IMAGE_LEN);
        let mut labels = Vec::with_capacity(idx.len());
        let mut bias_labels = Vec::with_capacity(idx.len() * crate::datagen::BIAS_LEN);
        for &i in idx {
            images.extend(ds.image(i).iter().map(|v| *v as f64));
            labels.push(ds.labels()[i] as usize);
            bias_labels.extend(ds.bias_label(i).iter().map(|l| *l as usize));
        }
        let side = crate::datagen::IMAGE_SIDE;
        Ok(Batch {
            images: Tensor::from_vec(&[idx.len(), 3, side, side], images)?,
            labels,
            bias_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Values observed during one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepMetrics {
    pub classification_loss: f64,
    pub bias_loss: f64,
    /// Mean `Σ q log q` of the bias head, in `[-ln 8, 0]`.
    pub neg_entropy: f64,
    pub accuracy: f64,
    pub bias_accuracy: f64,
}

fn fraction_equal(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

/// Per-parameter gradients of one recorded objective plus what it observed.
#[derive(Debug)]
pub struct StepGradients {
    pub grads: BTreeMap<String, Tensor>,
    pub metrics: StepMetrics,
    pub norm_updates: Vec<NormUpdate>,
    pub total_loss: f64,
}

/// Which terms a recorded objective contains and how `h` is treated.
#[derive(Debug, Clone, Copy)]
struct Objective {
    classification: bool,
    entropy: f64,
    confusion: f64,
    /// Weight on the bias loss; its sign and routing depend on `route`.
    bias: f64,
    route: BiasRoute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BiasRoute {
    /// `h` trainable, `f` sees `-grl_scale` times the gradient.
    Reversal(f64),
    /// `h` trainable, features frozen.
    HeadOnly,
    /// `h` frozen, `f` receives the plain gradient of `weight * L_B`.
    FeaturesOnly,
}

fn collect(
    tape: &Tape,
    grads: &crate::autodiff::Gradients,
    bindings: &[&Binding],
    out: &mut BTreeMap<String, Tensor>,
) {
    for b in bindings {
        for (name, var) in b.iter() {
            if let Some(g) = grads.get(*var) {
                debug_assert!(tape.requires_grad(*var));
                out.insert(name.clone(), g.clone());
            }
        }
    }
}

fn record(params: &ParamSet, batch: &Batch, obj: Objective) -> Result<StepGradients> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.images.clone());
    let trains_features = obj.route != BiasRoute::HeadOnly;
    let bf = Binding::new(&mut tape, params, Subnet::F, trains_features);
    let f = forward_f(&mut tape, params, &bf, x, Mode::Train)?;
    let mut norm_updates = if trains_features {
        f.norm_updates
    } else {
        Vec::new()
    };
    let feat = if trains_features {
        f.value
    } else {
        tape.stop_gradient(f.value)?
    };

    let bg = Binding::new(&mut tape, params, Subnet::G, obj.classification);
    let g = forward_g(&mut tape, params, &bg, feat, Mode::Train)?;
    let lc = classification_loss(&mut tape, g.value, &batch.labels)?;
    if obj.classification {
        norm_updates.extend(g.norm_updates);
    }

    // h with constant parameters; its batch statistics are never kept
    let regularised = obj.entropy != 0.0 || obj.confusion != 0.0;
    let bh_frozen = Binding::new(&mut tape, params, Subnet::H, false);
    let h_in = if regularised || obj.route == BiasRoute::FeaturesOnly && obj.bias != 0.0 {
        feat
    } else {
        tape.stop_gradient(feat)?
    };
    let hc = forward_h(&mut tape, params, &bh_frozen, h_in, Mode::Train)?;
    let negent = negative_conditional_entropy(&mut tape, hc.value)?;
    let lb_frozen = bias_loss(&mut tape, hc.value, &batch.bias_labels)?;

    let mut total = if obj.classification { Some(lc) } else { None };
    let mut add = |tape: &mut Tape, term: Var, w: f64| -> Result<()> {
        let t = tape.scale(term, w)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, t)?,
            None => t,
        });
        Ok(())
    };
    if obj.entropy != 0.0 {
        add(&mut tape, negent, obj.entropy)?;
    }
    if obj.confusion != 0.0 {
        let conf = confusion_loss(&mut tape, hc.value)?;
        add(&mut tape, conf, obj.confusion)?;
    }
    let mut bh_trained = None;
    if obj.bias != 0.0 {
        match obj.route {
            BiasRoute::FeaturesOnly => add(&mut tape, lb_frozen, obj.bias)?,
            BiasRoute::Reversal(_) | BiasRoute::HeadOnly => {
                let bh = Binding::new(&mut tape, params, Subnet::H, true);
                let input = match obj.route {
                    BiasRoute::Reversal(scale) => gradient_reversal(&mut tape, feat, scale)?,
                    _ => feat,
                };
                let ht = forward_h(&mut tape, params, &bh, input, Mode::Train)?;
                norm_updates.extend(ht.norm_updates);
                let lb = bias_loss(&mut tape, ht.value, &batch.bias_labels)?;
                add(&mut tape, lb, obj.bias)?;
                bh_trained = Some(bh);
            }
        }
    }
    let total = total.ok_or_else(|| Error::Config("objective has no terms".into()))?;

    let logits = tape.value(g.value);
    let preds = argmax_rows(logits.data(), logits.shape()[1]);
    let hv = tape.value(hc.value);
    let bias_preds = argmax_levels(hv.data(), hv.shape());
    let metrics = StepMetrics {
        classification_loss: tape.value(lc).item(),
        bias_loss: tape.value(lb_frozen).item(),
        neg_entropy: tape.value(negent).item(),
        accuracy: fraction_equal(&preds, &batch.labels),
        bias_accuracy: fraction_equal(&bias_preds, &batch.bias_labels),
    };
    let total_loss = tape.value(total).item();
    if !total_loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss {total_loss} (L_c {}, L_B {}, neg. entropy {})",
            metrics.classification_loss, metrics.bias_loss, metrics.neg_entropy
        )));
    }

    let grads = tape.backward(total)?;
    let mut out = BTreeMap::new();
    let mut bindings = vec![&bf, &bg];
    if let Some(bh) = &bh_trained {
        bindings.push(bh);
    }
    collect(&tape, &grads, &bindings, &mut out);
    Ok(StepGradients {
        grads: out,
        metrics,
        norm_updates,
        total_loss,
    })
}

/// Gradients of `L_c + entropy·negent + confusion·conf + bias·L_B`, with `h`
/// frozen for the entropy and confusion terms and the bias loss reaching `f`
/// through a gradient reversal layer of scale `w.grl_scale`.
pub fn step_gradients(params: &ParamSet, batch: &Batch, w: &LossWeights) -> Result<StepGradients> {
    record(
        params,
        batch,
        Objective {
            classification: true,
            entropy: w.entropy,
            confusion: w.confusion,
            bias: w.bias,
            route: BiasRoute::Reversal(w.grl_scale),
        },
    )
}

fn apply(params: &mut ParamSet, opt: &mut OptimState, step: &StepGradients) -> Result<()> {
    for (name, g) in &step.grads {
        opt.step(name, params.get_mut(name)?, g)?;
    }
    params.apply_norm_updates(&step.norm_updates)
}

/// One update of the minimax game on a batch. Parameters without a gradient
/// (e.g. `h` when the bias weight is zero) are left untouched.
pub fn minimax_step(
    batch: &Batch,
    params: &mut ParamSet,
    opt: &mut OptimState,
    cfg: &TrainConfig,
) -> Result<StepMetrics> {
    let w = cfg.weights();
    match cfg.schedule {
        Schedule::Reversal => {
            let step = step_gradients(params, batch, &w)?;
            apply(params, opt, &step)?;
            Ok(step.metrics)
        }
        Schedule::Alternating | Schedule::AlternatingSignFlip => {
            if w.trains_h() {
                let head = record(
                    params,
                    batch,
                    Objective {
                        classification: false,
                        entropy: 0.0,
                        confusion: 0.0,
                        bias: w.bias,
                        route: BiasRoute::HeadOnly,
                    },
                )?;
                apply(params, opt, &head)?;
            }
            let flip = if cfg.schedule == Schedule::AlternatingSignFlip {
                -w.grl_scale * w.bias
            } else {
                0.0
            };
            let body = record(
                params,
                batch,
                Objective {
                    classification: true,
                    entropy: w.entropy,
                    confusion: w.confusion,
                    bias: flip,
                    route: BiasRoute::FeaturesOnly,
                },
            )?;
            apply(params, opt, &body)?;
            Ok(body.metrics)
        }
    }
}
