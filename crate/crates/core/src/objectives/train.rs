use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Method, TrainConfig};
use super::infer::predict;
use super::step::{minimax_step, Batch, StepMetrics};
use crate::autodiff::OptimState;
use crate::datagen::BiasedDataset;
use crate::error::{Error, Result};
use crate::eval::{accuracy, RunReport};
use crate::layers::{ArchSpec, ParamSet};
use crate::seed;

/// Averages over one epoch of training plus held-out evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    pub method: Method,
    pub train: StepMetrics,
    pub test_accuracy: f64,
    /// Per-position accuracy of `h` on the held-out set.
    pub test_bias_accuracy: f64,
}

/// Shuffled mini-batches; a trailing batch of one image is dropped since
/// batch-norm needs two samples.
fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed::derive_named(seed, "shuffle"), epoch as u64));
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Evaluates digit and bias accuracy on `eval` in eval mode.
pub fn evaluate(params: &ParamSet, eval: &BiasedDataset) -> Result<(f64, f64)> {
    let p = predict(params, eval)?;
    let labels: Vec<usize> = eval.labels().iter().map(|l| *l as usize).collect();
    let bias: Vec<usize> = eval.bias_labels().iter().map(|l| *l as usize).collect();
    Ok((accuracy(&p.labels, &labels)?, accuracy(&p.bias, &bias)?))
}

pub fn train(train: &BiasedDataset, eval: &BiasedDataset, cfg: &TrainConfig) -> Result<(ParamSet, RunReport)> {
    train_with(train, eval, cfg, &ArchSpec::colored_mnist(), |_| {})
}

/// Trains from a fresh initialisation seeded by `cfg.seed`, calling `on_epoch`
/// after each epoch. The grayscale method converts both datasets first.
pub fn train_with(
    train: &BiasedDataset,
    eval: &BiasedDataset,
    cfg: &TrainConfig,
    arch: &ArchSpec,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ParamSet, RunReport)> {
    cfg.validate()?;
    if train.len() < 2 || eval.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train_gray, eval_gray);
    let (train, eval) = if cfg.method == Method::Grayscale {
        train_gray = train.grayscale();
        eval_gray = eval.grayscale();
        (&train_gray, &eval_gray)
    } else {
        (train, eval)
    };

    let mut params = ParamSet::init(arch, seed::derive_named(cfg.seed, "init"))?;
    let mut opt = OptimState::new(cfg.sgd(), params.iter())?;
    let mut report = RunReport::new(Some(cfg.clone()));
    for epoch in 1..=cfg.epochs {
        let mut sum = StepMetrics::default();
        let mut seen = 0usize;
        for idx in epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch) {
            let batch = Batch::from_dataset(train, &idx)?;
            let m = minimax_step(&batch, &mut params, &mut opt, cfg)?;
            let w = batch.len() as f64;
            sum.classification_loss += w * m.classification_loss;
            sum.bias_loss += w * m.bias_loss;
            sum.neg_entropy += w * m.neg_entropy;
            sum.accuracy += w * m.accuracy;
            sum.bias_accuracy += w * m.bias_accuracy;
            seen += batch.len();
        }
        let n = seen as f64;
        let train_metrics = StepMetrics {
            classification_loss: sum.classification_loss / n,
            bias_loss: sum.bias_loss / n,
            neg_entropy: sum.neg_entropy / n,
            accuracy: sum.accuracy / n,
            bias_accuracy: sum.bias_accuracy / n,
        };
        let (test_accuracy, test_bias_accuracy) = evaluate(&params, eval)?;
        let record = EpochRecord {
            epoch,
            method: cfg.method,
            train: train_metrics,
            test_accuracy,
            test_bias_accuracy,
        };
        on_epoch(&record);
        report.history.push(record);
    }
    report.final_test_accuracy = report.history.last().map(|r| r.test_accuracy);
    Ok((params, report))
}
