//! Losses, the minimax update and the training loop.

mod config;
mod infer;
mod losses;
mod step;
mod train;

pub use config::{LossWeights, Method, Schedule, TrainConfig};
pub use infer::{extract_features, predict, Predictions};
pub use losses::{
    argmax_levels, argmax_rows, bias_loss, classification_loss, confusion_loss,
    negative_conditional_entropy,
};
pub use step::{minimax_step, step_gradients, Batch, StepGradients, StepMetrics};
pub use train::{evaluate, train, train_with, EpochRecord};
