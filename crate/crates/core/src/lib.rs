//! Training convolutional digit classifiers on colour-biased data and removing
//! the bias with an adversarial mutual-information regulariser.

pub mod autodiff;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod layers;
pub mod objectives;
pub mod seed;

pub use error::{Error, Result};
