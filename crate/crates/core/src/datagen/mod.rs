//! Colour-biased digit datasets.
//!
//! Digits come from IDX files or from [`synth_digits`]. Training images are
//! coloured around a palette colour chosen by their label; test images around a
//! palette colour chosen uniformly at random. Each image carries a `3 × 7 × 7`
//! grid of 8-level quantised colour averages, the target of the bias head.

mod color;
mod dataset;
mod digits;
mod ppm;

pub use color::{
    bias_labels_of, colorize, dominant_color, sample_color, to_grayscale, ColorSpec, PaletteEntry,
    Rgb, GRID_SIDE, IMAGE_SIDE, LEVELS, MAX_SAMPLER_DRAWS, POOL,
};
pub use dataset::{
    build_test_set, build_train_set, load_dataset, recolor_fixed, save_dataset, BiasedDataset,
    Split, BIAS_LEN, IMAGE_LEN,
};
pub use digits::{load_idx, save_idx, synth_digits, RawDigits};
pub use ppm::{export_samples, ppm_bytes, write_ppm};
