//! Mutual information between digit labels and colour observables of a
//! dataset.

use super::metrics::{discrete_mi, joint_counts};
use crate::datagen::{dominant_color, BiasedDataset, ColorSpec, GRID_SIDE, LEVELS};
use crate::error::Result;

/// Grid cell used for the single-cell diagnostic.
pub const CENTER_CELL: (usize, usize) = (GRID_SIDE / 2, GRID_SIDE / 2);
const JOINT_LEVELS: usize = LEVELS * LEVELS * LEVELS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiDiagnostics {
    /// Digit vs. the joint RGB level at [`CENTER_CELL`].
    pub center_cell: f64,
    /// Digit vs. joint RGB level, averaged over all grid cells.
    pub grid_mean: f64,
    /// Digit vs. the palette colour nearest to the image's dominant colour.
    pub palette_code: f64,
    /// Digit vs. the palette index the colour was sampled around.
    pub mean_index: f64,
}

fn cell_codes(ds: &BiasedDataset, gy: usize, gx: usize) -> Vec<usize> {
    let plane = GRID_SIDE * GRID_SIDE;
    (0..ds.len())
        .map(|i| {
            let b = ds.bias_label(i);
            (0..3).fold(0, |code, c| code * LEVELS + b[c * plane + gy * GRID_SIDE + gx] as usize)
        })
        .collect()
}

/// Joint RGB level code (`0..512`) of one grid cell for every image.
pub fn center_cell_codes(ds: &BiasedDataset) -> Vec<usize> {
    cell_codes(ds, CENTER_CELL.0, CENTER_CELL.1)
}

/// Palette index nearest to each image's dominant colour.
pub fn palette_codes(ds: &BiasedDataset) -> Vec<usize> {
    let palette = ColorSpec::default();
    (0..ds.len()).map(|i| palette.nearest(dominant_color(ds.image(i)))).collect()
}

/// Plug-in MI (nats) between digit labels and `codes` in `0..k`.
pub fn label_mi(ds: &BiasedDataset, codes: &[usize], k: usize) -> Result<f64> {
    let labels: Vec<usize> = ds.labels().iter().map(|l| *l as usize).collect();
    discrete_mi(&joint_counts(&labels, 10, codes, k)?, k)
}

pub fn mi_diagnostics(ds: &BiasedDataset) -> Result<MiDiagnostics> {
    let mut grid = 0.0;
    for gy in 0..GRID_SIDE {
        for gx in 0..GRID_SIDE {
            grid += label_mi(ds, &cell_codes(ds, gy, gx), JOINT_LEVELS)?;
        }
    }
    let means: Vec<usize> = ds.mean_index().iter().map(|k| *k as usize).collect();
    Ok(MiDiagnostics {
        center_cell: label_mi(ds, &center_cell_codes(ds), JOINT_LEVELS)?,
        grid_mean: grid / (GRID_SIDE * GRID_SIDE) as f64,
        palette_code: label_mi(ds, &palette_codes(ds), 10)?,
        mean_index: label_mi(ds, &means, 10)?,
    })
}
