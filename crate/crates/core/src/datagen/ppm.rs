//! Binary PPM (P6) output.

use std::fs;
use std::path::Path;

use super::color::IMAGE_SIDE;
use super::dataset::BiasedDataset;
use crate::error::{Error, Result};

pub fn ppm_bytes(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), 3 * width * height, "rgb buffer size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    fs::write(path, ppm_bytes(width, height, rgb)).map_err(|e| Error::io(path, e))
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Tiles the first `count` images into rows of `columns`, one pixel of gap.
pub fn export_samples(ds: &BiasedDataset, path: &Path, count: usize, columns: usize) -> Result<()> {
    let count = count.min(ds.len());
    let columns = columns.max(1).min(count.max(1));
    let rows = count.div_ceil(columns);
    let cell = IMAGE_SIDE + 1;
    let (w, h) = (columns * cell + 1, rows * cell + 1);
    let mut rgb = vec![64u8; 3 * w * h];
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    for i in 0..count {
        let img = ds.image(i);
        let (ox, oy) = (1 + (i % columns) * cell, 1 + (i / columns) * cell);
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                let at = 3 * ((oy + y) * w + ox + x);
                for c in 0..3 {
                    rgb[at + c] = to_byte(img[c * plane + y * IMAGE_SIDE + x]);
                }
            }
        }
    }
    write_ppm(path, w, h, &rgb)
}
