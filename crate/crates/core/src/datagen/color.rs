//! Colour palette, rejection sampling of per-image colours, colourisation and
//! the quantised bias-label grid.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 28;
pub const GRID_SIDE: usize = 7;
pub const POOL: usize = IMAGE_SIDE / GRID_SIDE;
pub const LEVELS: usize = 8;
/// Draws per channel before [`sample_color`] gives up.
pub const MAX_SAMPLER_DRAWS: usize = 10_000;

pub type Rgb = [f64; 3];

/// One palette entry: a named mean colour assigned to a digit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaletteEntry {
    pub digit: u8,
    pub name: &'static str,
    pub rgb: Rgb,
}

const fn entry(digit: u8, name: &'static str, r: u8, g: u8, b: u8) -> PaletteEntry {
    PaletteEntry {
        digit,
        name,
        rgb: [r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0],
    }
}

/// The ten digit colours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorSpec {
    entries: [PaletteEntry; 10],
}

impl Default for ColorSpec {
    fn default() -> Self {
        ColorSpec {
            entries: [
                entry(0, "Crimson", 220, 20, 60),
                entry(1, "Teal", 0, 128, 128),
                entry(2, "Lemon", 253, 233, 16),
                entry(3, "BondiBlue", 0, 149, 182),
                entry(4, "CarrotOrange", 237, 145, 33),
                entry(5, "StrongViolet", 145, 30, 188),
                entry(6, "Cyan", 70, 240, 240),
                entry(7, "YourPink", 250, 197, 187),
                entry(8, "Lime", 210, 245, 60),
                entry(9, "Maroon", 128, 0, 0),
            ],
        }
    }
}

impl ColorSpec {
    pub fn entries(&self) -> &[PaletteEntry; 10] {
        &self.entries
    }

    pub fn mean(&self, k: usize) -> Rgb {
        self.entries[k].rgb
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the palette colour closest (Euclidean) to `rgb`; ties go to the
    /// lower index.
    pub fn nearest(&self, rgb: Rgb) -> usize {
        let dist = |m: &Rgb| (0..3).map(|c| (m[c] - rgb[c]).powi(2)).sum::<f64>();
        let mut best = 0;
        for k in 1..self.entries.len() {
            if dist(&self.entries[k].rgb) < dist(&self.entries[best].rgb) {
                best = k;
            }
        }
        best
    }
}

/// Per channel, draws `Normal(mean, sigma2)` until the value lies strictly in
/// `(0, 1)`. Out-of-range draws are rejected, never clipped.
pub fn sample_color<R: Rng + ?Sized>(mean: Rgb, sigma2: f64, rng: &mut R) -> Result<Rgb> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Config(format!("sigma2 must be positive, got {sigma2}")));
    }
    let mut out = [0.0; 3];
    for (c, &m) in mean.iter().enumerate() {
        let normal = Normal::new(m, sigma2.sqrt())
            .map_err(|e| Error::Config(format!("colour sampler: {e}")))?;
        out[c] = (0..MAX_SAMPLER_DRAWS)
            .map(|_| normal.sample(rng))
            .find(|v| *v > 0.0 && *v < 1.0)
            .ok_or(Error::SamplerExhausted(MAX_SAMPLER_DRAWS))?;
    }
    Ok(out)
}

/// `[h*w]` intensities to `[3, h, w]`, each channel scaled by its colour
/// component. Background stays black.
pub fn colorize(gray: &[f32], rgb: Rgb) -> Vec<f32> {
    let mut out = Vec::with_capacity(3 * gray.len());
    for c in rgb {
        out.extend(gray.iter().map(|g| (*g as f64 * c) as f32));
    }
    out
}

/// `[3, 28, 28]` image to `[3, 7, 7]` levels: 4×4 average pooling, then
/// `min(floor(8v), 7)`.
pub fn bias_labels_of(image: &[f32]) -> Vec<u8> {
    assert_eq!(image.len(), 3 * IMAGE_SIDE * IMAGE_SIDE, "image must be 3x28x28");
    let mut out = Vec::with_capacity(3 * GRID_SIDE * GRID_SIDE);
    for c in 0..3 {
        let plane = &image[c * IMAGE_SIDE * IMAGE_SIDE..(c + 1) * IMAGE_SIDE * IMAGE_SIDE];
        for gy in 0..GRID_SIDE {
            for gx in 0..GRID_SIDE {
                let mut s = 0.0f64;
                for y in gy * POOL..(gy + 1) * POOL {
                    for x in gx * POOL..(gx + 1) * POOL {
                        s += plane[y * IMAGE_SIDE + x] as f64;
                    }
                }
                let v = s / (POOL * POOL) as f64;
                out.push(((v * LEVELS as f64).floor() as i64).clamp(0, LEVELS as i64 - 1) as u8);
            }
        }
    }
    out
}

/// Luminance `0.299 R + 0.587 G + 0.114 B` written to all three channels.
pub fn to_grayscale(image: &[f32]) -> Vec<f32> {
    let n = image.len() / 3;
    let (r, rest) = image.split_at(n);
    let (g, b) = rest.split_at(n);
    let lum: Vec<f32> = (0..n)
        .map(|i| (0.299 * r[i] as f64 + 0.587 * g[i] as f64 + 0.114 * b[i] as f64) as f32)
        .collect();
    lum.repeat(3)
}

/// Colour of the brightest pixel (largest channel sum; first on ties). For a
/// colourised glyph whose peak intensity is 1 this is the sampled colour.
pub fn dominant_color(image: &[f32]) -> Rgb {
    let n = image.len() / 3;
    let mut best = 0;
    let mut best_sum = f64::NEG_INFINITY;
    for i in 0..n {
        let s = (0..3).map(|c| image[c * n + i] as f64).sum::<f64>();
        if s > best_sum {
            best_sum = s;
            best = i;
        }
    }
    [0, 1, 2].map(|c| image[c * n + best] as f64)
}
