//! Grayscale digit sources: IDX files and a procedural glyph generator.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::color::IMAGE_SIDE;
use crate::error::{Error, Result};
use crate::seed;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Grayscale digits, row-major `[n, 28, 28]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDigits {
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
}

impl RawDigits {
    pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * Self::PIXELS..(i + 1) * Self::PIXELS]
    }

    /// First `n` digits (all if fewer).
    pub fn take(&self, n: usize) -> RawDigits {
        let n = n.min(self.len());
        RawDigits {
            images: self.images[..n * Self::PIXELS].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

/// Reads an IDX image file (`0x00000803`, `n × 28 × 28` bytes) and its label
/// file (`0x00000801`).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDigits> {
    let img = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lab = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let ibad = |m: &str| Error::format(images_path, m.to_string());
    let lbad = |m: &str| Error::format(labels_path, m.to_string());

    match be_u32(&img, 0) {
        Some(IDX_IMAGES) => {}
        Some(m) => return Err(ibad(&format!("bad image magic {m:#010x}"))),
        None => return Err(ibad("truncated header")),
    }
    match be_u32(&lab, 0) {
        Some(IDX_LABELS) => {}
        Some(m) => return Err(lbad(&format!("bad label magic {m:#010x}"))),
        None => return Err(lbad("truncated header")),
    }
    let (n, rows, cols) = match (be_u32(&img, 4), be_u32(&img, 8), be_u32(&img, 12)) {
        (Some(n), Some(r), Some(c)) => (n as usize, r as usize, c as usize),
        _ => return Err(ibad("truncated header")),
    };
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(ibad(&format!("expected 28x28 images, got {rows}x{cols}")));
    }
    let nl = be_u32(&lab, 4).ok_or_else(|| lbad("truncated header"))? as usize;
    if nl != n {
        return Err(Error::format(
            labels_path,
            format!("{nl} labels for {n} images"),
        ));
    }
    let pixels = &img[16..];
    if pixels.len() != n * rows * cols {
        return Err(ibad("truncated or oversized pixel block"));
    }
    let labels = &lab[8..];
    if labels.len() != n {
        return Err(lbad("truncated or oversized label block"));
    }
    if let Some(bad) = labels.iter().find(|l| **l > 9) {
        return Err(lbad(&format!("label {bad} outside 0..10")));
    }
    Ok(RawDigits {
        images: pixels.iter().map(|p| *p as f32 / 255.0).collect(),
        labels: labels.to_vec(),
    })
}

/// Writes digits in IDX layout; pixels are rounded to bytes.
pub fn save_idx(raw: &RawDigits, images_path: &Path, labels_path: &Path) -> Result<()> {
    let n = raw.len() as u32;
    let mut img = Vec::with_capacity(16 + raw.images.len());
    for v in [IDX_IMAGES, n, IMAGE_SIDE as u32, IMAGE_SIDE as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(raw.images.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + raw.len());
    lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend_from_slice(&raw.labels);
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

type Stroke = Vec<(f64, f64)>;

/// Points on an elliptical arc; angles in degrees, counter-clockwise, y down.
fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64) -> Stroke {
    let steps = ((to - from).abs() / 15.0).ceil().max(2.0) as usize;
    (0..=steps)
        .map(|i| {
            let a = (from + (to - from) * i as f64 / steps as f64) * PI / 180.0;
            (cx + rx * a.cos(), cy - ry * a.sin())
        })
        .collect()
}

fn chain(parts: &[Stroke]) -> Stroke {
    parts.concat()
}

/// Skeletons in a unit box (x right, y down).
fn skeleton(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.3, 0.42, 0.0, 360.0)],
        1 => vec![vec![(0.36, 0.22), (0.54, 0.08), (0.54, 0.92)]],
        2 => vec![chain(&[
            arc(0.5, 0.3, 0.27, 0.22, 165.0, -35.0),
            vec![(0.2, 0.92), (0.82, 0.92)],
        ])],
        3 => vec![
            arc(0.47, 0.29, 0.25, 0.21, 155.0, -90.0),
            arc(0.47, 0.71, 0.28, 0.21, 90.0, -155.0),
        ],
        4 => vec![vec![(0.66, 0.92), (0.66, 0.08), (0.16, 0.64), (0.86, 0.64)]],
        5 => vec![chain(&[
            vec![(0.8, 0.08), (0.3, 0.08), (0.26, 0.46)],
            arc(0.5, 0.67, 0.29, 0.25, 130.0, -150.0),
        ])],
        6 => vec![chain(&[
            vec![(0.72, 0.08)],
            arc(0.72, 0.62, 0.5, 0.54, 90.0, 180.0),
            arc(0.5, 0.7, 0.28, 0.22, 180.0, -180.0),
        ])],
        7 => vec![vec![(0.16, 0.1), (0.84, 0.1), (0.42, 0.92)]],
        8 => vec![
            arc(0.5, 0.28, 0.22, 0.2, 0.0, 360.0),
            arc(0.5, 0.71, 0.28, 0.22, 0.0, 360.0),
        ],
        9 => vec![chain(&[
            arc(0.5, 0.3, 0.27, 0.22, 0.0, 360.0),
            vec![(0.74, 0.92)],
        ])],
        _ => unreachable!("digit {digit}"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// One jittered glyph: per-point wobble, a random affine map (rotation, shear,
/// anisotropic scale, shift) and a random stroke width. Peak intensity is 1.
fn render(digit: u8, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut gauss = || -> f64 { StandardNormal.sample(rng) };
    let wobble = 0.02;
    let strokes: Vec<Stroke> = skeleton(digit)
        .into_iter()
        .map(|s| s.into_iter().map(|(x, y)| (x + wobble * gauss(), y + wobble * gauss())).collect())
        .collect();

    let angle = rng.random_range(-8.0f64..8.0) * PI / 180.0;
    let shear = rng.random_range(-0.12..0.12);
    let sx = rng.random_range(17.0..20.0);
    let sy = rng.random_range(18.0..20.0);
    let (tx, ty) = (rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0));
    let half = rng.random_range(1.0..1.6);
    let (cos, sin) = (angle.cos(), angle.sin());
    let centre = IMAGE_SIDE as f64 / 2.0;
    let map = |(x, y): (f64, f64)| {
        let (u, v) = ((x - 0.5) * sx, (y - 0.5) * sy);
        let u = u + shear * v;
        (cos * u - sin * v + centre + tx, sin * u + cos * v + centre + ty)
    };
    let segments: Vec<((f64, f64), (f64, f64))> = strokes
        .iter()
        .flat_map(|s| s.windows(2).map(|w| (map(w[0]), map(w[1]))).collect::<Vec<_>>())
        .collect();

    let mut img = vec![0.0f32; IMAGE_SIDE * IMAGE_SIDE];
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = segments
                .iter()
                .map(|(a, b)| segment_distance(p, *a, *b))
                .fold(f64::INFINITY, f64::min);
            img[y * IMAGE_SIDE + x] = (half + 0.5 - d).clamp(0.0, 1.0) as f32;
        }
    }
    let peak = img.iter().copied().fold(0.0f32, f32::max);
    if peak > 0.0 {
        img.iter_mut().for_each(|v| *v /= peak);
    }
    img
}

/// `n_per_class` procedurally drawn glyphs of each digit, ordered
/// `0, 1, ..., 9, 0, 1, ...`. Glyph `i` uses its own RNG stream.
pub fn synth_digits(n_per_class: usize, seed: u64) -> Result<RawDigits> {
    if n_per_class == 0 {
        return Err(Error::Config("synthetic digits need n_per_class >= 1".into()));
    }
    let n = 10 * n_per_class;
    let mut images = Vec::with_capacity(n * RawDigits::PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = (i % 10) as u8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, i as u64));
        images.extend(render(digit, &mut rng));
        labels.push(digit);
    }
    Ok(RawDigits { images, labels })
}
