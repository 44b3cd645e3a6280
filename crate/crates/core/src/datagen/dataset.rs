use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::color::{bias_labels_of, colorize, sample_color, to_grayscale, ColorSpec, GRID_SIDE};
use super::digits::RawDigits;
use crate::error::{Error, Result};
use crate::seed;

pub const IMAGE_LEN: usize = 3 * RawDigits::PIXELS;
pub const BIAS_LEN: usize = 3 * GRID_SIDE * GRID_SIDE;

const MAGIC: &[u8; 8] = b"UNLDSET\0";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 8 + 1 + 1 + 8;

/// Which colouring protocol produced a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// Mean colour fixed by the digit label.
    Train,
    /// Mean colour drawn uniformly from the palette, independent of the label.
    Test,
    /// Every image coloured around palette entry `k`.
    Recolored(u8),
}

impl Split {
    fn tag(self) -> (u8, u8) {
        match self {
            Split::Train => (0, 0),
            Split::Test => (1, 0),
            Split::Recolored(k) => (2, k),
        }
    }

    fn from_tag(kind: u8, k: u8) -> Option<Split> {
        match (kind, k) {
            (0, 0) => Some(Split::Train),
            (1, 0) => Some(Split::Test),
            (2, k) if k < 10 => Some(Split::Recolored(k)),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Test => f.write_str("test"),
            Split::Recolored(k) => write!(f, "recolored-{k}"),
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => s
                .strip_prefix("recolored-")
                .and_then(|k| k.parse::<u8>().ok())
                .filter(|k| *k < 10)
                .map(Split::Recolored)
                .ok_or_else(|| Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

/// Colourised digits with their labels and bias-label grids.
///
/// Images are `[n, 3, 28, 28]` `f32` values in `[0, 1]`; bias labels are
/// `[n, 3, 7, 7]` levels in `0..8`, always equal to [`bias_labels_of`] of the
/// stored image. Each image also keeps the palette index of its mean colour and
/// the colour actually sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedDataset {
    split: Split,
    seed: u64,
    sigma2: f64,
    images: Vec<f32>,
    labels: Vec<u8>,
    bias_labels: Vec<u8>,
    mean_index: Vec<u8>,
    colors: Vec<[f32; 3]>,
}

impl BiasedDataset {
    pub fn split(&self) -> Split {
        self.split
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * IMAGE_LEN..(i + 1) * IMAGE_LEN]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn bias_labels(&self) -> &[u8] {
        &self.bias_labels
    }

    pub fn bias_label(&self, i: usize) -> &[u8] {
        &self.bias_labels[i * BIAS_LEN..(i + 1) * BIAS_LEN]
    }

    /// Palette index of each image's mean colour.
    pub fn mean_index(&self) -> &[u8] {
        &self.mean_index
    }

    /// Colour sampled for each image.
    pub fn colors(&self) -> &[[f32; 3]] {
        &self.colors
    }

    /// Same dataset with luminance replicated to all channels; bias labels are
    /// recomputed from the converted images.
    pub fn grayscale(&self) -> BiasedDataset {
        let images: Vec<f32> = self.images.chunks_exact(IMAGE_LEN).flat_map(to_grayscale).collect();
        let bias_labels = images.chunks_exact(IMAGE_LEN).flat_map(bias_labels_of).collect();
        BiasedDataset {
            images,
            bias_labels,
            ..self.clone()
        }
    }

    /// Subset in the given order.
    pub fn select(&self, idx: &[usize]) -> BiasedDataset {
        let mut out = BiasedDataset {
            split: self.split,
            seed: self.seed,
            sigma2: self.sigma2,
            images: Vec::with_capacity(idx.len() * IMAGE_LEN),
            labels: Vec::with_capacity(idx.len()),
            bias_labels: Vec::with_capacity(idx.len() * BIAS_LEN),
            mean_index: Vec::with_capacity(idx.len()),
            colors: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            out.images.extend_from_slice(self.image(i));
            out.labels.push(self.labels[i]);
            out.bias_labels.extend_from_slice(self.bias_label(i));
            out.mean_index.push(self.mean_index[i]);
            out.colors.push(self.colors[i]);
        }
        out
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2 < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("sigma2 must lie in (0, 1), got {sigma2}")))
    }
}

/// Colours every digit; `mean_of(i, label, rng)` picks the palette index.
fn build(
    raw: &RawDigits,
    sigma2: f64,
    seed: u64,
    split: Split,
    mut mean_of: impl FnMut(usize, u8, &mut ChaCha8Rng) -> usize,
) -> Result<BiasedDataset> {
    check_sigma2(sigma2)?;
    let palette = ColorSpec::default();
    let stream = seed::derive_named(seed, &split.to_string());
    let n = raw.len();
    let mut ds = BiasedDataset {
        split,
        seed,
        sigma2,
        images: Vec::with_capacity(n * IMAGE_LEN),
        labels: raw.labels.clone(),
        bias_labels: Vec::with_capacity(n * BIAS_LEN),
        mean_index: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
    };
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(stream, i as u64));
        let k = mean_of(i, raw.labels[i], &mut rng);
        let rgb = sample_color(palette.mean(k), sigma2, &mut rng)?;
        let image = colorize(raw.image(i), rgb);
        ds.bias_labels.extend(bias_labels_of(&image));
        ds.images.extend(image);
        ds.mean_index.push(k as u8);
        ds.colors.push(rgb.map(|c| c as f32));
    }
    Ok(ds)
}

/// Training split: each digit is coloured around its own palette colour.
pub fn build_train_set(raw: &RawDigits, sigma2: f64, seed: u64) -> Result<BiasedDataset> {
    build(raw, sigma2, seed, Split::Train, |_, label, _| label as usize)
}

/// Unbiased split: the mean colour is drawn uniformly from the palette before
/// sampling, independently of the digit.
pub fn build_test_set(raw: &RawDigits, sigma2: f64, seed: u64) -> Result<BiasedDataset> {
    build(raw, sigma2, seed, Split::Test, |_, _, rng| rng.random_range(0..10))
}

/// Every digit coloured around palette entry `k`, whatever its label.
pub fn recolor_fixed(raw: &RawDigits, k: usize, sigma2: f64, seed: u64) -> Result<BiasedDataset> {
    if k >= 10 {
        return Err(Error::Config(format!("colour index {k} outside 0..10")));
    }
    build(raw, sigma2, seed, Split::Recolored(k as u8), |_, _, _| k)
}

/// Binary container: magic, version, metadata (seed, sigma2, split, n), then
/// little-endian `f32` images, `u8` labels, `u8` bias labels, `u8` mean-colour
/// indices and little-endian `f32` sampled colours.
pub fn save_dataset(ds: &BiasedDataset, path: &Path) -> Result<()> {
    fs::write(path, encode(ds)).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode(ds: &BiasedDataset) -> Vec<u8> {
    let n = ds.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * (4 * IMAGE_LEN + 2 + BIAS_LEN + 12));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ds.seed.to_le_bytes());
    out.extend_from_slice(&ds.sigma2.to_le_bytes());
    let (kind, k) = ds.split.tag();
    out.extend_from_slice(&[kind, k]);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in &ds.images {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ds.labels);
    out.extend_from_slice(&ds.bias_labels);
    out.extend_from_slice(&ds.mean_index);
    for c in ds.colors.iter().flatten() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn load_dataset(path: &Path) -> Result<BiasedDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(path, m.to_string());
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not a dataset container (bad magic)"));
    }
    let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported container version {version}")));
    }
    let seed = u64_at(12);
    let sigma2 = f64::from_bits(u64_at(20));
    let split = Split::from_tag(bytes[28], bytes[29]).ok_or_else(|| bad("unknown split tag"))?;
    let n = usize::try_from(u64_at(30)).map_err(|_| bad("sample count overflows"))?;
    let body = n
        .checked_mul(4 * IMAGE_LEN + 2 + BIAS_LEN + 12)
        .ok_or_else(|| bad("sample count overflows"))?;
    if bytes.len() != HEADER_LEN + body {
        return Err(bad(&format!(
            "expected {} bytes for {n} samples, found {}",
            HEADER_LEN + body,
            bytes.len()
        )));
    }

    let mut at = HEADER_LEN;
    let mut take = |len: usize| {
        let s = &bytes[at..at + len];
        at += len;
        s
    };
    let f32s = |s: &[u8]| -> Vec<f32> {
        s.chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect()
    };
    let images = f32s(take(4 * n * IMAGE_LEN));
    let labels = take(n).to_vec();
    let bias_labels = take(n * BIAS_LEN).to_vec();
    let mean_index = take(n).to_vec();
    let colors = f32s(take(12 * n))
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();

    if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(bad("pixel outside [0, 1]"));
    }
    if labels.iter().chain(&mean_index).any(|l| *l > 9) {
        return Err(bad("label or colour index outside 0..10"));
    }
    let recomputed: Vec<u8> = images.chunks_exact(IMAGE_LEN).flat_map(bias_labels_of).collect();
    if recomputed != bias_labels {
        return Err(bad("stored bias labels disagree with the images"));
    }
    Ok(BiasedDataset {
        split,
        seed,
        sigma2,
        images,
        labels,
        bias_labels,
        mean_index,
        colors,
    })
}
