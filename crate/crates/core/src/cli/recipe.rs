use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::{build_test_set, build_train_set, load_idx, synth_digits, BiasedDataset, RawDigits};
use crate::error::{Error, Result};
use crate::objectives::Method;
use crate::seed;

/// σ² values of the sweep.
pub const SWEEP_SIGMA2: [f64; 4] = [0.02, 0.03, 0.04, 0.05];
/// Methods of the sweep, in table order.
pub const SWEEP_METHODS: [Method; 4] = [Method::Baseline, Method::Confusion, Method::Ours, Method::Grayscale];

const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Where the grayscale digits come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// `n` procedural glyphs per class for each split.
    Synthetic(usize),
    /// IDX files for the training and test digits.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl DataSource {
    /// The four standard MNIST file names inside `dir`.
    pub fn mnist_dir(dir: &Path) -> Self {
        let [a, b, c, d] = MNIST_FILES.map(|f| dir.join(f));
        DataSource::Idx {
            train_images: a,
            train_labels: b,
            test_images: c,
            test_labels: d,
        }
    }

    /// Raw training and test digits.
    pub fn load(&self, seed: u64) -> Result<(RawDigits, RawDigits)> {
        match self {
            DataSource::Synthetic(n) => Ok((
                synth_digits(*n, seed::derive_named(seed, "train-digits"))?,
                synth_digits(*n, seed::derive_named(seed, "test-digits"))?,
            )),
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok((load_idx(train_images, train_labels)?, load_idx(test_images, test_labels)?)),
        }
    }
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "source `{s}` is not synthetic:<n>, idx:<dir> or idx:<train images>,<train labels>,<test images>,<test labels>"
            ))
        };
        match s.split_once(':').ok_or_else(bad)? {
            ("synthetic", n) => match n.parse::<usize>() {
                Ok(n) if n > 0 => Ok(DataSource::Synthetic(n)),
                _ => Err(bad()),
            },
            ("idx", paths) => {
                let parts: Vec<&str> = paths.split(',').collect();
                match parts[..] {
                    [dir] if !dir.is_empty() => Ok(DataSource::mnist_dir(Path::new(dir))),
                    [a, b, c, d] => Ok(DataSource::Idx {
                        train_images: a.into(),
                        train_labels: b.into(),
                        test_images: c.into(),
                        test_labels: d.into(),
                    }),
                    _ => Err(bad()),
                }
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synthetic(n) => write!(f, "synthetic:{n}"),
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => write!(
                f,
                "idx:{},{},{},{}",
                train_images.display(),
                train_labels.display(),
                test_images.display(),
                test_labels.display()
            ),
        }
    }
}

/// A generated experiment: biased train split, unbiased test split and the
/// uncoloured test digits for recolouring.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub train: BiasedDataset,
    pub test: BiasedDataset,
    pub raw_test: RawDigits,
}

/// Deterministic in `(source, sigma2, seed)`.
pub fn generate(source: &DataSource, sigma2: f64, seed: u64) -> Result<GeneratedData> {
    if !(sigma2 > 0.0 && sigma2 < 1.0) {
        return Err(Error::Config(format!("sigma2 must lie in (0, 1), got {sigma2}")));
    }
    let (raw_train, raw_test) = source.load(seed)?;
    Ok(GeneratedData {
        train: build_train_set(&raw_train, sigma2, seed)?,
        test: build_test_set(&raw_test, sigma2, seed)?,
        raw_test,
    })
}

/// Experiment size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

/// Data source and schedule of a [`Scale`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRecipe {
    pub source: DataSource,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Scale {
    /// Desk: 200 synthetic glyphs per class and split, 10 epochs of batch 32.
    /// Full: the MNIST files under `$UNLEARN_DATA_DIR`, 20 epochs of batch 128.
    pub fn recipe(self) -> Result<ScaleRecipe> {
        Ok(match self {
            Scale::Desk => ScaleRecipe {
                source: DataSource::Synthetic(200),
                epochs: 10,
                batch_size: 32,
            },
            Scale::Full => ScaleRecipe {
                source: DataSource::mnist_dir(&super::data_dir(None)?),
                epochs: 20,
                batch_size: 128,
            },
        })
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Config(format!("unknown scale `{s}` (desk | full)"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        })
    }
}

/// Split scored by `eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Test,
}

impl FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "test" => Ok(EvalSplit::Test),
            _ => Err(Error::Config(format!("unknown split `{s}` (train | test)"))),
        }
    }
}

/// Palette entries to recolour the test digits with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recolor {
    One(usize),
    All,
}

impl Recolor {
    pub fn indices(self) -> Vec<usize> {
        match self {
            Recolor::One(k) => vec![k],
            Recolor::All => (0..10).collect(),
        }
    }
}

impl FromStr for Recolor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Recolor::All),
            _ => match s.parse::<usize>() {
                Ok(k) if k < 10 => Ok(Recolor::One(k)),
                _ => Err(Error::Config(format!("--recolor expects 0..9 or `all`, got `{s}`"))),
            },
        }
    }
}
