use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One convolution of a block: `out_channels` filters of `kernel × kernel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    fn out_extent(&self, size: usize) -> Option<usize> {
        (size + 2 * self.pad)
            .checked_sub(self.kernel)
            .map(|s| s / self.stride + 1)
    }
}

/// Layout of the three networks.
///
/// * `f`: conv+BN+ReLU blocks producing the shared feature map.
/// * `g`: conv+BN+ReLU blocks, global average pool, fully connected classifier.
/// * `h`: conv+BN+ReLU blocks, then a 1×1 convolution emitting
///   `bias_channels × levels` logits per grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    /// `[channels, height, width]` of one input image.
    pub input: [usize; 3],
    pub f: Vec<ConvSpec>,
    pub g: Vec<ConvSpec>,
    pub num_classes: usize,
    pub h: Vec<ConvSpec>,
    pub bias_channels: usize,
    pub levels: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec::colored_mnist()
    }
}

impl ArchSpec {
    /// The four-convolution plain network for 28×28 colour digits, split two and
    /// two between `f` and `g`, with a two-convolution bias head on a 7×7 grid.
    pub fn colored_mnist() -> Self {
        ArchSpec {
            input: [3, 28, 28],
            f: vec![ConvSpec::new(16, 3, 1, 1), ConvSpec::new(32, 3, 2, 1)],
            g: vec![ConvSpec::new(64, 3, 2, 1), ConvSpec::new(64, 3, 1, 1)],
            num_classes: 10,
            h: vec![ConvSpec::new(32, 3, 2, 1)],
            bias_channels: 3,
            levels: 8,
        }
    }

    /// A miniature of [`ArchSpec::colored_mnist`] on 8×8 inputs, small enough for
    /// finite-difference checks of every parameter.
    pub fn tiny() -> Self {
        ArchSpec {
            input: [3, 8, 8],
            f: vec![ConvSpec::new(2, 3, 1, 1), ConvSpec::new(4, 3, 2, 1)],
            g: vec![ConvSpec::new(4, 3, 2, 1), ConvSpec::new(3, 3, 1, 1)],
            num_classes: 10,
            h: vec![ConvSpec::new(3, 3, 2, 1)],
            bias_channels: 3,
            levels: 8,
        }
    }

    fn trace(&self, start: [usize; 3], convs: &[ConvSpec]) -> Result<[usize; 3]> {
        convs.iter().try_fold(start, |[c, h, w], conv| {
            match (conv.out_extent(h), conv.out_extent(w)) {
                (Some(oh), Some(ow)) if c > 0 && conv.stride > 0 => {
                    Ok([conv.out_channels, oh, ow])
                }
                _ => Err(Error::Config(format!(
                    "convolution {conv:?} does not fit input [{c},{h},{w}]"
                ))),
            }
        })
    }

    /// `[channels, height, width]` of `f`'s output.
    pub fn feature_shape(&self) -> [usize; 3] {
        self.trace(self.input, &self.f).expect("validated architecture")
    }

    fn h_trunk_shape(&self) -> [usize; 3] {
        self.trace(self.feature_shape(), &self.h).expect("validated architecture")
    }

    /// Side length of the bias-label grid produced by `h`.
    pub fn bias_grid(&self) -> usize {
        self.h_trunk_shape()[1]
    }

    /// Downsampling factor from the input image to the bias grid.
    pub fn bias_pool(&self) -> usize {
        self.input[1] / self.bias_grid()
    }

    pub fn validate(&self) -> Result<()> {
        if self.f.is_empty() {
            return Err(Error::Config("f needs at least one convolution".into()));
        }
        if self.num_classes == 0 || self.bias_channels == 0 || self.levels < 2 {
            return Err(Error::Config("class/level counts must be positive".into()));
        }
        let feat = self.trace(self.input, &self.f)?;
        self.trace(feat, &self.g)?;
        let [_, gh, gw] = self.trace(feat, &self.h)?;
        if gh != gw || gh == 0 || self.input[1] % gh != 0 || self.input[1] != self.input[2] {
            return Err(Error::Config(format!(
                "bias grid {gh}x{gw} must evenly tile the {}x{} input",
                self.input[1], self.input[2]
            )));
        }
        Ok(())
    }

    /// Total number of trainable scalars, computed from the layout alone.
    pub fn param_count(&self) -> usize {
        let blocks = |mut c: usize, convs: &[ConvSpec]| {
            let mut n = 0;
            for conv in convs {
                n += conv.out_channels * c * conv.kernel * conv.kernel + 2 * conv.out_channels;
                c = conv.out_channels;
            }
            (n, c)
        };
        let (nf, cf) = blocks(self.input[0], &self.f);
        let (ng, cg) = blocks(cf, &self.g);
        let (nh, ch) = blocks(cf, &self.h);
        let head = self.bias_channels * self.levels;
        nf + ng + cg * self.num_classes + self.num_classes + nh + ch * head + head
    }
}

fn fmt_convs(convs: &[ConvSpec]) -> String {
    convs
        .iter()
        .map(|c| format!("{}:{}:{}:{}", c.out_channels, c.kernel, c.stride, c.pad))
        .collect::<Vec<_>>()
        .join(",")
}

/// Compact single-line form, e.g.
/// `in=3x28x28 f=16:3:1:1,32:3:2:1 g=64:3:2:1,64:3:1:1 classes=10 h=32:3:2:1 bias=3x8`.
impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "in={}x{}x{} f={} g={} classes={} h={} bias={}x{}",
            self.input[0],
            self.input[1],
            self.input[2],
            fmt_convs(&self.f),
            fmt_convs(&self.g),
            self.num_classes,
            fmt_convs(&self.h),
            self.bias_channels,
            self.levels
        )
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed architecture descriptor `{s}`"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let dims = |t: &str| t.split('x').map(num).collect::<Result<Vec<_>>>();
        let convs = |t: &str| -> Result<Vec<ConvSpec>> {
            if t.is_empty() {
                return Ok(Vec::new());
            }
            t.split(',')
                .map(|c| {
                    let v = c.split(':').map(num).collect::<Result<Vec<_>>>()?;
                    match v[..] {
                        [o, k, st, p] => Ok(ConvSpec::new(o, k, st, p)),
                        _ => Err(bad()),
                    }
                })
                .collect()
        };
        let mut spec = ArchSpec::colored_mnist();
        let mut seen = 0;
        for field in s.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(bad)?;
            match key {
                "in" => {
                    spec.input = <[usize; 3]>::try_from(dims(value)?).map_err(|_| bad())?;
                }
                "f" => spec.f = convs(value)?,
                "g" => spec.g = convs(value)?,
                "classes" => spec.num_classes = num(value)?,
                "h" => spec.h = convs(value)?,
                "bias" => match dims(value)?[..] {
                    [c, l] => {
                        spec.bias_channels = c;
                        spec.levels = l;
                    }
                    _ => return Err(bad()),
                },
                _ => return Err(bad()),
            }
            seen += 1;
        }
        if seen != 6 {
            return Err(bad());
        }
        spec.validate()?;
        Ok(spec)
    }
}
