use std::fmt;
use std::str::FromStr;

use crate::autodiff::SgdConfig;
use crate::error::{Error, Result};

/// Training recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Classification loss only.
    Baseline,
    /// Classification loss, entropy of the bias head pushed up through `f`,
    /// bias loss through the gradient reversal layer.
    Ours,
    /// Like `Ours` with the confusion loss in place of the entropy term.
    Confusion,
    /// Classification loss plus the reversed bias loss.
    GrlOnly,
    /// Baseline trained and evaluated on luminance images.
    Grayscale,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Baseline,
        Method::Ours,
        Method::Confusion,
        Method::GrlOnly,
        Method::Grayscale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Ours => "ours",
            Method::Confusion => "confusion",
            Method::GrlOnly => "grl-only",
            Method::Grayscale => "grayscale",
        }
    }

    /// Whether the regulariser weights `lambda`, `mu` and the GRL scale matter.
    pub fn uses_regularizer(self) -> bool {
        matches!(self, Method::Ours | Method::Confusion | Method::GrlOnly)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('-', "_") == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// How the adversarial game is played within one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// One backward pass; the bias loss reaches `f` through the gradient
    /// reversal layer.
    #[default]
    Reversal,
    /// Two updates per batch: `h` descends the bias loss on frozen features,
    /// then `f` and `g` descend the classification and entropy terms with `h`
    /// frozen. No reversed bias loss reaches `f`.
    Alternating,
    /// As `Alternating`, but the second update also ascends the bias loss
    /// explicitly (`- grl_scale * mu * L_B`, `h` frozen).
    AlternatingSignFlip,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::Reversal => "reversal",
            Schedule::Alternating => "alternating",
            Schedule::AlternatingSignFlip => "alternating-signflip",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Schedule::Reversal, Schedule::Alternating, Schedule::AlternatingSignFlip]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown schedule `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    /// Weight of the entropy (or confusion) term.
    pub lambda: f64,
    /// Weight of the bias-prediction loss.
    pub mu: f64,
    /// Gradient multiplier of the reversal layer.
    pub grl_scale: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Colour variance of the data being trained on (bookkeeping only).
    pub sigma2: f64,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Ours,
            lambda: 0.1,
            mu: 1.0,
            grl_scale: 0.1,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 20,
            seed: 0,
            sigma2: 0.02,
            schedule: Schedule::Reversal,
        }
    }
}

/// Loss weights actually applied for a method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub entropy: f64,
    pub confusion: f64,
    pub bias: f64,
    pub grl_scale: f64,
}

impl LossWeights {
    pub fn trains_h(&self) -> bool {
        self.bias != 0.0
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu), ("grl_scale", self.grl_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.sigma2 > 0.0) {
            return bad(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive, momentum in [0, 1), weight decay non-negative".into());
        }
        Ok(())
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn weights(&self) -> LossWeights {
        let (entropy, confusion, bias) = match self.method {
            Method::Baseline | Method::Grayscale => (0.0, 0.0, 0.0),
            Method::Ours => (self.lambda, 0.0, self.mu),
            Method::Confusion => (0.0, self.lambda, self.mu),
            Method::GrlOnly => (0.0, 0.0, self.mu),
        };
        LossWeights {
            entropy,
            confusion,
            bias,
            grl_scale: self.grl_scale,
        }
    }

    /// Whether setting `key` has no effect under the chosen method.
    pub fn ignores(&self, key: &str) -> bool {
        match (self.method, key.replace('-', "_").as_str()) {
            (Method::Baseline | Method::Grayscale, "lambda" | "mu" | "grl_scale" | "schedule") => true,
            (Method::GrlOnly, "lambda") => true,
            _ => false,
        }
    }

    /// `key=value` lines, the same keys [`TrainConfig::set`] accepts.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("method", self.method.to_string()),
            ("lambda", self.lambda.to_string()),
            ("mu", self.mu.to_string()),
            ("grl_scale", self.grl_scale.to_string()),
            ("lr", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("sigma2", self.sigma2.to_string()),
            ("schedule", self.schedule.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{v}`")))
        };
        let int = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| Error::Config(format!("`{key}` expects an integer, got `{v}`")))
        };
        match key.replace('-', "_").as_str() {
            "method" => self.method = value.parse()?,
            "lambda" => self.lambda = num(value)?,
            "mu" => self.mu = num(value)?,
            "grl_scale" => self.grl_scale = num(value)?,
            "lr" | "learning_rate" => self.learning_rate = num(value)?,
            "momentum" => self.momentum = num(value)?,
            "weight_decay" => self.weight_decay = num(value)?,
            "batch_size" => self.batch_size = int(value)? as usize,
            "epochs" => self.epochs = int(value)? as usize,
            "seed" => self.seed = int(value)?,
            "sigma2" => self.sigma2 = num(value)?,
            "schedule" => self.schedule = value.parse()?,
            _ => return Err(Error::Config(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }
}
