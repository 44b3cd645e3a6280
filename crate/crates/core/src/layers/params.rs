use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::arch::{ArchSpec, ConvSpec};
use crate::autodiff::{BatchStats, Init, Tensor};
use crate::error::{Error, Result};
use crate::seed;

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// The three subnetworks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subnet {
    /// Feature extractor.
    F,
    /// Label predictor.
    G,
    /// Bias predictor.
    H,
}

impl Subnet {
    pub const ALL: [Subnet; 3] = [Subnet::F, Subnet::G, Subnet::H];

    pub fn prefix(self) -> &'static str {
        match self {
            Subnet::F => "f",
            Subnet::G => "g",
            Subnet::H => "h",
        }
    }

    pub fn of(name: &str) -> Option<Subnet> {
        match name.split('.').next()? {
            "f" => Some(Subnet::F),
            "g" => Some(Subnet::G),
            "h" => Some(Subnet::H),
            _ => None,
        }
    }
}

pub(crate) fn conv_name(net: Subnet, i: usize) -> String {
    format!("{}.conv{i}.weight", net.prefix())
}

pub(crate) fn bn_names(net: Subnet, i: usize) -> [String; 4] {
    let p = net.prefix();
    [
        format!("{p}.bn{i}.gamma"),
        format!("{p}.bn{i}.beta"),
        format!("{p}.bn{i}.running_mean"),
        format!("{p}.bn{i}.running_var"),
    ]
}

pub(crate) const G_FC_WEIGHT: &str = "g.fc.weight";
pub(crate) const G_FC_BIAS: &str = "g.fc.bias";
pub(crate) const H_HEAD_WEIGHT: &str = "h.head.weight";
pub(crate) const H_HEAD_BIAS: &str = "h.head.bias";

/// Batch statistics observed by one train-mode batch-norm layer, keyed by the
/// layer's gamma name.
#[derive(Debug, Clone)]
pub struct NormUpdate {
    pub(crate) layer: String,
    pub(crate) stats: BatchStats,
}

/// Trainable tensors of `f`, `g`, `h` plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub arch: ArchSpec,
    pub(crate) params: BTreeMap<String, Tensor>,
    pub(crate) buffers: BTreeMap<String, Tensor>,
}

impl ParamSet {
    /// Scaled-normal convolution / FC weights, zero biases, BN gamma 1 and beta 0,
    /// running mean 0 and variance 1. Each tensor draws from its own seed stream.
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        let weight = |name: &str, shape: &[usize]| {
            Tensor::new(
                shape,
                Init::ScaledNormal {
                    seed: seed::derive_named(seed, name),
                },
            )
        };
        let mut blocks = |net: Subnet, mut c: usize, convs: &[ConvSpec]| -> usize {
            for (i, conv) in convs.iter().enumerate() {
                let name = conv_name(net, i);
                let w = weight(&name, &[conv.out_channels, c, conv.kernel, conv.kernel]);
                params.insert(name, w);
                let [gamma, beta, mean, var] = bn_names(net, i);
                let ch = [conv.out_channels];
                params.insert(gamma, Tensor::new(&ch, Init::Ones));
                params.insert(beta, Tensor::zeros(&ch));
                buffers.insert(mean, Tensor::zeros(&ch));
                buffers.insert(var, Tensor::new(&ch, Init::Ones));
                c = conv.out_channels;
            }
            c
        };
        let feat = blocks(Subnet::F, arch.input[0], &arch.f);
        let cg = blocks(Subnet::G, feat, &arch.g);
        let ch = blocks(Subnet::H, feat, &arch.h);
        params.insert(G_FC_WEIGHT.into(), weight(G_FC_WEIGHT, &[arch.num_classes, cg]));
        params.insert(G_FC_BIAS.into(), Tensor::zeros(&[arch.num_classes]));
        let head = arch.bias_channels * arch.levels;
        params.insert(H_HEAD_WEIGHT.into(), weight(H_HEAD_WEIGHT, &[head, ch, 1, 1]));
        params.insert(H_HEAD_BIAS.into(), Tensor::zeros(&[head]));
        Ok(ParamSet {
            arch: arch.clone(),
            params,
            buffers,
        })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Trainable tensors in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.buffers.iter()
    }

    pub fn names_of(&self, net: Subnet) -> impl Iterator<Item = &String> {
        self.params.keys().filter(move |k| Subnet::of(k) == Some(net))
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Folds observed batch statistics into the running estimates.
    pub fn apply_norm_updates(&mut self, updates: &[NormUpdate]) -> Result<()> {
        for u in updates {
            let base = u
                .layer
                .strip_suffix(".gamma")
                .ok_or_else(|| Error::MissingParam(u.layer.clone()))?;
            for (suffix, observed) in [("running_mean", &u.stats.mean), ("running_var", &u.stats.var)] {
                let key = format!("{base}.{suffix}");
                let buf = self
                    .buffers
                    .get_mut(&key)
                    .ok_or_else(|| Error::MissingParam(key.clone()))?;
                for (r, o) in buf.data_mut().iter_mut().zip(observed) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * o;
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and exact bit patterns of every tensor.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in self.params.iter().chain(self.buffers.iter()) {
            hasher.update(name.as_bytes());
            for d in t.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}
