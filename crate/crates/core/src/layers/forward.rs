use std::collections::BTreeMap;

use super::arch::ConvSpec;
use super::params::{
    bn_names, conv_name, NormUpdate, ParamSet, Subnet, BN_EPS, G_FC_BIAS, G_FC_WEIGHT,
    H_HEAD_BIAS, H_HEAD_WEIGHT,
};
use crate::autodiff::{NormStats, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are reported back for updating.
    Train,
    /// Running statistics; every sample is processed independently.
    Eval,
}

/// One subnetwork's parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct Binding {
    net: Subnet,
    vars: BTreeMap<String, Var>,
}

impl Binding {
    /// Records every parameter of `net`; `trainable = false` makes them constants
    /// so no gradient reaches them through this binding.
    pub fn new(tape: &mut Tape, params: &ParamSet, net: Subnet, trainable: bool) -> Self {
        let vars = params
            .names_of(net)
            .map(|name| {
                let t = params.params[name].clone();
                let v = if trainable {
                    tape.leaf(t)
                } else {
                    tape.constant(t)
                };
                (name.clone(), v)
            })
            .collect();
        Binding { net, vars }
    }

    pub fn net(&self) -> Subnet {
        self.net
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Output of a subnetwork forward pass.
#[derive(Debug)]
pub struct Output {
    pub value: Var,
    /// Batch statistics seen by train-mode batch-norm layers.
    pub norm_updates: Vec<NormUpdate>,
}

fn check_shape(tape: &Tape, x: Var, expected: &[usize], op: &'static str) -> Result<usize> {
    let shape = tape.value(x).shape();
    if shape.len() != 4 || shape[1..] != *expected {
        let mut want = vec![0];
        want.extend_from_slice(expected);
        return Err(Error::ShapeMismatch {
            op,
            left: shape.to_vec(),
            right: want,
        });
    }
    Ok(shape[0])
}

fn conv_blocks(
    tape: &mut Tape,
    params: &ParamSet,
    bind: &Binding,
    convs: &[ConvSpec],
    mut x: Var,
    mode: Mode,
    updates: &mut Vec<NormUpdate>,
) -> Result<Var> {
    let net = bind.net;
    for (i, conv) in convs.iter().enumerate() {
        let w = bind.var(&conv_name(net, i))?;
        let c = tape.conv2d(x, w, None, conv.stride, conv.pad)?;
        let [gamma, beta, mean, var] = bn_names(net, i);
        let (gv, bv) = (bind.var(&gamma)?, bind.var(&beta)?);
        let stats = match mode {
            Mode::Train => NormStats::Batch { eps: BN_EPS },
            Mode::Eval => NormStats::Running {
                mean: params.buffer(&mean)?.data(),
                var: params.buffer(&var)?.data(),
                eps: BN_EPS,
            },
        };
        let (y, observed) = tape.batch_norm(c, gv, bv, stats)?;
        if let Some(stats) = observed {
            updates.push(NormUpdate {
                layer: gamma,
                stats,
            });
        }
        x = tape.relu(y)?;
    }
    Ok(x)
}

/// Feature extractor: `[n, 3, 28, 28] -> [n, 32, 14, 14]` for the default layout.
pub fn forward_f(
    tape: &mut Tape,
    params: &ParamSet,
    bind: &Binding,
    x: Var,
    mode: Mode,
) -> Result<Output> {
    debug_assert_eq!(bind.net, Subnet::F);
    check_shape(tape, x, &params.arch.input, "forward_f input")?;
    let mut norm_updates = Vec::new();
    let value = conv_blocks(tape, params, bind, &params.arch.f, x, mode, &mut norm_updates)?;
    Ok(Output {
        value,
        norm_updates,
    })
}

/// Label predictor: features to `[n, num_classes]` logits.
pub fn forward_g(
    tape: &mut Tape,
    params: &ParamSet,
    bind: &Binding,
    feat: Var,
    mode: Mode,
) -> Result<Output> {
    debug_assert_eq!(bind.net, Subnet::G);
    check_shape(tape, feat, &params.arch.feature_shape(), "forward_g input")?;
    let mut norm_updates = Vec::new();
    let x = conv_blocks(tape, params, bind, &params.arch.g, feat, mode, &mut norm_updates)?;
    let pooled = tape.global_avg_pool(x)?;
    let value = tape.linear(pooled, bind.var(G_FC_WEIGHT)?, Some(bind.var(G_FC_BIAS)?))?;
    Ok(Output {
        value,
        norm_updates,
    })
}

/// Bias predictor: features to `[n, bias_channels, levels, grid, grid]` logits.
pub fn forward_h(
    tape: &mut Tape,
    params: &ParamSet,
    bind: &Binding,
    feat: Var,
    mode: Mode,
) -> Result<Output> {
    debug_assert_eq!(bind.net, Subnet::H);
    let n = check_shape(tape, feat, &params.arch.feature_shape(), "forward_h input")?;
    let mut norm_updates = Vec::new();
    let x = conv_blocks(tape, params, bind, &params.arch.h, feat, mode, &mut norm_updates)?;
    let head = tape.conv2d(
        x,
        bind.var(H_HEAD_WEIGHT)?,
        Some(bind.var(H_HEAD_BIAS)?),
        1,
        0,
    )?;
    let arch = &params.arch;
    let grid = arch.bias_grid();
    let value = tape.reshape(head, &[n, arch.bias_channels, arch.levels, grid, grid])?;
    Ok(Output {
        value,
        norm_updates,
    })
}
