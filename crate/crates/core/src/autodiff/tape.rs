//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive appends a node holding its output value and whatever it
//! needs for the backward pass. Node ids grow monotonically, so the node list
//! is already in topological order and [`Tape::backward`] is a single reverse
//! sweep. A tape lives for one training step and is dropped afterwards.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{col2im_add, gemm, im2col, ConvGeom, Layout};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
}

/// Which statistics a batch-norm node normalises with.
#[derive(Debug, Clone)]
pub enum NormStats<'a> {
    /// Per-channel statistics of the current batch.
    Batch { eps: f64 },
    /// Fixed running statistics (evaluation mode).
    Running {
        mean: &'a [f64],
        var: &'a [f64],
        eps: f64,
    },
}

/// Per-channel batch statistics observed by a train-mode batch-norm node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n-1) variance, the quantity folded into running estimates.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    Mean(usize),
    Exp(usize),
    Relu(usize),
    MatMul(usize, usize),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch: bool,
    },
    GlobalAvgPool(usize),
    Reshape(usize),
    LogSoftmax {
        x: usize,
        axis: usize,
    },
    Nll {
        logp: usize,
        axis: usize,
        labels: Vec<usize>,
    },
    GradReverse {
        x: usize,
        scale: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation of one forward pass.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Splits `shape` around `axis` into `(outer, extent, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// A constant copy of `x`: same value, no gradient flows back through it.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        let value = self.node(x)?.value.clone();
        Ok(self.constant(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.id].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    fn node(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::ForeignNode);
        }
        Ok(&self.nodes[v.id])
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, id }
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if cfg!(debug_assertions) {
            value.check_finite(name)?;
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        ta.same_shape(tb, "add")?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        self.push("add", out, Op::Add(a.id, b.id), &[a.id, b.id])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        ta.same_shape(tb, "mul")?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        self.push("mul", out, Op::Mul(a.id, b.id), &[a.id, b.id])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = &self.node(a)?.value;
        let out = Tensor::from_vec(ta.shape(), ta.data().iter().map(|x| c * x).collect())?;
        self.push("scale", out, Op::Scale(a.id, c), &[a.id])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.node(a)?.value.data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a.id), &[a.id])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.node(a)?.value;
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a.id), &[a.id])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ta = &self.node(a)?.value;
        let out = Tensor::from_vec(ta.shape(), ta.data().iter().map(|x| x.exp()).collect())?;
        self.push("exp", out, Op::Exp(a.id), &[a.id])
    }

    /// Elementwise `max(0, x)`. The derivative at exactly 0 is taken to be 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = &self.node(a)?.value;
        let out = Tensor::from_vec(ta.shape(), ta.data().iter().map(|&x| x.max(0.0)).collect())?;
        self.push("relu", out, Op::Relu(a.id), &[a.id])
    }

    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            ta.data(),
            Layout::row_major(k),
            tb.data(),
            Layout::row_major(n),
            0.0,
            &mut out,
        );
        let out = Tensor::from_vec(&[m, n], out)?;
        self.push("matmul", out, Op::MatMul(a.id, b.id), &[a.id, b.id])
    }

    /// Fully connected layer `x·wᵀ + b` with `x: [n,in]`, `w: [out,in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (&self.node(x)?.value, &self.node(w)?.value);
        if tx.ndim() != 2 || tw.ndim() != 2 || tx.shape()[1] != tw.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                left: tx.shape().to_vec(),
                right: tw.shape().to_vec(),
            });
        }
        let (n, fan_in, fan_out) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
        let mut out = vec![0.0; n * fan_out];
        if let Some(b) = b {
            let tb = &self.node(b)?.value;
            if tb.shape() != [fan_out] {
                return Err(Error::ShapeMismatch {
                    op: "linear bias",
                    left: vec![fan_out],
                    right: tb.shape().to_vec(),
                });
            }
            for row in out.chunks_exact_mut(fan_out) {
                row.copy_from_slice(tb.data());
            }
        }
        gemm(
            n,
            fan_in,
            fan_out,
            1.0,
            tx.data(),
            Layout::row_major(fan_in),
            tw.data(),
            Layout::transposed(fan_in),
            1.0,
            &mut out,
        );
        let out = Tensor::from_vec(&[n, fan_out], out)?;
        let mut inputs = vec![x.id, w.id];
        inputs.extend(b.map(|b| b.id));
        self.push(
            "linear",
            out,
            Op::Linear {
                x: x.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
            &inputs,
        )
    }

    /// 2-D cross-correlation: `x: [n,c,h,w]`, `kernel: [f,c,kh,kw]`, `bias: [f]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (tx, tk) = (&self.node(x)?.value, &self.node(kernel)?.value);
        if tx.ndim() != 4 || tk.ndim() != 4 || tx.shape()[1] != tk.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: tx.shape().to_vec(),
                right: tk.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let (n, c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let (f, kh, kw) = (tk.shape()[0], tk.shape()[2], tk.shape()[3]);
        // Output extents are floored; trailing rows a stride cannot reach are dropped.
        let out_extent = |size: usize, k: usize| -> Result<usize> {
            let span = (size + 2 * pad).checked_sub(k).ok_or(Error::ConvGeometry {
                size,
                kernel: k,
                pad,
            })?;
            Ok(span / stride + 1)
        };
        let geom = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: out_extent(h, kh)?,
            ow: out_extent(w, kw)?,
        };
        let bias_data = match bias {
            Some(b) => {
                let tb = &self.node(b)?.value;
                if tb.shape() != [f] {
                    return Err(Error::ShapeMismatch {
                        op: "conv2d bias",
                        left: vec![f],
                        right: tb.shape().to_vec(),
                    });
                }
                Some(tb.data())
            }
            None => None,
        };

        let (patch, area) = (geom.patch(), geom.out_area());
        let mut out = vec![0.0; n * f * area];
        let mut cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; patch * area]
        };
        for (img, dst) in tx
            .data()
            .chunks_exact(c * h * w)
            .zip(out.chunks_exact_mut(f * area))
        {
            if let Some(bd) = bias_data {
                for (plane, &bv) in dst.chunks_exact_mut(area).zip(bd) {
                    plane.fill(bv);
                }
            }
            let src: &[f64] = if geom.is_pointwise() {
                img
            } else {
                im2col(img, &geom, &mut cols);
                &cols
            };
            gemm(
                f,
                patch,
                area,
                1.0,
                tk.data(),
                Layout::row_major(patch),
                src,
                Layout::row_major(area),
                1.0,
                dst,
            );
        }
        let out = Tensor::from_vec(&[n, f, geom.oh, geom.ow], out)?;
        let mut inputs = vec![x.id, kernel.id];
        inputs.extend(bias.map(|b| b.id));
        self.push(
            "conv2d",
            out,
            Op::Conv2d {
                x: x.id,
                w: kernel.id,
                b: bias.map(|b| b.id),
                geom,
            },
            &inputs,
        )
    }

    /// Per-channel normalisation of `x: [n,c,h,w]` followed by `gamma·x̂ + beta`.
    ///
    /// With [`NormStats::Batch`] the batch statistics are returned so the caller
    /// can fold them into running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let tx = &self.node(x)?.value;
        let (tg, tb) = (&self.node(gamma)?.value, &self.node(beta)?.value);
        if tx.ndim() != 4 || tg.shape() != [tx.shape()[1]] || tb.shape() != tg.shape() {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                left: tx.shape().to_vec(),
                right: tg.shape().to_vec(),
            });
        }
        let (n, c, hw) = (tx.shape()[0], tx.shape()[1], tx.shape()[2] * tx.shape()[3]);
        let count = n * hw;
        let (mean, inv_std, observed, batch) = match stats {
            NormStats::Batch { eps } => {
                if count < 2 {
                    return Err(Error::BatchTooSmall(count));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for img in 0..n {
                        let base = (img * c + ch) * hw;
                        s += tx.data()[base..base + hw].iter().sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut ss = 0.0;
                    for img in 0..n {
                        let base = (img * c + ch) * hw;
                        ss += tx.data()[base..base + hw]
                            .iter()
                            .map(|v| (v - m).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = ss / count as f64;
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let unbiased = var
                    .iter()
                    .map(|v| v * count as f64 / (count - 1) as f64)
                    .collect();
                let observed = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, inv_std, Some(observed), true)
            }
            NormStats::Running { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::ShapeMismatch {
                        op: "batch_norm running stats",
                        left: vec![c],
                        right: vec![mean.len(), var.len()],
                    });
                }
                let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                (mean.to_vec(), inv_std, None, false)
            }
        };
        let mut xhat = vec![0.0; tx.len()];
        let mut out = vec![0.0; tx.len()];
        for img in 0..n {
            for ch in 0..c {
                let base = (img * c + ch) * hw;
                let (g, b) = (tg.data()[ch], tb.data()[ch]);
                for i in base..base + hw {
                    let z = (tx.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = z;
                    out[i] = g * z + b;
                }
            }
        }
        let out = Tensor::from_vec(tx.shape(), out)?;
        let var = self.push(
            "batch_norm",
            out,
            Op::BatchNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                batch,
            },
            &[x.id, gamma.id, beta.id],
        )?;
        Ok((var, observed))
    }

    /// `[n,c,h,w] -> [n,c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let tx = &self.node(x)?.value;
        if tx.ndim() != 4 {
            return Err(Error::ShapeMismatch {
                op: "global_avg_pool",
                left: tx.shape().to_vec(),
                right: vec![],
            });
        }
        let (n, c, hw) = (tx.shape()[0], tx.shape()[1], tx.shape()[2] * tx.shape()[3]);
        let data = tx
            .data()
            .chunks_exact(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let out = Tensor::from_vec(&[n, c], data)?;
        self.push("global_avg_pool", out, Op::GlobalAvgPool(x.id), &[x.id])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.node(x)?.value.clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x.id), &[x.id])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let nd = self.node(x)?.value.ndim();
        if nd == 0 {
            return Err(Error::ShapeMismatch {
                op: "log_softmax",
                left: vec![],
                right: vec![],
            });
        }
        self.log_softmax_axis(x, nd - 1)
    }

    /// Log-softmax over `axis`, shifted by the per-slice maximum.
    pub fn log_softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = &self.node(x)?.value;
        if axis >= tx.ndim() || tx.shape()[axis] == 0 {
            return Err(Error::ShapeMismatch {
                op: "log_softmax",
                left: tx.shape().to_vec(),
                right: vec![axis],
            });
        }
        let (outer, k, inner) = split_axis(tx.shape(), axis);
        let src = tx.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * k + j) * inner + i;
                let max = (0..k).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..k).map(|j| (src[at(j)] - max).exp()).sum::<f64>().ln();
                for j in 0..k {
                    out[at(j)] = src[at(j)] - lse;
                }
            }
        }
        let out = Tensor::from_vec(tx.shape(), out)?;
        self.push("log_softmax", out, Op::LogSoftmax { x: x.id, axis }, &[x.id])
    }

    /// Mean negative log-likelihood: `-mean(logp[label])` where the class axis
    /// is `axis` and `labels` enumerates every other position in row-major order.
    pub fn nll(&mut self, logp: Var, axis: usize, labels: &[usize]) -> Result<Var> {
        let tl = &self.node(logp)?.value;
        if axis >= tl.ndim() {
            return Err(Error::ShapeMismatch {
                op: "nll",
                left: tl.shape().to_vec(),
                right: vec![axis],
            });
        }
        let (outer, k, inner) = split_axis(tl.shape(), axis);
        if labels.len() != outer * inner || labels.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "nll labels",
                left: vec![outer * inner],
                right: vec![labels.len()],
            });
        }
        let mut total = 0.0;
        for (pos, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
            let (o, i) = (pos / inner, pos % inner);
            total += tl.data()[(o * k + label) * inner + i];
        }
        let loss = -total / labels.len() as f64;
        self.push(
            "nll",
            Tensor::scalar(loss),
            Op::Nll {
                logp: logp.id,
                axis,
                labels: labels.to_vec(),
            },
            &[logp.id],
        )
    }

    /// Identity on the forward pass; multiplies the incoming gradient by `-scale`.
    pub fn grad_reverse(&mut self, x: Var, scale: f64) -> Result<Var> {
        let out = self.node(x)?.value.clone();
        self.push("grad_reverse", out, Op::GradReverse { x: x.id, scale }, &[x.id])
    }

    /// Gradients of the scalar `loss` with respect to every recorded node that
    /// depends on a differentiable leaf. Fan-out contributions are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.id + 1);
        grads.resize_with(loss.id + 1, || None);
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }

        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(id);
            let Some(g) = rest[0].as_deref() else {
                continue;
            };
            self.propagate(node, g, before);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|data| {
                    Tensor::from_vec(self.nodes[id].value.shape(), data)
                        .expect("gradient matches node shape")
                })
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Accumulates into input `i` only when it participates in differentiation.
        let mut acc = |i: usize, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[i].requires_grad {
                let slot = grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]);
                f(slot);
            }
        };
        let val = |i: usize| nodes[i].value.data();

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &i in &[*a, *b] {
                    acc(i, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(vb) {
                        *d += g * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(va) {
                        *d += g * x;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)
            }),
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let share = g[0] / nodes[*a].value.len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += share));
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * y;
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(x) {
                        if *x > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (val(*a), val(*b));
                // dA = G·Bᵀ, dB = Aᵀ·G
                acc(*a, &mut |d| {
                    gemm(m, n, k, 1.0, g, Layout::row_major(n), vb, Layout::transposed(n), 1.0, d)
                });
                acc(*b, &mut |d| {
                    gemm(k, m, n, 1.0, va, Layout::transposed(k), g, Layout::row_major(n), 1.0, d)
                });
            }
            Op::Linear { x, w, b } => {
                let sw = nodes[*w].value.shape();
                let (fan_out, fan_in) = (sw[0], sw[1]);
                let n = nodes[*x].value.shape()[0];
                let (vx, vw) = (val(*x), val(*w));
                acc(*x, &mut |d| {
                    gemm(
                        n,
                        fan_out,
                        fan_in,
                        1.0,
                        g,
                        Layout::row_major(fan_out),
                        vw,
                        Layout::row_major(fan_in),
                        1.0,
                        d,
                    )
                });
                acc(*w, &mut |d| {
                    gemm(
                        fan_out,
                        n,
                        fan_in,
                        1.0,
                        g,
                        Layout::transposed(fan_out),
                        vx,
                        Layout::row_major(fan_in),
                        1.0,
                        d,
                    )
                });
                if let Some(b) = b {
                    acc(*b, &mut |d| {
                        for row in g.chunks_exact(fan_out) {
                            d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                        }
                    });
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let f = nodes[*w].value.shape()[0];
                let (patch, area) = (geom.patch(), geom.out_area());
                let img_len = geom.c * geom.h * geom.w;
                let (vx, vw) = (val(*x), val(*w));
                let mut cols = vec![0.0; patch * area];
                if nodes[*w].requires_grad {
                    acc(*w, &mut |d| {
                        for (img, go) in vx.chunks_exact(img_len).zip(g.chunks_exact(f * area)) {
                            let src: &[f64] = if geom.is_pointwise() {
                                img
                            } else {
                                im2col(img, geom, &mut cols);
                                &cols
                            };
                            // dW += dOut · colsᵀ
                            gemm(
                                f,
                                area,
                                patch,
                                1.0,
                                go,
                                Layout::row_major(area),
                                src,
                                Layout::transposed(area),
                                1.0,
                                d,
                            );
                        }
                    });
                }
                if let Some(b) = b {
                    acc(*b, &mut |d| {
                        for go in g.chunks_exact(f * area) {
                            for (d, plane) in d.iter_mut().zip(go.chunks_exact(area)) {
                                *d += plane.iter().sum::<f64>();
                            }
                        }
                    });
                }
                acc(*x, &mut |d| {
                    for (dimg, go) in d.chunks_exact_mut(img_len).zip(g.chunks_exact(f * area)) {
                        if geom.is_pointwise() {
                            gemm(
                                patch,
                                f,
                                area,
                                1.0,
                                vw,
                                Layout::transposed(patch),
                                go,
                                Layout::row_major(area),
                                1.0,
                                dimg,
                            );
                        } else {
                            // dcols = Wᵀ · dOut, then fold back onto the image
                            gemm(
                                patch,
                                f,
                                area,
                                1.0,
                                vw,
                                Layout::transposed(patch),
                                go,
                                Layout::row_major(area),
                                0.0,
                                &mut cols,
                            );
                            col2im_add(&cols, geom, dimg);
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            } => {
                let shape = nodes[*x].value.shape();
                let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let count = (n * hw) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for img in 0..n {
                    for ch in 0..c {
                        let base = (img * c + ch) * hw;
                        for i in base..base + hw {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                acc(*gamma, &mut |d| d.iter_mut().zip(&sum_gx).for_each(|(d, s)| *d += s));
                acc(*beta, &mut |d| d.iter_mut().zip(&sum_g).for_each(|(d, s)| *d += s));
                let vg = val(*gamma);
                acc(*x, &mut |d| {
                    for img in 0..n {
                        for ch in 0..c {
                            let base = (img * c + ch) * hw;
                            let k = vg[ch] * inv_std[ch];
                            for i in base..base + hw {
                                d[i] += if *batch {
                                    k / count
                                        * (count * g[i] - sum_g[ch] - xhat[i] * sum_gx[ch])
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let s = nodes[*x].value.shape();
                let hw = s[2] * s[3];
                acc(*x, &mut |d| {
                    for (plane, gv) in d.chunks_exact_mut(hw).zip(g) {
                        let share = gv / hw as f64;
                        plane.iter_mut().for_each(|d| *d += share);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::LogSoftmax { x, axis } => {
                let y = node.value.data();
                let (outer, k, inner) = split_axis(node.value.shape(), *axis);
                acc(*x, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * k + j) * inner + i;
                            let total: f64 = (0..k).map(|j| g[at(j)]).sum();
                            for j in 0..k {
                                d[at(j)] += g[at(j)] - y[at(j)].exp() * total;
                            }
                        }
                    }
                });
            }
            Op::Nll { logp, axis, labels } => {
                let (_, k, inner) = split_axis(nodes[*logp].value.shape(), *axis);
                let share = -g[0] / labels.len() as f64;
                acc(*logp, &mut |d| {
                    for (pos, &label) in labels.iter().enumerate() {
                        let (o, i) = (pos / inner, pos % inner);
                        d[(o * k + label) * inner + i] += share;
                    }
                });
            }
            Op::GradReverse { x, scale } => {
                let s = -scale;
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g));
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any flowed into it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`], materialising a zero tensor when nothing flowed in.
    pub fn get_or_zeros(&self, v: Var, tape: &Tape) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}
