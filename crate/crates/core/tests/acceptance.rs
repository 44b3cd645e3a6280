//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion
//! followed by the individual checks, and exits non-zero if any criterion
//! fails. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 4 9`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use unlearn::autodiff::{
    finite_diff_grad, max_rel_error, sgd_momentum_step, Init, NormStats, OptimState, Tape, Tensor, Var,
};
use unlearn::cli::Scale;
use unlearn::datagen::{
    build_test_set, build_train_set, recolor_fixed, synth_digits, BiasedDataset, ColorSpec, RawDigits,
};
use unlearn::eval::{bias_leakage_probe, discrete_mi, mi_diagnostics, ProbeConfig};
use unlearn::layers::{
    forward_f, forward_g, forward_h, gradient_reversal, ArchSpec, Binding, Mode, ParamSet, Subnet,
};
use unlearn::objectives::{
    bias_loss, classification_loss, confusion_loss, extract_features, minimax_step,
    negative_conditional_entropy, predict, step_gradients, train, Batch, LossWeights, Method,
    Schedule, TrainConfig,
};
use unlearn::seed;

// Tolerances and thresholds, one per criterion clause.
const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_SEEDS: u64 = 5;
const FD_BUDGET_S: f64 = 60.0;
const ROUTING_TOL: f64 = 1e-10;
const SAMPLER_SIGMA2: f64 = 0.02;
// well above the 5,000 minimum so the standard error (about 0.002) is small
// next to the 0.02 tolerances
const SAMPLES_PER_CLASS: usize = 20_000;
const TRAIN_MEAN_TOL: f64 = 0.02;
const HALF_NORMAL_TOL: f64 = 0.01;
const TEST_MEAN_TOL: f64 = 0.02;
const SAMPLER_BUDGET_S: f64 = 30.0;
const MI_TRAIN_MIN: f64 = 1.5;
const MI_TEST_MAX: f64 = 0.02;
const MI_SAMPLES: usize = 10_000;
const DESK_SIGMA2: f64 = 0.02;
const DESK_SEEDS: u64 = 3;
const DEBIAS_GAP: f64 = 0.10;
const VERTICAL_SHARE: f64 = 0.5;
const VERTICAL_COLORS: usize = 7;
const PROBE_BASELINE_MIN: f64 = 0.5;
const PROBE_OURS_MAX: f64 = 0.3;
const PROBE_GAP: f64 = 0.2;
const MI_EXACT_TOL: f64 = 1e-12;

/// "Sampled Mean - Train" per digit, in 0..255.
const TRAIN_SAMPLED_MEANS: [[f64; 3]; 10] = [
    [214.0, 39.0, 76.0],
    [29.0, 127.0, 127.0],
    [225.0, 211.0, 40.0],
    [29.0, 129.0, 194.0],
    [221.0, 128.0, 54.0],
    [143.0, 43.0, 184.0],
    [72.0, 219.0, 219.0],
    [223.0, 186.0, 186.0],
    [201.0, 221.0, 63.0],
    [127.0, 28.0, 28.0],
];
const TEN_COLOR_AVERAGE: [f64; 3] = [0.593, 0.544, 0.429];

#[derive(Default)]
struct Verdict {
    checks: Vec<(bool, String)>,
    notes: Vec<String>,
}

impl Verdict {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.checks.push((ok, what.into()));
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|(ok, _)| *ok)
    }
}

fn uniform(shape: &[usize], low: f64, high: f64, seed: u64) -> Tensor {
    Tensor::new(shape, Init::Uniform { low, high, seed })
}

// ---------------------------------------------------------------- criterion 1

/// Largest relative error between tape and central-difference gradients of
/// `build` with respect to every input.
fn grad_error(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], &tape);
        let numeric = finite_diff_grad(
            |probe| {
                let mut tp = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, v)| tp.leaf(if j == k { probe.clone() } else { v.clone() }))
                    .collect();
                let l = build(&mut tp, &vs);
                tp.value(l).item()
            },
            x,
            FD_EPS,
        );
        worst = worst.max(max_rel_error(&analytic, &numeric, 1e-6));
    }
    worst
}

/// Weighted sum with fixed random weights, so every output element matters.
fn weighted_sum(tape: &mut Tape, y: Var) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(uniform(&shape, -2.0, 2.0, 99));
    let p = tape.mul(y, w).unwrap();
    tape.sum(p).unwrap()
}

/// Moves elements at least `margin` away from zero (the ReLU kink).
fn off_kink(mut x: Tensor, margin: f64) -> Tensor {
    for v in x.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -2.0 * margin } else { 2.0 * margin };
        }
    }
    x
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

fn primitive_cases(s: u64) -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let u = |shape: &[usize], k: u64| uniform(shape, -2.0, 2.0, s * 31 + k);
    vec![
        ("add", vec![u(&[3, 4], 0), u(&[3, 4], 1)], Box::new(|t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            weighted_sum(t, y)
        })),
        ("mul", vec![u(&[3, 4], 0), u(&[3, 4], 1)], Box::new(|t, v| {
            let y = t.mul(v[0], v[1]).unwrap();
            weighted_sum(t, y)
        })),
        ("scale", vec![u(&[5], 0)], Box::new(|t, v| {
            let y = t.scale(v[0], -1.7).unwrap();
            weighted_sum(t, y)
        })),
        ("sum", vec![u(&[2, 3], 0)], Box::new(|t, v| {
            let y = t.mul(v[0], v[0]).unwrap();
            t.sum(y).unwrap()
        })),
        ("mean", vec![u(&[2, 3], 0)], Box::new(|t, v| {
            let y = t.mul(v[0], v[0]).unwrap();
            t.mean(y).unwrap()
        })),
        ("exp", vec![u(&[5], 0)], Box::new(|t, v| {
            let y = t.exp(v[0]).unwrap();
            weighted_sum(t, y)
        })),
        ("relu", vec![off_kink(u(&[12], 0), 1e-3)], Box::new(|t, v| {
            let y = t.relu(v[0]).unwrap();
            weighted_sum(t, y)
        })),
        ("matmul", vec![u(&[3, 4], 0), u(&[4, 2], 1)], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, y)
        })),
        ("linear", vec![u(&[3, 4], 0), u(&[5, 4], 1), u(&[5], 2)], Box::new(|t, v| {
            let y = t.linear(v[0], v[1], Some(v[2])).unwrap();
            weighted_sum(t, y)
        })),
        ("conv2d 3x3 stride 2", vec![u(&[2, 2, 5, 5], 0), u(&[3, 2, 3, 3], 1), u(&[3], 2)], Box::new(|t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap();
            weighted_sum(t, y)
        })),
        ("conv2d 1x1", vec![u(&[2, 3, 3, 3], 0), u(&[4, 3, 1, 1], 1)], Box::new(|t, v| {
            let y = t.conv2d(v[0], v[1], None, 1, 0).unwrap();
            weighted_sum(t, y)
        })),
        ("batch_norm batch stats", vec![u(&[3, 2, 2, 3], 0), u(&[2], 1), u(&[2], 2)], Box::new(|t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], NormStats::Batch { eps: 1e-5 }).unwrap();
            weighted_sum(t, y)
        })),
        ("batch_norm running stats", vec![u(&[3, 2, 2, 3], 0), u(&[2], 1), u(&[2], 2)], Box::new(|t, v| {
            let stats = NormStats::Running { mean: &[0.3, -0.2], var: &[1.5, 0.7], eps: 1e-5 };
            let (y, _) = t.batch_norm(v[0], v[1], v[2], stats).unwrap();
            weighted_sum(t, y)
        })),
        ("global_avg_pool", vec![u(&[2, 3, 2, 4], 0)], Box::new(|t, v| {
            let y = t.global_avg_pool(v[0]).unwrap();
            weighted_sum(t, y)
        })),
        ("reshape", vec![u(&[2, 6], 0)], Box::new(|t, v| {
            let y = t.reshape(v[0], &[3, 2, 2]).unwrap();
            weighted_sum(t, y)
        })),
        ("log_softmax", vec![u(&[3, 5], 0)], Box::new(|t, v| {
            let y = t.log_softmax(v[0]).unwrap();
            weighted_sum(t, y)
        })),
        ("log_softmax inner axis + nll", vec![u(&[2, 4, 3], 0)], Box::new(|t, v| {
            let y = t.log_softmax_axis(v[0], 1).unwrap();
            t.nll(y, 1, &[0, 3, 2, 1, 1, 3]).unwrap()
        })),
        // at scale -1 the reversed gradient is the true derivative of the identity
        ("gradient reversal, scale -1", vec![u(&[4], 0)], Box::new(|t, v| {
            let y = gradient_reversal(t, v[0], -1.0).unwrap();
            weighted_sum(t, y)
        })),
        ("classification loss", vec![u(&[3, 10], 0)], Box::new(|t, v| {
            classification_loss(t, v[0], &[1, 9, 4]).unwrap()
        })),
        ("bias loss", vec![u(&[2, 3, 8, 2, 2], 0)], Box::new(|t, v| {
            let levels: Vec<usize> = (0..24).map(|i| (i * 5) % 8).collect();
            bias_loss(t, v[0], &levels).unwrap()
        })),
        ("negative conditional entropy", vec![u(&[2, 3, 8, 2, 2], 0)], Box::new(|t, v| {
            negative_conditional_entropy(t, v[0]).unwrap()
        })),
        ("confusion loss", vec![u(&[2, 3, 8, 2, 2], 0)], Box::new(|t, v| confusion_loss(t, v[0]).unwrap())),
    ]
}

fn tiny_images(arch: &ArchSpec, n: usize, seed: u64) -> Tensor {
    let [c, h, w] = arch.input;
    uniform(&[n, c, h, w], 0.0, 1.0, seed)
}

fn tiny_batch(arch: &ArchSpec, n: usize, seed: u64) -> Batch {
    let grid = arch.bias_grid();
    Batch {
        images: tiny_images(arch, n, seed),
        labels: (0..n).map(|i| (i * 7 + seed as usize) % arch.num_classes).collect(),
        bias_labels: (0..n * arch.bias_channels * grid * grid)
            .map(|i| (i * 5 + seed as usize) % arch.levels)
            .collect(),
    }
}

/// `L_c(g(f(x)))` in training mode, and its gradient for every f and g tensor.
fn network_loss(params: &ParamSet, batch: &Batch, grads: bool) -> (f64, BTreeMap<String, Tensor>) {
    let mut tape = Tape::new();
    let x = tape.constant(batch.images.clone());
    let bf = Binding::new(&mut tape, params, Subnet::F, grads);
    let feat = forward_f(&mut tape, params, &bf, x, Mode::Train).unwrap().value;
    let bg = Binding::new(&mut tape, params, Subnet::G, grads);
    let logits = forward_g(&mut tape, params, &bg, feat, Mode::Train).unwrap().value;
    let loss = classification_loss(&mut tape, logits, &batch.labels).unwrap();
    let value = tape.value(loss).item();
    if !grads {
        return (value, BTreeMap::new());
    }
    let g = tape.backward(loss).unwrap();
    let out = bf.iter().chain(bg.iter()).map(|(k, v)| (k.clone(), g.get_or_zeros(*v, &tape))).collect();
    (value, out)
}

fn criterion_1() -> Verdict {
    let mut v = Verdict::default();
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for s in 0..FD_SEEDS {
        for (name, inputs, build) in primitive_cases(s) {
            let e = grad_error(&inputs, build.as_ref());
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(e);
        }
    }
    for (name, e) in &worst {
        v.check(*e <= FD_TOL, format!("{name}: max rel err {e:.2e} over {FD_SEEDS} seeds"));
    }

    let arch = ArchSpec::tiny();
    let mut net_worst: f64 = 0.0;
    for s in 0..FD_SEEDS {
        let params = ParamSet::init(&arch, 40 + s).unwrap();
        let batch = tiny_batch(&arch, 4, s);
        let (_, analytic) = network_loss(&params, &batch, true);
        for (name, grad) in &analytic {
            let numeric = finite_diff_grad(
                |probe| {
                    let mut p = params.clone();
                    *p.get_mut(name).unwrap() = probe.clone();
                    network_loss(&p, &batch, false).0
                },
                params.get(name).unwrap(),
                FD_EPS,
            );
            net_worst = net_worst.max(max_rel_error(grad, &numeric, 1e-6));
        }
    }
    v.check(
        net_worst <= FD_TOL,
        format!("composed L_c(g(f(x))) on the tiny network, every f and g tensor: max rel err {net_worst:.2e}"),
    );
    let secs = start.elapsed().as_secs_f64();
    v.check(secs < FD_BUDGET_S, format!("runtime {secs:.1}s < {FD_BUDGET_S}s"));
    v
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Verdict {
    let mut v = Verdict::default();
    for (i, scale) in [0.1, 1.0, 0.37, 0.0].into_iter().enumerate() {
        let x0 = uniform(&[4, 8, 7, 7], -3.0, 3.0, i as u64);
        let up = uniform(&[4, 8, 7, 7], -5.0, 5.0, 10 + i as u64);
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = gradient_reversal(&mut tape, x, scale).unwrap();
        let same = tape.value(y).data().iter().zip(x0.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        v.check(same, format!("scale {scale}: forward is bit-identical"));
        let u = tape.constant(up.clone());
        let p = tape.mul(y, u).unwrap();
        let loss = tape.sum(p).unwrap();
        let g = tape.backward(loss).unwrap();
        let exact = g.get(x).unwrap().data().iter().zip(up.data()).all(|(gx, u)| *gx == -(scale * u));
        v.check(exact, format!("scale {scale}: backward equals -scale * upstream exactly"));
    }

    let arch = ArchSpec::tiny();
    for schedule in [Schedule::Reversal, Schedule::Alternating, Schedule::AlternatingSignFlip] {
        let cfg = TrainConfig { method: Method::Ours, lambda: 0.0, mu: 0.0, schedule, ..TrainConfig::default() };
        let identical = (0..3).all(|seed| zero_weight_matches_sgd(&arch, &cfg, seed, |s| tiny_batch(&arch, 5, s)));
        v.check(identical, format!("{schedule}, lambda = mu = 0: 3 steps equal plain SGD bit-for-bit (tiny network)"));
    }
    let full = ArchSpec::colored_mnist();
    let raw = synth_digits(1, 7).unwrap();
    let ds = build_train_set(&raw, 0.02, 7).unwrap();
    let cfg = TrainConfig { method: Method::Ours, lambda: 0.0, mu: 0.0, ..TrainConfig::default() };
    let identical = zero_weight_matches_sgd(&full, &cfg, 1, |s| {
        let idx: Vec<usize> = (0..4).map(|i| (i * 3 + s as usize) % ds.len()).collect();
        Batch::from_dataset(&ds, &idx).unwrap()
    });
    v.check(identical, "reversal, lambda = mu = 0: 3 steps equal plain SGD bit-for-bit (full network)");
    v
}

/// Runs three minimax steps and three textbook SGD steps on `L_c` from the same
/// start and compares the parameters bit for bit.
fn zero_weight_matches_sgd(arch: &ArchSpec, cfg: &TrainConfig, seed: u64, batch: impl Fn(u64) -> Batch) -> bool {
    let mut params = ParamSet::init(arch, seed).unwrap();
    let mut reference = params.clone();
    let mut opt = OptimState::new(cfg.sgd(), params.iter()).unwrap();
    let mut velocity: BTreeMap<String, Tensor> =
        reference.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
    for step in 0..3 {
        let b = batch(step);
        minimax_step(&b, &mut params, &mut opt, cfg).unwrap();

        let mut tape = Tape::new();
        let x = tape.constant(b.images.clone());
        let bf = Binding::new(&mut tape, &reference, Subnet::F, true);
        let f = forward_f(&mut tape, &reference, &bf, x, Mode::Train).unwrap();
        let bg = Binding::new(&mut tape, &reference, Subnet::G, true);
        let g = forward_g(&mut tape, &reference, &bg, f.value, Mode::Train).unwrap();
        let loss = classification_loss(&mut tape, g.value, &b.labels).unwrap();
        let grads = tape.backward(loss).unwrap();
        let updates: Vec<_> = f.norm_updates.into_iter().chain(g.norm_updates).collect();
        for (name, var) in bf.iter().chain(bg.iter()) {
            let grad = grads.get(*var).unwrap().clone();
            let vel = velocity.get_mut(name).unwrap();
            sgd_momentum_step(reference.get_mut(name).unwrap(), &grad, vel, &cfg.sgd()).unwrap();
        }
        reference.apply_norm_updates(&updates).unwrap();
        if params.fingerprint() != reference.fingerprint() {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------- criterion 3

#[derive(Clone, Copy)]
enum Term {
    Classification,
    Entropy,
    Bias,
}

/// Gradient of one loss term alone, with only `trainable`'s tensors as leaves.
fn single_term(params: &ParamSet, batch: &Batch, term: Term, trainable: Subnet) -> BTreeMap<String, Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(batch.images.clone());
    let bf = Binding::new(&mut tape, params, Subnet::F, trainable == Subnet::F);
    let feat = forward_f(&mut tape, params, &bf, x, Mode::Train).unwrap().value;
    let (loss, head) = match term {
        Term::Classification => {
            let bg = Binding::new(&mut tape, params, Subnet::G, trainable == Subnet::G);
            let logits = forward_g(&mut tape, params, &bg, feat, Mode::Train).unwrap().value;
            (classification_loss(&mut tape, logits, &batch.labels).unwrap(), bg)
        }
        Term::Entropy | Term::Bias => {
            let bh = Binding::new(&mut tape, params, Subnet::H, trainable == Subnet::H);
            let logits = forward_h(&mut tape, params, &bh, feat, Mode::Train).unwrap().value;
            let loss = match term {
                Term::Entropy => negative_conditional_entropy(&mut tape, logits).unwrap(),
                _ => bias_loss(&mut tape, logits, &batch.bias_labels).unwrap(),
            };
            (loss, bh)
        }
    };
    let grads = tape.backward(loss).unwrap();
    bf.iter()
        .chain(head.iter())
        .filter_map(|(k, v)| grads.get(*v).map(|g| (k.clone(), g.clone())))
        .collect()
}

fn max_abs_diff(a: &Tensor, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_3() -> Verdict {
    let mut v = Verdict::default();
    let arch = ArchSpec::tiny();
    let defaults = TrainConfig::default();
    for w in [
        LossWeights { entropy: defaults.lambda, confusion: 0.0, bias: defaults.mu, grl_scale: defaults.grl_scale },
        LossWeights { entropy: 0.37, confusion: 0.0, bias: 1.9, grl_scale: 0.23 },
    ] {
        let (mut f_err, mut h_err, mut g_err) = (0.0f64, 0.0f64, 0.0f64);
        for seed in 0..5 {
            let params = ParamSet::init(&arch, 100 + seed).unwrap();
            let batch = tiny_batch(&arch, 6, seed);
            let total = step_gradients(&params, &batch, &w).unwrap().grads;
            let lc = single_term(&params, &batch, Term::Classification, Subnet::F);
            let ne = single_term(&params, &batch, Term::Entropy, Subnet::F);
            let lb = single_term(&params, &batch, Term::Bias, Subnet::F);
            for name in params.names_of(Subnet::F) {
                let want: Vec<f64> = (0..lc[name].len())
                    .map(|i| lc[name].data()[i] + w.entropy * ne[name].data()[i] - w.grl_scale * w.bias * lb[name].data()[i])
                    .collect();
                f_err = f_err.max(max_abs_diff(&total[name], &want));
            }
            let lb_h = single_term(&params, &batch, Term::Bias, Subnet::H);
            for name in params.names_of(Subnet::H) {
                let want: Vec<f64> = lb_h[name].data().iter().map(|g| w.bias * g).collect();
                h_err = h_err.max(max_abs_diff(&total[name], &want));
            }
            let lc_g = single_term(&params, &batch, Term::Classification, Subnet::G);
            for name in params.names_of(Subnet::G) {
                g_err = g_err.max(max_abs_diff(&total[name], lc_g[name].data()));
            }
        }
        let tag = format!("lambda {} mu {} grl {}", w.entropy, w.bias, w.grl_scale);
        v.check(f_err <= ROUTING_TOL, format!("{tag}: f gradient = dL_c + lambda dnegent - grl mu dL_B, max diff {f_err:.1e}"));
        v.check(h_err <= ROUTING_TOL, format!("{tag}: h gradient = mu dL_B only, max diff {h_err:.1e}"));
        v.check(g_err <= ROUTING_TOL, format!("{tag}: g gradient = dL_c only, max diff {g_err:.1e}"));
    }
    let params = ParamSet::init(&arch, 5).unwrap();
    let batch = tiny_batch(&arch, 4, 2);
    for (what, w) in [
        ("L_c alone", LossWeights { entropy: 0.0, confusion: 0.0, bias: 0.0, grl_scale: 0.1 }),
        ("L_c + entropy", LossWeights { entropy: 0.5, confusion: 0.0, bias: 0.0, grl_scale: 0.1 }),
    ] {
        let g = step_gradients(&params, &batch, &w).unwrap();
        let none = g.grads.keys().all(|k| Subnet::of(k) != Some(Subnet::H));
        v.check(none, format!("{what}: no h tensor receives a gradient"));
    }
    v
}

// ---------------------------------------------------------------- criterion 4

/// Per-class colour sums over `chunks` blank datasets of `per_chunk` images per class.
fn colour_means(build: impl Fn(&RawDigits, u64) -> BiasedDataset, chunks: u64, per_chunk: usize) -> [[f64; 3]; 10] {
    let mut sums = [[0.0f64; 3]; 10];
    let mut counts = [0usize; 10];
    let labels: Vec<u8> = (0..10 * per_chunk).map(|i| (i % 10) as u8).collect();
    let raw = RawDigits { images: vec![0.0; labels.len() * RawDigits::PIXELS], labels };
    for chunk in 0..chunks {
        let ds = build(&raw, 1_000 + chunk);
        for (c, l) in ds.colors().iter().zip(ds.labels()) {
            for ch in 0..3 {
                sums[*l as usize][ch] += c[ch] as f64;
            }
            counts[*l as usize] += 1;
        }
    }
    let mut means = [[0.0; 3]; 10];
    for d in 0..10 {
        for ch in 0..3 {
            means[d][ch] = sums[d][ch] / counts[d] as f64;
        }
    }
    means
}

fn criterion_4() -> Verdict {
    let mut v = Verdict::default();
    let start = Instant::now();
    let (chunks, per_chunk) = (40u64, SAMPLES_PER_CLASS / 40);
    let train = colour_means(|raw, s| build_train_set(raw, SAMPLER_SIGMA2, s).unwrap(), chunks, per_chunk);
    let test = colour_means(|raw, s| build_test_set(raw, SAMPLER_SIGMA2, s).unwrap(), chunks, per_chunk);

    for (d, (got, table)) in train.iter().zip(TRAIN_SAMPLED_MEANS).enumerate() {
        let dev = (0..3).map(|c| (got[c] - table[c] / 255.0).abs()).fold(0.0, f64::max);
        v.check(
            dev <= TRAIN_MEAN_TOL,
            format!(
                "train digit {d}: mean ({:.3}, {:.3}, {:.3}) vs table ({:.3}, {:.3}, {:.3}), max dev {dev:.3}",
                got[0], got[1], got[2], table[0] / 255.0, table[1] / 255.0, table[2] / 255.0
            ),
        );
    }

    let half_normal = (SAMPLER_SIGMA2 * 2.0 / std::f64::consts::PI).sqrt();
    let palette = ColorSpec::default();
    for (d, entry) in palette.entries().iter().enumerate() {
        for c in 0..3 {
            if entry.rgb[c] == 0.0 {
                let dev = (train[d][c] - half_normal).abs();
                v.check(
                    dev <= HALF_NORMAL_TOL,
                    format!("boundary channel {c} of digit {d}: mean {:.4} vs sigma*sqrt(2/pi) = {half_normal:.4}", train[d][c]),
                );
            }
        }
    }

    for (d, got) in test.iter().enumerate() {
        let dev = (0..3).map(|c| (got[c] - TEN_COLOR_AVERAGE[c]).abs()).fold(0.0, f64::max);
        v.check(
            dev <= TEST_MEAN_TOL,
            format!("test digit {d}: mean ({:.3}, {:.3}, {:.3}), max dev {dev:.3} from the ten-colour average", got[0], got[1], got[2]),
        );
    }
    let secs = start.elapsed().as_secs_f64();
    v.check(secs < SAMPLER_BUDGET_S, format!("{SAMPLES_PER_CLASS} samples/class per split, runtime {secs:.1}s < {SAMPLER_BUDGET_S}s"));
    v
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Verdict {
    let mut v = Verdict::default();
    let per_class = MI_SAMPLES / 10;
    let raw_train = synth_digits(per_class, seed::derive_named(0, "train-digits")).unwrap();
    let raw_test = synth_digits(per_class, seed::derive_named(0, "test-digits")).unwrap();
    let train_mi = mi_diagnostics(&build_train_set(&raw_train, 0.02, 0).unwrap()).unwrap();
    let test_mi = mi_diagnostics(&build_test_set(&raw_test, 0.02, 0).unwrap()).unwrap();
    v.check(
        train_mi.center_cell > MI_TRAIN_MIN,
        format!("Train-0.02, N={MI_SAMPLES}: I(digit; centre-cell level) = {:.4} nats > {MI_TRAIN_MIN}", train_mi.center_cell),
    );
    v.check(
        test_mi.center_cell < MI_TEST_MAX,
        format!("Test-0.02, N={MI_SAMPLES}: I(digit; centre-cell level) = {:.4} nats < {MI_TEST_MAX}", test_mi.center_cell),
    );
    for (split, d) in [("train", train_mi), ("test", test_mi)] {
        v.note(format!(
            "{split}: palette code {:.4}, sampled mean index {:.4}, grid mean {:.4} nats",
            d.palette_code, d.mean_index, d.grid_mean
        ));
    }
    v
}

// ------------------------------------------------------------ criteria 6 to 8

struct SeedRuns {
    seed: u64,
    raw_test: RawDigits,
    test: BiasedDataset,
    models: BTreeMap<&'static str, (ParamSet, f64)>,
}

const DESK_METHODS: [(&str, Method); 3] =
    [("baseline", Method::Baseline), ("confusion", Method::Confusion), ("ours", Method::Ours)];

fn desk_runs() -> &'static [SeedRuns] {
    static RUNS: OnceLock<Vec<SeedRuns>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let recipe = Scale::Desk.recipe().unwrap();
        (0..DESK_SEEDS)
            .map(|seed| {
                let (raw_train, raw_test) = recipe.source.load(seed).unwrap();
                let train_set = build_train_set(&raw_train, DESK_SIGMA2, seed).unwrap();
                let test = build_test_set(&raw_test, DESK_SIGMA2, seed).unwrap();
                let mut models = BTreeMap::new();
                for (name, method) in DESK_METHODS {
                    let cfg = TrainConfig {
                        method,
                        sigma2: DESK_SIGMA2,
                        seed,
                        epochs: recipe.epochs,
                        batch_size: recipe.batch_size,
                        ..TrainConfig::default()
                    };
                    let start = Instant::now();
                    let (params, report) = train(&train_set, &test, &cfg).unwrap();
                    let acc = report.final_test_accuracy.unwrap();
                    eprintln!("  desk run seed {seed} {name}: test accuracy {acc:.4} ({:.0}s)", start.elapsed().as_secs_f64());
                    models.insert(name, (params, acc));
                }
                SeedRuns { seed, raw_test, test, models }
            })
            .collect()
    })
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn criterion_6() -> Verdict {
    let mut v = Verdict::default();
    let runs = desk_runs();
    let acc = |m: &str| mean(runs.iter().map(|r| r.models[m].1));
    let (base, conf, ours) = (acc("baseline"), acc("confusion"), acc("ours"));
    for r in runs {
        v.note(format!(
            "seed {}: baseline {:.4}, confusion {:.4}, ours {:.4}",
            r.seed, r.models["baseline"].1, r.models["confusion"].1, r.models["ours"].1
        ));
    }
    v.check(
        ours - base >= DEBIAS_GAP,
        format!("mean unbiased-test accuracy over {DESK_SEEDS} seeds: ours {ours:.4} - baseline {base:.4} = {:+.4} >= {DEBIAS_GAP}", ours - base),
    );
    v.check(ours >= conf, format!("ours {ours:.4} >= confusion {conf:.4}"));
    v.check(conf >= base, format!("confusion {conf:.4} >= baseline {base:.4}"));
    v
}

fn criterion_7() -> Verdict {
    let mut v = Verdict::default();
    let runs = desk_runs();
    let mut vertical_colors = 0;
    for k in 0..10 {
        let (mut n, mut to_k, mut base_ok, mut ours_ok) = (0usize, 0usize, 0usize, 0usize);
        for r in runs {
            let ds = recolor_fixed(&r.raw_test, k, DESK_SIGMA2, seed::derive(r.seed, k as u64)).unwrap();
            let base = predict(&r.models["baseline"].0, &ds).unwrap().labels;
            let ours = predict(&r.models["ours"].0, &ds).unwrap().labels;
            for ((b, o), y) in base.iter().zip(&ours).zip(ds.labels()) {
                n += 1;
                to_k += (*b == k) as usize;
                base_ok += (*b == *y as usize) as usize;
                ours_ok += (*o == *y as usize) as usize;
            }
        }
        let share = to_k as f64 / n as f64;
        vertical_colors += (share > VERTICAL_SHARE) as usize;
        let (ba, oa) = (base_ok as f64 / n as f64, ours_ok as f64 / n as f64);
        v.note(format!("colour {k}: baseline predicts {k} for {:.1}% of images", 100.0 * share));
        v.check(oa > ba, format!("colour {k}: ours accuracy {oa:.4} > baseline {ba:.4}"));
    }
    v.check(
        vertical_colors >= VERTICAL_COLORS,
        format!("baseline predicts the colour's digit for > 50% of images in {vertical_colors} of 10 colours (need >= {VERTICAL_COLORS})"),
    );
    v
}

fn criterion_8() -> Verdict {
    let mut v = Verdict::default();
    let runs = desk_runs();
    let mut probe = |name: &str| {
        let scores: Vec<f64> = runs
            .iter()
            .map(|r| {
                let params = &r.models[name].0;
                let features = extract_features(params, &r.test).unwrap();
                let cfg = ProbeConfig { seed: r.seed, ..ProbeConfig::default() };
                let p = bias_leakage_probe(&features, r.test.bias_labels(), &params.arch, &cfg).unwrap();
                v.note(format!(
                    "seed {} {name}: balanced {:.4}, plain {:.4}, majority level share {:.4}",
                    r.seed, p.balanced_accuracy, p.accuracy, p.majority_rate
                ));
                p.balanced_accuracy
            })
            .collect();
        mean(scores)
    };
    let (base, ours) = (probe("baseline"), probe("ours"));
    v.check(base >= PROBE_BASELINE_MIN, format!("probe on baseline features {base:.4} >= {PROBE_BASELINE_MIN}"));
    v.check(ours <= PROBE_OURS_MAX, format!("probe on ours features {ours:.4} <= {PROBE_OURS_MAX}"));
    v.check(base - ours >= PROBE_GAP, format!("baseline - ours = {:.4} >= {PROBE_GAP}", base - ours));
    v
}

// ---------------------------------------------------------------- criterion 9

/// Plug-in MI by direct summation over the cells of a `rows × cols` table.
fn hand_mi(t: &[u64], rows: usize, cols: usize) -> f64 {
    let n: f64 = t.iter().sum::<u64>() as f64;
    let row: Vec<f64> = (0..rows).map(|r| t[r * cols..(r + 1) * cols].iter().sum::<u64>() as f64 / n).collect();
    let col: Vec<f64> = (0..cols).map(|c| (0..rows).map(|r| t[r * cols + c]).sum::<u64>() as f64 / n).collect();
    let mut mi = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let p = t[r * cols + c] as f64 / n;
            if p > 0.0 {
                mi += p * (p / (row[r] * col[c])).ln();
            }
        }
    }
    mi
}

fn criterion_9() -> Verdict {
    let mut v = Verdict::default();
    let (mut tables, mut worst) = (0usize, 0.0f64);
    for rows in 1..=3usize {
        for cols in 1..=3usize {
            let cells = rows * cols;
            for code in 0..3u64.pow(cells as u32) {
                let t: Vec<u64> = (0..cells).map(|i| code / 3u64.pow(i as u32) % 3).collect();
                if t.iter().sum::<u64>() == 0 {
                    continue;
                }
                let got = discrete_mi(&t, cols).unwrap();
                worst = worst.max((got - hand_mi(&t, rows, cols)).abs());
                tables += 1;
            }
        }
    }
    v.check(worst <= MI_EXACT_TOL, format!("{tables} tables up to 3x3 with entries 0..2: max |error| {worst:.1e}"));

    // p = [[1/3, 1/6], [1/6, 1/3]], both marginals 1/2
    let hand = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
    let got = discrete_mi(&[2, 1, 1, 2], 2).unwrap();
    v.check((got - hand).abs() <= MI_EXACT_TOL, format!("[[2,1],[1,2]]: {got:.15} vs {hand:.15}"));

    let mut product_worst: f64 = 0.0;
    for (a, b) in [(vec![1u64, 2, 3], vec![4u64, 1]), (vec![5, 5], vec![1, 2, 7]), (vec![3, 1, 4, 1, 5], vec![9, 2, 6])] {
        let t: Vec<u64> = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
        product_worst = product_worst.max(discrete_mi(&t, b.len()).unwrap().abs());
    }
    v.check(product_worst <= MI_EXACT_TOL, format!("product tables: max |MI| {product_worst:.1e}"));

    let diag: Vec<u64> = (0..64).map(|i| if i % 9 == 0 { 7 } else { 0 }).collect();
    let got = discrete_mi(&diag, 8).unwrap();
    v.check((got - 8f64.ln()).abs() <= MI_EXACT_TOL, format!("diagonal-uniform 8x8: {got:.15} vs ln 8"));
    v
}

// --------------------------------------------------------------- criterion 10

fn unlearn(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_unlearn")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn last_history_row(dir: &Path) -> String {
    fs::read_to_string(dir.join("history.csv")).unwrap().lines().last().unwrap().to_string()
}

fn criterion_10() -> Verdict {
    let mut v = Verdict::default();
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    for d in ["gen-a", "gen-b"] {
        unlearn(&["gen", "--sigma2", "0.02", "--seed", "1", "--source", "synthetic:30", "--out", &p(d)]);
    }
    for f in ["train.unl", "test.unl", "test-images.idx", "test-labels.idx"] {
        let a = fs::read(tmp.path().join("gen-a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("gen-b").join(f)).unwrap();
        v.check(a == b, format!("gen twice: {f} byte-identical ({} bytes)", a.len()));
    }
    let flags = ["--method", "ours", "--seed", "3", "--epochs", "2", "--batch-size", "32"];
    let data = p("gen-a");
    let mut outs = Vec::new();
    for d in ["train-a", "train-b"] {
        let out = p(d);
        let mut args = vec!["train", "--data", &data, "--out", &out];
        args.extend_from_slice(&flags);
        outs.push(unlearn(&args).stdout);
    }
    let (a, b) = (last_history_row(&tmp.path().join("train-a")), last_history_row(&tmp.path().join("train-b")));
    v.check(a == b, format!("train twice: identical final-epoch metrics `{a}`"));
    v.check(outs[0] == outs[1], "train twice: identical stdout");
    let pa = fs::read(tmp.path().join("train-a/params.bin")).unwrap();
    let pb = fs::read(tmp.path().join("train-b/params.bin")).unwrap();
    v.check(pa == pb, "train twice: byte-identical parameters");
    v
}

// ---------------------------------------------------------------------- main

type Criterion = (usize, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 10] = [
    (1, "gradient oracle suite", criterion_1),
    (2, "gradient reversal contract", criterion_2),
    (3, "gradient routing", criterion_3),
    (4, "sampler statistics", criterion_4),
    (5, "train/test colour-label MI contrast", criterion_5),
    (6, "desk-scale debiasing", criterion_6),
    (7, "recoloured test sets", criterion_7),
    (8, "bias-leakage probe", criterion_8),
    (9, "MI estimator exactness", criterion_9),
    (10, "determinism", criterion_10),
];

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (n, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            let mut v = Verdict::default();
            v.check(false, format!("panicked: {msg}"));
            v
        });
        let status = if verdict.passed() { "PASS" } else { "FAIL" };
        println!("criterion {n}: {status} ({name}, {:.1}s)", start.elapsed().as_secs_f64());
        for (ok, what) in &verdict.checks {
            println!("    {} {what}", if *ok { "ok  " } else { "FAIL" });
        }
        for note in &verdict.notes {
            println!("    note {note}");
        }
        if !verdict.passed() {
            failed.push(n);
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
