use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::RunManifest;
use super::recipe::{generate, EvalSplit, SWEEP_METHODS, SWEEP_SIGMA2};
use super::{
    data_dir, EvalArgs, GenArgs, ReproduceArgs, TrainArgs, MANIFEST_FILE, PARAMS_FILE, TEST_FILE,
    TEST_IMAGES_FILE, TEST_LABELS_FILE, TRAIN_FILE,
};
use crate::datagen::{
    build_test_set, build_train_set, export_samples, load_dataset, load_idx, recolor_fixed,
    save_dataset, save_idx, BiasedDataset,
};
use crate::error::{Error, Result};
use crate::eval::{
    bias_leakage_probe, confusion, emit_report, mi_diagnostics, ConfusionMatrix, ProbeConfig,
    RunReport,
};
use crate::layers::{manifest_path, ArchSpec, ParamSet};
use crate::objectives::{extract_features, predict, train, train_with, Method, TrainConfig};
use crate::seed;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn labels_of(ds: &BiasedDataset) -> Vec<usize> {
    ds.labels().iter().map(|l| *l as usize).collect()
}

fn confusion_on(params: &ParamSet, ds: &BiasedDataset) -> Result<ConfusionMatrix> {
    let p = predict(params, ds)?;
    confusion(&p.labels, &labels_of(ds), params.arch.num_classes)
}

/// Writes `train.unl`, `test.unl`, the uncoloured test digits and a manifest.
pub fn cmd_gen(args: &GenArgs) -> Result<PathBuf> {
    let out = data_dir(args.out.as_ref())?;
    let mut manifest = RunManifest::new("gen");
    manifest.set("sigma2", args.sigma2);
    manifest.set("seed", args.seed);
    manifest.set("source", &args.source);
    let data = generate(&args.source, args.sigma2, args.seed)?;
    if let super::DataSource::Idx {
        train_images,
        train_labels,
        test_images,
        test_labels,
    } = &args.source
    {
        for p in [train_images, train_labels, test_images, test_labels] {
            manifest.input(p)?;
        }
    }

    create_dir(&out)?;
    let train_path = out.join(TRAIN_FILE);
    let test_path = out.join(TEST_FILE);
    let (img, lbl) = (out.join(TEST_IMAGES_FILE), out.join(TEST_LABELS_FILE));
    save_dataset(&data.train, &train_path)?;
    save_dataset(&data.test, &test_path)?;
    save_idx(&data.raw_test, &img, &lbl)?;
    let mut written = vec![train_path, test_path, img, lbl];
    if args.preview > 0 {
        let p = out.join("preview.ppm");
        export_samples(&data.train, &p, args.preview, 10)?;
        written.push(p);
    }
    for p in &written {
        manifest.output(p)?;
    }
    manifest.write(&out.join(MANIFEST_FILE))?;
    println!(
        "wrote {} training and {} test images (sigma2 {}, seed {}) to {}",
        data.train.len(),
        data.test.len(),
        args.sigma2,
        args.seed,
        out.display()
    );
    Ok(out)
}

fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected key=value, got `{line}`", path.display(), i + 1))
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Defaults, then the `--config` file, then explicit flags. Returns the
/// settings and the keys that were given explicitly.
pub fn train_settings(args: &TrainArgs) -> Result<(TrainConfig, Vec<String>)> {
    let mut pairs = match &args.config {
        Some(p) => read_config_file(p)?,
        None => Vec::new(),
    };
    let flags: [(&str, Option<String>); 11] = [
        ("method", args.method.map(|m| m.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("lambda", args.lambda.map(|v| v.to_string())),
        ("mu", args.mu.map(|v| v.to_string())),
        ("grl_scale", args.grl_scale.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("lr", args.lr.map(|v| v.to_string())),
        ("momentum", args.momentum.map(|v| v.to_string())),
        ("weight_decay", args.weight_decay.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("schedule", args.schedule.map(|v| v.to_string())),
    ];
    pairs.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    let mut cfg = TrainConfig::default();
    let mut keys = Vec::new();
    for (k, v) in &pairs {
        cfg.set(k, v)?;
        let k = k.replace('-', "_");
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    cfg.validate()?;
    Ok((cfg, keys))
}

/// Trains on `<data>/train.unl`, tracks `<data>/test.unl`, and writes
/// `params.bin`, the report files and a manifest into `--out`.
pub fn cmd_train(args: &TrainArgs) -> Result<RunReport> {
    let mut manifest = RunManifest::new("train");
    let (mut cfg, keys) = train_settings(args)?;
    for k in keys.iter().filter(|k| cfg.ignores(k)) {
        eprintln!("warning: `{k}` is ignored for method {}", cfg.method);
    }
    let dir = data_dir(args.data.as_ref())?;
    let (train_path, test_path) = (dir.join(TRAIN_FILE), dir.join(TEST_FILE));
    let train_set = load_dataset(&train_path)?;
    let test_set = load_dataset(&test_path)?;
    cfg.sigma2 = train_set.sigma2();
    let echo: Vec<String> = cfg.to_pairs().iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!("config: {}", echo.join(" "));

    create_dir(&args.out)?;
    let epochs = cfg.epochs;
    let (params, mut report) = train_with(&train_set, &test_set, &cfg, &ArchSpec::colored_mnist(), |r| {
        eprintln!(
            "epoch {}/{epochs}: L_c {:.4} L_B {:.4} negent {:.4} train_acc {:.4} test_acc {:.4} test_bias_acc {:.4}",
            r.epoch,
            r.train.classification_loss,
            r.train.bias_loss,
            r.train.neg_entropy,
            r.train.accuracy,
            r.test_accuracy,
            r.test_bias_accuracy
        )
    })?;
    let scored = if cfg.method == Method::Grayscale {
        test_set.grayscale()
    } else {
        test_set
    };
    report.test_confusion = Some(confusion_on(&params, &scored)?);

    let params_path = args.out.join(PARAMS_FILE);
    params.save(&params_path)?;
    for (k, v) in cfg.to_pairs() {
        manifest.set(k, v);
    }
    manifest.input(&train_path)?;
    manifest.input(&test_path)?;
    manifest.output(&params_path)?;
    manifest.output(&manifest_path(&params_path))?;
    for p in emit_report(&report, &args.out)? {
        manifest.output(&p)?;
    }
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    if let Some(last) = report.history.last() {
        println!(
            "method {} epoch {}: train_accuracy {} test_accuracy {} test_bias_accuracy {}",
            cfg.method, last.epoch, last.train.accuracy, last.test_accuracy, last.test_bias_accuracy
        );
    }
    Ok(report)
}

/// Scores `--params` on a split; optionally recolours the test digits and
/// probes the frozen features for colour information.
pub fn cmd_eval(args: &EvalArgs) -> Result<RunReport> {
    let params = ParamSet::load(&args.params)?;
    let dir = data_dir(args.data.as_ref())?;
    let path = dir.join(match args.split {
        EvalSplit::Train => TRAIN_FILE,
        EvalSplit::Test => TEST_FILE,
    });
    let ds = load_dataset(&path)?;
    let input = |d: BiasedDataset| if args.grayscale { d.grayscale() } else { d };
    let scored = input(ds.clone());

    let mut manifest = RunManifest::new("eval");
    manifest.set("split", format!("{:?}", args.split).to_lowercase());
    manifest.set("grayscale", args.grayscale);
    manifest.set("seed", args.seed);
    manifest.input(&args.params)?;
    manifest.input(&path)?;

    let mut report = RunReport::new(None);
    let cm = confusion_on(&params, &scored)?;
    report.final_test_accuracy = Some(cm.accuracy());
    report.test_confusion = Some(cm);
    report.mi = Some(mi_diagnostics(&ds)?);
    if let Some(r) = args.recolor {
        let (img, lbl) = (dir.join(TEST_IMAGES_FILE), dir.join(TEST_LABELS_FILE));
        let raw = load_idx(&img, &lbl)?;
        manifest.input(&img)?;
        manifest.input(&lbl)?;
        for k in r.indices() {
            let recolored = recolor_fixed(&raw, k, ds.sigma2(), seed::derive(args.seed, k as u64))?;
            report.recolored.push((k, confusion_on(&params, &input(recolored))?));
        }
    }
    if args.probe {
        let features = extract_features(&params, &scored)?;
        let cfg = ProbeConfig {
            seed: args.seed,
            ..ProbeConfig::default()
        };
        report.probe = Some(bias_leakage_probe(&features, ds.bias_labels(), &params.arch, &cfg)?);
    }

    for p in emit_report(&report, &args.out)? {
        manifest.output(&p)?;
    }
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    print!("{}", report.summary());
    Ok(report)
}

/// Final unbiased-test accuracy of one sweep run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub sigma2: f64,
    pub method: Method,
    pub seed: u64,
    pub test_accuracy: f64,
}

pub const RUNS_HEADER: &str = "sigma2,method,seed,test_accuracy";
pub const FIG_HEADER: &str = "sigma2,method,mean_accuracy,stddev,seeds";

fn runs_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{RUNS_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.sigma2, r.method, r.seed, r.test_accuracy).unwrap();
    }
    s
}

/// Mean and sample standard deviation per `(sigma2, method)`, in sweep order.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let si = SWEEP_SIGMA2.iter().position(|s| *s == r.sigma2).unwrap_or(usize::MAX);
        let mi = SWEEP_METHODS.iter().position(|m| *m == r.method).unwrap_or(usize::MAX);
        groups.entry((si, mi)).or_default().push(r.test_accuracy);
    }
    let mut s = format!("{FIG_HEADER}\n");
    for ((si, mi), accs) in groups {
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let var = if accs.len() > 1 {
            accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        writeln!(s, "{},{},{mean},{},{}", SWEEP_SIGMA2[si], SWEEP_METHODS[mi], var.sqrt(), accs.len()).unwrap();
    }
    s
}

/// Sweeps σ² × methods × seeds. Writes `runs.csv` (one row per run, rewritten
/// after every run) and `sweep.csv` (mean and standard deviation per cell).
pub fn cmd_reproduce(args: &ReproduceArgs) -> Result<Vec<SweepRow>> {
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let mut manifest = RunManifest::new("reproduce");
    let recipe = args.scale.recipe()?;
    let source = args.source.clone().unwrap_or(recipe.source);
    let epochs = args.epochs.unwrap_or(recipe.epochs);
    create_dir(&args.out)?;
    let runs_path = args.out.join("runs.csv");
    let table_path = args.out.join("sweep.csv");

    // idx digits are the same for every seed
    let shared = matches!(source, super::DataSource::Idx { .. });
    let raws = (0..if shared { 1 } else { args.seeds })
        .map(|s| source.load(s))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &sigma2 in &SWEEP_SIGMA2 {
        for seed in 0..args.seeds {
            let (raw_train, raw_test) = &raws[if shared { 0 } else { seed as usize }];
            let train_set = build_train_set(raw_train, sigma2, seed)?;
            let test_set = build_test_set(raw_test, sigma2, seed)?;
            for method in SWEEP_METHODS {
                let cfg = TrainConfig {
                    method,
                    sigma2,
                    seed,
                    epochs,
                    batch_size: recipe.batch_size,
                    ..TrainConfig::default()
                };
                let (_, report) = train(&train_set, &test_set, &cfg)?;
                let test_accuracy = report.final_test_accuracy.unwrap_or(f64::NAN);
                eprintln!("sigma2 {sigma2} seed {seed} {method}: test_accuracy {test_accuracy:.4}");
                rows.push(SweepRow {
                    sigma2,
                    method,
                    seed,
                    test_accuracy,
                });
                write_text(&runs_path, &runs_csv(&rows))?;
            }
        }
    }
    let table = sweep_table(&rows);
    write_text(&table_path, &table)?;

    manifest.set("scale", args.scale);
    manifest.set("source", &source);
    manifest.set("epochs", epochs);
    manifest.set("batch_size", recipe.batch_size);
    manifest.set("seeds", args.seeds);
    manifest.output(&runs_path)?;
    manifest.output(&table_path)?;
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    print!("{table}");
    Ok(rows)
}
