//! Run reports and their on-disk form.
//!
//! `emit_report` writes into a directory:
//!
//! * `history.csv`: one row per epoch, header [`HISTORY_HEADER`].
//! * `confusion_test.csv`, `confusion_recolored_<k>.csv`: count matrices,
//!   rows are true digits and columns predictions, with `.ppm` heat maps of the
//!   row-normalised matrices beside them.
//! * `summary.txt`: `key = value` lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::diagnostics::MiDiagnostics;
use super::metrics::ConfusionMatrix;
use super::probe::ProbeResult;
use crate::datagen::ppm_bytes;
use crate::error::{Error, Result};
use crate::objectives::{EpochRecord, TrainConfig};

pub const HISTORY_HEADER: &str = "epoch,method,classification_loss,bias_loss,neg_entropy,train_accuracy,train_bias_accuracy,test_accuracy,test_bias_accuracy";

const HEAT_CELL: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Training settings, absent for evaluation-only reports.
    pub config: Option<TrainConfig>,
    pub history: Vec<EpochRecord>,
    pub final_test_accuracy: Option<f64>,
    pub test_confusion: Option<ConfusionMatrix>,
    /// Confusion on test digits all coloured around palette entry `k`.
    pub recolored: Vec<(usize, ConfusionMatrix)>,
    pub probe: Option<ProbeResult>,
    pub mi: Option<MiDiagnostics>,
}

impl RunReport {
    pub fn new(config: Option<TrainConfig>) -> Self {
        RunReport {
            config,
            history: Vec::new(),
            final_test_accuracy: None,
            test_confusion: None,
            recolored: Vec::new(),
            probe: None,
            mi: None,
        }
    }

    pub fn history_csv(&self) -> String {
        let mut s = format!("{HISTORY_HEADER}\n");
        for r in &self.history {
            let t = &r.train;
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.method,
                t.classification_loss,
                t.bias_loss,
                t.neg_entropy,
                t.accuracy,
                t.bias_accuracy,
                r.test_accuracy,
                r.test_bias_accuracy
            )
            .unwrap();
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.config.iter().flat_map(TrainConfig::to_pairs) {
            writeln!(s, "{k} = {v}").unwrap();
        }
        writeln!(s, "epochs_run = {}", self.history.len()).unwrap();
        if let Some(acc) = self.final_test_accuracy {
            writeln!(s, "final_test_accuracy = {acc}").unwrap();
        }
        if let Some(cm) = &self.test_confusion {
            writeln!(s, "test_confusion_accuracy = {}", cm.accuracy()).unwrap();
        }
        for (k, cm) in &self.recolored {
            writeln!(
                s,
                "recolored_{k} = accuracy {} predicted_as_{k} {}",
                cm.accuracy(),
                cm.column_fraction(*k)
            )
            .unwrap();
        }
        if let Some(p) = &self.probe {
            writeln!(s, "probe_accuracy = {}", p.accuracy).unwrap();
            writeln!(s, "probe_balanced_accuracy = {}", p.balanced_accuracy).unwrap();
            writeln!(s, "probe_majority_rate = {}", p.majority_rate).unwrap();
        }
        if let Some(m) = &self.mi {
            writeln!(s, "mi_center_cell = {}", m.center_cell).unwrap();
            writeln!(s, "mi_grid_mean = {}", m.grid_mean).unwrap();
            writeln!(s, "mi_palette_code = {}", m.palette_code).unwrap();
            writeln!(s, "mi_mean_index = {}", m.mean_index).unwrap();
        }
        s
    }
}

/// Row-normalised matrix as a grayscale-on-blue heat map, `HEAT_CELL` pixels
/// per cell.
pub fn heatmap_ppm(cm: &ConfusionMatrix) -> Vec<u8> {
    let k = cm.classes();
    let side = k * HEAT_CELL;
    let norm = cm.row_normalized();
    let mut rgb = Vec::with_capacity(3 * side * side);
    for y in 0..side {
        for x in 0..side {
            let v = norm[y / HEAT_CELL][x / HEAT_CELL];
            let b = (v * 255.0).round() as u8;
            rgb.extend_from_slice(&[b, b, 255 - b / 2]);
        }
    }
    ppm_bytes(side, side, &rgb)
}

fn write(path: PathBuf, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes the report files into `dir` (created if missing) and returns their
/// paths. Output depends only on the report's contents.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    write(dir.join("history.csv"), report.history_csv().as_bytes(), &mut written)?;
    let matrices = report
        .test_confusion
        .iter()
        .map(|cm| ("confusion_test".to_string(), cm))
        .chain(report.recolored.iter().map(|(k, cm)| (format!("confusion_recolored_{k}"), cm)));
    for (stem, cm) in matrices {
        write(dir.join(format!("{stem}.csv")), cm.to_csv().as_bytes(), &mut written)?;
        write(dir.join(format!("{stem}.ppm")), &heatmap_ppm(cm), &mut written)?;
    }
    write(dir.join("summary.txt"), report.summary().as_bytes(), &mut written)?;
    Ok(written)
}
