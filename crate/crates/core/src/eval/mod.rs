//! Accuracy, confusion matrices, mutual-information diagnostics, the
//! bias-leakage probe and run reports.

mod diagnostics;
mod metrics;
mod probe;
mod report;

pub use diagnostics::{
    center_cell_codes, label_mi, mi_diagnostics, palette_codes, MiDiagnostics, CENTER_CELL,
};
pub use metrics::{
    accuracy, balanced_accuracy, confusion, discrete_mi, joint_counts, ConfusionMatrix,
};
pub use probe::{bias_leakage_probe, ProbeConfig, ProbeResult};
pub use report::{emit_report, heatmap_ppm, RunReport, HISTORY_HEADER};
