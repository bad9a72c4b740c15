//! Sequence-level multi-label metrics, the decision-threshold sweep and
//! report files.

mod metrics;
mod report;
mod sweep;

pub use metrics::{f1_per_class, macro_f1, uf1_score, ClassCounts, ConfusionCounts, MetricReport};
pub use report::{
    ablation_table, emit_report, metrics_csv, sweep_csv, sweep_svg, write_ablation, AblationRun, ABLATION_FILE,
    ABLATION_ROWS, METRICS_FILE, SWEEP_CSV_FILE, SWEEP_SVG_FILE,
};
pub use sweep::{default_grid, threshold_sweep, SweepResult};

#[cfg(test)]
mod tests;
