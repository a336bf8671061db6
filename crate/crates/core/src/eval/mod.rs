//! Evaluation: agreement metrics, bootstrap intervals, sector and
//! pointwise analyses, measured-level binning and report files.

pub mod analysis;
pub mod bootstrap;
pub mod metrics;
pub mod report;

pub use analysis::{bin_by_measured, pointwise_r_map, retest_coverage, sector_metrics, BinnedStats, Coverage, PointR, SectorRow};
pub use bootstrap::{bootstrap_ci, Interval};
pub use metrics::{baseline_mae, mae, mse, pearson_r, r2};
pub use report::{evaluate, metrics_csv, render_report, BootstrapOptions, EvalBundle, MetricsReport, ReportInputs};
