//! Acc/Pos/Neg, SHD, reference predictors and report emission.

mod baselines;
mod metrics;
mod report;

pub use baselines::{BaselineKind, BaselinePredictor};
pub use metrics::{compute_chain_metrics, compute_shd, MetricsReport, VideoPrediction, VideoResult};
pub use report::{fmt2, render_table, report_to_json, round2, StressResult, TableRow};
