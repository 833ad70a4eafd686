//! Classification metrics, gap-stratified calibration, order-embedding
//! geometry probes and the ablation harness.

mod ablation;
mod geometry;
mod metrics;
mod report;

pub use ablation::{
    config_diff, run_ablation, AblationFactor, AblationReport, AblationSpec, AblationVariant,
};
pub use geometry::{cosine, neutral_cosine_stats, order_violation_rate, CosineStats, OrderStats};
pub use metrics::{
    binomial_interval, classify_metrics, ece, ece_bin, ece_by_gap, ClassMetrics,
    ClassificationMetrics, GapBucket,
};
pub use report::{evaluate, predict, EvalReport, Predictions};
