//! Evaluation harness: error metrics, structure-blind baselines, and the
//! ablation and hierarchy-level study runners.

pub mod baselines;
pub mod metrics;
pub mod runner;

pub use baselines::{
    baseline_data, fit_linear_baseline, fit_mlp_baseline, pool_features, LinearBaseline,
    MlpBaseline, MlpTrainConfig,
};
pub use metrics::{compute_metrics, MetricReport};
pub use runner::{
    evaluate_on_test, render_table, run_ablation, run_level_sweep, train_and_evaluate, GridResult,
    RunRow, VariantSummary,
};
