//! Grid runners for the ablation study and the hierarchy-level sweep.
//!
//! Every (configuration, seed) cell trains from scratch and reports test
//! metrics; cells are independent and run on their own threads. Directional
//! expectations across variants are logged as warnings, not failures,
//! because they are statistical rather than exact.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{split_by_time, WindowSample};
use crate::encoding::ServiceGraph;
use crate::error::{Error, Result};
use crate::evalkit::metrics::{compute_metrics, MetricReport};
use crate::model::Variant;
use crate::training::{predict_scaled, prepare_features, train, TrainResult};

/// One grid cell in the machine-readable results.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRow {
    pub variant: String,
    pub percentile: u8,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
}

/// Mean and standard deviation per variant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub n_seeds: usize,
    pub mean_mae: f64,
    pub std_mae: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub mean_mape: f64,
    pub std_mape: f64,
}

/// Full grid output: per-cell rows sorted by (variant, seed), summaries,
/// and any directional warnings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<RunRow>,
    pub summaries: Vec<VariantSummary>,
    pub warnings: Vec<String>,
}

/// Test-split metrics for an already-trained model.
pub fn evaluate_on_test(
    graph: &ServiceGraph,
    samples: &[WindowSample],
    outcome: &TrainResult,
    percentile: u8,
) -> Result<MetricReport> {
    let (_, _, test) = split_by_time(samples);
    if test.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    }
    let feats = prepare_features(test, &outcome.normalizer)?;
    let preds: Vec<f64> = predict_scaled(&outcome.params, graph.adjacency(), &feats)
        .iter()
        .map(|p| p * outcome.target_scale)
        .collect();
    let targets: Vec<f64> = test
        .iter()
        .map(|s| s.target(percentile))
        .collect::<Result<_>>()?;
    compute_metrics(&preds, &targets, percentile)
}

/// Trains one configuration and evaluates it on the test split.
pub fn train_and_evaluate(
    graph: &ServiceGraph,
    samples: &[WindowSample],
    config: &RunConfig,
) -> Result<(TrainResult, MetricReport)> {
    let outcome = train(graph, samples, config)?;
    let report = evaluate_on_test(graph, samples, &outcome, config.percentile)?;
    Ok((outcome, report))
}

fn run_grid(
    graph: &ServiceGraph,
    samples: &[WindowSample],
    cells: Vec<(String, RunConfig)>,
) -> Result<Vec<RunRow>> {
    let mut slots: Vec<Option<Result<RunRow>>> = (0..cells.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (label, config) in &cells {
            handles.push(scope.spawn(move || -> Result<RunRow> {
                let (_, report) = train_and_evaluate(graph, samples, config)?;
                Ok(RunRow {
                    variant: label.clone(),
                    percentile: config.percentile,
                    seed: config.seed,
                    mae: report.mae,
                    rmse: report.rmse,
                    mape: report.mape,
                })
            }));
        }
        for (slot, handle) in slots.iter_mut().zip(handles) {
            *slot = Some(handle.join().expect("training thread panicked"));
        }
    });
    let mut rows = slots
        .into_iter()
        .map(|slot| slot.expect("slot filled"))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.variant.cmp(&b.variant).then(a.seed.cmp(&b.seed)));
    Ok(rows)
}

fn summarize(rows: &[RunRow]) -> Vec<VariantSummary> {
    let mut variants: Vec<String> = rows.iter().map(|r| r.variant.clone()).collect();
    variants.dedup();
    variants
        .iter()
        .map(|variant| {
            let cells: Vec<&RunRow> = rows.iter().filter(|r| &r.variant == variant).collect();
            let stat = |f: fn(&RunRow) -> f64| {
                let vals: Vec<f64> = cells.iter().map(|r| f(r)).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var =
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                (mean, var.sqrt())
            };
            let (mean_mae, std_mae) = stat(|r| r.mae);
            let (mean_rmse, std_rmse) = stat(|r| r.rmse);
            let (mean_mape, std_mape) = stat(|r| r.mape);
            VariantSummary {
                variant: variant.clone(),
                n_seeds: cells.len(),
                mean_mae,
                std_mae,
                mean_rmse,
                std_rmse,
                mean_mape,
                std_mape,
            }
        })
        .collect()
}

/// Trains every (variant, seed) cell at the configured percentile and
/// reports per-variant mean and standard deviation of the test metrics.
pub fn run_ablation(
    graph: &ServiceGraph,
    samples: &[WindowSample],
    base: &RunConfig,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<GridResult> {
    if seeds.len() < 3 {
        return Err(Error::Config(format!(
            "ablation needs at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    if variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant".into()));
    }
    let mut cells = Vec::new();
    for &variant in variants {
        for &seed in seeds {
            let mut config = base.clone();
            config.variant = variant;
            config.seed = seed;
            cells.push((variant.to_string(), config));
        }
    }
    let rows = run_grid(graph, samples, cells)?;
    let summaries = summarize(&rows);
    let mut warnings = Vec::new();
    let mean_of = |name: &str| {
        summaries
            .iter()
            .find(|s| s.variant == name)
            .map(|s| s.mean_mae)
    };
    if let (Some(full), Some(ablated)) = (mean_of("full"), mean_of("no_multiscale")) {
        if full > ablated {
            warnings.push(format!(
                "expected full (MAE {full:.3}) <= no_multiscale (MAE {ablated:.3}); \
                 direction not reproduced on this dataset"
            ));
        }
    }
    Ok(GridResult {
        rows,
        summaries,
        warnings,
    })
}

/// Trains the 1..=4-level hierarchies across seeds. Level 3 is exactly
/// the default architecture.
pub fn run_level_sweep(
    graph: &ServiceGraph,
    samples: &[WindowSample],
    base: &RunConfig,
    levels: &[usize],
    seeds: &[u64],
) -> Result<GridResult> {
    if seeds.len() < 3 {
        return Err(Error::Config(format!(
            "level sweep needs at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    let mut cells = Vec::new();
    for &level in levels {
        if !(1..=4).contains(&level) {
            return Err(Error::Config(format!("level {level} outside 1..=4")));
        }
        for &seed in seeds {
            let mut config = base.clone();
            config.variant = Variant::Full;
            config.n_levels = level;
            config.seed = seed;
            cells.push((format!("levels_{level}"), config));
        }
    }
    let rows = run_grid(graph, samples, cells)?;
    let summaries = summarize(&rows);
    Ok(GridResult {
        rows,
        summaries,
        warnings: Vec::new(),
    })
}

/// Aligned text table of the per-variant summaries.
pub fn render_table(result: &GridResult) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>6} {:>12} {:>12} {:>12}\n",
        "variant", "seeds", "MAE (ms)", "RMSE (ms)", "MAPE (%)"
    ));
    for s in &result.summaries {
        out.push_str(&format!(
            "{:<16} {:>6} {:>6.2}±{:<5.2} {:>6.2}±{:<5.2} {:>6.2}±{:<5.2}\n",
            s.variant,
            s.n_seeds,
            s.mean_mae,
            s.std_mae,
            s.mean_rmse,
            s.std_rmse,
            s.mean_mape,
            s.std_mape
        ));
    }
    for w in &result.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}
