//! Regression error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard added to MAPE denominators so near-zero targets cannot blow up.
pub const MAPE_GUARD: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub percentile: u8,
    pub n_samples: usize,
}

/// MAE, RMSE, and MAPE (percent) over paired slices.
pub fn compute_metrics(preds: &[f64], targets: &[f64], percentile: u8) -> Result<MetricReport> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Dataset(format!(
            "compute_metrics: {} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let n = preds.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pct_sum = 0.0;
    for (&p, &t) in preds.iter().zip(targets) {
        let d = p - t;
        abs_sum += d.abs();
        sq_sum += d * d;
        pct_sum += d.abs() / t.max(MAPE_GUARD);
    }
    Ok(MetricReport {
        mae: abs_sum / n,
        rmse: (sq_sum / n).sqrt(),
        mape: 100.0 * pct_sum / n,
        percentile,
        n_samples: preds.len(),
    })
}
