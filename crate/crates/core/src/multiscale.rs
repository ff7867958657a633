//! Learnable aggregation-based graph coarsening and construction of the
//! per-scale graph bundle.
//!
//! Each non-micro scale maps the n-node graph onto k aggregated nodes via
//! a row-stochastic soft assignment P, then pools features and edges
//! through it. The micro scale bypasses the assignment entirely (P = I).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Scale levels in coarsening order. `Half` only appears in the 4-level
/// hierarchy sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleLevel {
    Micro,
    Half,
    Meso,
    Macro,
}

impl std::fmt::Display for ScaleLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScaleLevel::Micro => "micro",
            ScaleLevel::Half => "half",
            ScaleLevel::Meso => "meso",
            ScaleLevel::Macro => "macro",
        };
        f.write_str(s)
    }
}

/// Target node counts per level for an n-node graph: 1 level keeps the
/// original graph; 2 adds k = n/4; 3 adds k = n/8; 4 interpolates n/2
/// between the original and n/4. All counts clamp to at least 1.
pub fn level_schedule(n: usize, n_levels: usize) -> Result<Vec<(ScaleLevel, usize)>> {
    let clamp = |k: usize| k.max(1);
    let schedule = match n_levels {
        1 => vec![(ScaleLevel::Micro, n)],
        2 => vec![(ScaleLevel::Micro, n), (ScaleLevel::Meso, clamp(n / 4))],
        3 => vec![
            (ScaleLevel::Micro, n),
            (ScaleLevel::Meso, clamp(n / 4)),
            (ScaleLevel::Macro, clamp(n / 8)),
        ],
        4 => vec![
            (ScaleLevel::Micro, n),
            (ScaleLevel::Half, clamp(n / 2)),
            (ScaleLevel::Meso, clamp(n / 4)),
            (ScaleLevel::Macro, clamp(n / 8)),
        ],
        other => {
            return Err(Error::Config(format!(
                "level count must be 1..=4, got {other}"
            )))
        }
    };
    Ok(schedule)
}

/// Learnable assignment parameters for one non-micro level.
#[derive(Clone, Debug)]
pub struct CoarsenParams {
    /// (d+2) x k projection.
    pub w_p: Matrix,
    /// 1 x k bias, broadcast over rows.
    pub b_p: Matrix,
}

/// One coarsened view of the graph.
#[derive(Clone, Debug)]
pub struct ScaleBundle {
    pub level: ScaleLevel,
    pub k: usize,
    /// n x k row-stochastic assignment (identity at the micro level).
    pub p: Matrix,
    /// k x (d+2) aggregated features.
    pub x_c: Matrix,
    /// k x k aggregated adjacency, entrywise nonnegative.
    pub a_c: Matrix,
}

/// Tape builder: P = row_softmax(X * W_p + b_p).
pub fn assignment_var(tape: &mut Tape, x: Var, w_p: Var, b_p: Var) -> Var {
    let logits = tape.matmul(x, w_p);
    let logits = tape.add_row_broadcast(logits, b_p);
    tape.row_softmax(logits)
}

/// Tape builder: X_c = P^T X, A_c = P^T A P.
pub fn coarsen_var(tape: &mut Tape, x: Var, a: Var, p: Var) -> (Var, Var) {
    let pt = tape.transpose(p);
    let x_c = tape.matmul(pt, x);
    let pa = tape.matmul(pt, a);
    let a_c = tape.matmul(pa, p);
    (x_c, a_c)
}

/// Soft aggregation assignment; every output row sums to 1.
pub fn assignment(x: &Matrix, params: &CoarsenParams) -> Result<Matrix> {
    if x.cols() != params.w_p.rows() {
        return Err(Error::Numerics(
            crate::error::NumericsError::ShapeMismatch {
                op: "assignment",
                lhs: x.shape(),
                rhs: params.w_p.shape(),
            },
        ));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(params.w_p.clone());
    let bv = tape.leaf(params.b_p.clone());
    let p = assignment_var(&mut tape, xv, wv, bv);
    Ok(tape.value(p).clone())
}

/// Aggregates node features and adjacency through an assignment matrix.
pub fn coarsen(x: &Matrix, a: &Matrix, p: &Matrix) -> Result<(Matrix, Matrix)> {
    if p.rows() != x.rows() || a.rows() != x.rows() || a.cols() != a.rows() {
        return Err(Error::Numerics(
            crate::error::NumericsError::ShapeMismatch {
                op: "coarsen",
                lhs: (x.rows(), x.rows()),
                rhs: if p.rows() != x.rows() { p.shape() } else { a.shape() },
            },
        ));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let av = tape.leaf(a.clone());
    let pv = tape.leaf(p.clone());
    let (x_c, a_c) = coarsen_var(&mut tape, xv, av, pv);
    Ok((tape.value(x_c).clone(), tape.value(a_c).clone()))
}

/// Builds the full list of scale bundles. `params_by_level[i]` holds the
/// assignment parameters for level `i + 1`; the micro level has none.
/// Levels that collapse to the same k still get independent bundles.
pub fn build_levels(
    x: &Matrix,
    a: &Matrix,
    schedule: &[(ScaleLevel, usize)],
    params_by_level: &[CoarsenParams],
) -> Result<Vec<ScaleBundle>> {
    if params_by_level.len() + 1 != schedule.len() {
        return Err(Error::Config(format!(
            "{} parameter sets for {} levels",
            params_by_level.len(),
            schedule.len()
        )));
    }
    let n = x.rows();
    let mut out = Vec::with_capacity(schedule.len());
    out.push(ScaleBundle {
        level: schedule[0].0,
        k: n,
        p: Matrix::identity(n),
        x_c: x.clone(),
        a_c: a.clone(),
    });
    for (idx, &(level, k)) in schedule.iter().enumerate().skip(1) {
        let params = &params_by_level[idx - 1];
        if params.w_p.cols() != k {
            return Err(Error::Config(format!(
                "level {level} expects k={k}, parameters have k={}",
                params.w_p.cols()
            )));
        }
        let p = assignment(x, params)?;
        let (x_c, a_c) = coarsen(x, a, &p)?;
        out.push(ScaleBundle { level, k, p, x_c, a_c });
    }
    Ok(out)
}
