//! Call-graph and system-state representation, and assembly of the unified
//! per-node feature matrix consumed by the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Number of raw metric columns.
pub const METRIC_DIM: usize = 7;
/// Metric columns plus quota and workload.
pub const FEATURE_DIM: usize = METRIC_DIM + 2;

/// Fixed, versioned metric column order. Feature matrices are only
/// comparable across runs when the schema version matches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSchema {
    pub version: u32,
    pub columns: Vec<String>,
}

impl MetricSchema {
    pub fn v1() -> Self {
        MetricSchema {
            version: 1,
            columns: [
                "cpu_util",
                "mem_util",
                "file_io",
                "net_in",
                "net_out",
                "pod_count",
                "calls_per_min",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }

    /// Rejects any column list that is not exactly the versioned order.
    pub fn validate_columns(&self, columns: &[String]) -> Result<()> {
        if columns != self.columns.as_slice() {
            return Err(Error::State(format!(
                "metric columns {:?} do not match schema v{} {:?}",
                columns, self.version, self.columns
            )));
        }
        Ok(())
    }
}

/// Directed service call-dependency graph with binary adjacency.
#[derive(Clone, Debug)]
pub struct ServiceGraph {
    names: Vec<String>,
    adjacency: Matrix,
}

impl ServiceGraph {
    /// Validates binary entries and a zero diagonal.
    pub fn new(names: Vec<String>, adjacency: Matrix) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return Err(Error::Graph("graph must have at least one service".into()));
        }
        if adjacency.shape() != (n, n) {
            return Err(Error::Graph(format!(
                "adjacency is {}x{} but there are {} services",
                adjacency.rows(),
                adjacency.cols(),
                n
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = adjacency.get(i, j);
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Graph(format!(
                        "adjacency entry ({i},{j}) = {v} is not binary"
                    )));
                }
                if i == j && v != 0.0 {
                    return Err(Error::Graph(format!("self-loop at service {i}")));
                }
            }
        }
        Ok(ServiceGraph { names, adjacency })
    }

    pub fn from_edges(names: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = names.len();
        let mut a = Matrix::zeros(n.max(1), n.max(1));
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Graph(format!("edge ({i},{j}) out of range for n={n}")));
            }
            a.set(i, j, 1.0);
        }
        ServiceGraph::new(names, a)
    }

    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if self.adjacency.get(i, j) == 1.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.adjacency.get(i, j) == 1.0).collect()
    }
}

/// Structural report produced by [`validate_graph`].
#[derive(Clone, Debug, Serialize)]
pub struct GraphReport {
    pub n: usize,
    pub edge_count: usize,
    pub weakly_connected: bool,
    pub isolated: Vec<usize>,
}

/// Confirms graph invariants and reports weak connectivity and isolated
/// nodes. The constructor already rejects non-binary entries and
/// self-loops; this adds the structural summary.
pub fn validate_graph(g: &ServiceGraph) -> GraphReport {
    let n = g.n();
    let edges = g.edges();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if (g.adjacency().get(i, j) == 1.0 || g.adjacency().get(j, i) == 1.0) && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    let isolated = (0..n)
        .filter(|&i| edges.iter().all(|&(a, b)| a != i && b != i))
        .collect();
    GraphReport {
        n,
        edge_count: edges.len(),
        weakly_connected: seen.iter().all(|&s| s),
        isolated,
    }
}

/// Per-window observed state: metric matrix, quota vector, workload vector.
#[derive(Clone, Debug)]
pub struct SystemState {
    metrics: Matrix,  // n x METRIC_DIM
    quotas: Matrix,   // n x 1
    workload: Matrix, // n x 1
}

impl SystemState {
    pub fn new(metrics: Matrix, quotas: Matrix, workload: Matrix) -> Result<Self> {
        let n = metrics.rows();
        if metrics.cols() != METRIC_DIM {
            return Err(Error::State(format!(
                "metric matrix has {} columns, schema requires {METRIC_DIM}",
                metrics.cols()
            )));
        }
        if quotas.shape() != (n, 1) {
            return Err(Error::State(format!(
                "quota vector has {} rows, metrics have {n}",
                quotas.rows()
            )));
        }
        if workload.shape() != (n, 1) {
            return Err(Error::State(format!(
                "workload vector has {} rows, metrics have {n}",
                workload.rows()
            )));
        }
        for (name, m) in [("metrics", &metrics), ("quotas", &quotas), ("workload", &workload)] {
            if m.data().iter().any(|&v| v < 0.0) {
                return Err(Error::State(format!("{name} contains a negative entry")));
            }
        }
        for r in 0..n {
            for c in 0..2 {
                let v = metrics.get(r, c);
                if v > 1.0 {
                    return Err(Error::State(format!(
                        "utilization column {c} row {r} = {v} exceeds 1"
                    )));
                }
            }
        }
        Ok(SystemState {
            metrics,
            quotas,
            workload,
        })
    }

    pub fn n(&self) -> usize {
        self.metrics.rows()
    }

    pub fn metrics(&self) -> &Matrix {
        &self.metrics
    }

    pub fn quotas(&self) -> &Matrix {
        &self.quotas
    }

    pub fn workload(&self) -> &Matrix {
        &self.workload
    }
}

/// X = [S, C, W]: metric columns in schema order, then quota, then
/// workload. Pure function of the state.
pub fn build_feature_matrix(state: &SystemState) -> Matrix {
    let n = state.n();
    let mut out = Matrix::zeros(n, FEATURE_DIM);
    for r in 0..n {
        for c in 0..METRIC_DIM {
            out.set(r, c, state.metrics().get(r, c));
        }
        out.set(r, METRIC_DIM, state.quotas().get(r, 0));
        out.set(r, METRIC_DIM + 1, state.workload().get(r, 0));
    }
    out
}

/// Per-column z-score statistics, fit on the training split only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

/// Population mean and standard deviation over all rows of all training
/// feature matrices. Standard deviations are floored at 1e-8.
pub fn fit_normalizer(train_features: &[Matrix]) -> Result<Normalizer> {
    if train_features.len() < 2 {
        return Err(Error::Dataset(
            "normalizer requires at least 2 training samples".into(),
        ));
    }
    let cols = train_features[0].cols();
    let mut count = 0usize;
    let mut mean = vec![0.0; cols];
    for m in train_features {
        if m.cols() != cols {
            return Err(Error::Dataset("inconsistent feature widths".into()));
        }
        for r in 0..m.rows() {
            for c in 0..cols {
                mean[c] += m.get(r, c);
            }
        }
        count += m.rows();
    }
    for v in &mut mean {
        *v /= count as f64;
    }
    let mut var = vec![0.0; cols];
    for m in train_features {
        for r in 0..m.rows() {
            for c in 0..cols {
                let d = m.get(r, c) - mean[c];
                var[c] += d * d;
            }
        }
    }
    let std = var
        .iter()
        .map(|v| (v / count as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(Normalizer { mean, std })
}

impl Normalizer {
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                out.set(r, c, (x.get(r, c) - self.mean[c]) / self.std[c]);
            }
        }
        out
    }

    pub fn invert(&self, z: &Matrix) -> Matrix {
        let mut out = z.clone();
        for r in 0..z.rows() {
            for c in 0..z.cols() {
                out.set(r, c, z.get(r, c) * self.std[c] + self.mean[c]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_1x(metrics: [f64; 7], quota: f64, w: f64) -> SystemState {
        SystemState::new(
            Matrix::from_vec(1, 7, metrics.to_vec()).unwrap(),
            Matrix::column(&[quota]).unwrap(),
            Matrix::column(&[w]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn feature_matrix_concatenates_in_schema_order() {
        let state = state_1x([0.0; 7], 2.0, 60.0);
        let x = build_feature_matrix(&state);
        assert_eq!(x.shape(), (1, 9));
        assert_eq!(x.data(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 60.0]);
    }

    #[test]
    fn feature_matrix_rows_are_local() {
        let metrics = Matrix::from_rows(&[
            vec![0.1, 0.2, 1.0, 2.0, 3.0, 4.0, 5.0],
            vec![0.9, 0.8, 7.0, 6.0, 5.0, 4.0, 3.0],
        ])
        .unwrap();
        let state = SystemState::new(
            metrics,
            Matrix::column(&[1.0, 2.0]).unwrap(),
            Matrix::column(&[10.0, 0.0]).unwrap(),
        )
        .unwrap();
        let x = build_feature_matrix(&state);
        assert_eq!(x.row_slice(0), &[0.1, 0.2, 1.0, 2.0, 3.0, 4.0, 5.0, 1.0, 10.0]);
        assert_eq!(x.row_slice(1), &[0.9, 0.8, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 0.0]);
    }

    #[test]
    fn feature_matrix_is_deterministic() {
        let state = state_1x([0.3, 0.4, 1.0, 2.0, 3.0, 4.0, 5.0], 3.0, 120.0);
        let a = build_feature_matrix(&state);
        let b = build_feature_matrix(&state);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn boutique_shaped_instance_has_expected_shape() {
        let metrics = Matrix::filled(11, 7, 0.5);
        let state = SystemState::new(
            metrics,
            Matrix::filled(11, 1, 2.0),
            Matrix::filled(11, 1, 60.0),
        )
        .unwrap();
        assert_eq!(build_feature_matrix(&state).shape(), (11, 9));
    }

    #[test]
    fn state_rejects_row_mismatch_naming_tensor() {
        let err = SystemState::new(
            Matrix::filled(2, 7, 0.1),
            Matrix::column(&[1.0]).unwrap(),
            Matrix::column(&[1.0, 2.0]).unwrap(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("quota"));
    }

    #[test]
    fn normalizer_floors_degenerate_variance() {
        let m = Matrix::filled(3, 2, 4.0);
        let norm = fit_normalizer(&[m.clone(), m.clone()]).unwrap();
        assert_eq!(norm.std, vec![STD_FLOOR, STD_FLOOR]);
        let z = norm.apply(&m);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalizer_population_convention() {
        let a = Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let b = Matrix::from_vec(1, 2, vec![2.0, 2.0]).unwrap();
        let norm = fit_normalizer(&[a, b]).unwrap();
        assert_eq!(norm.mean, vec![1.0, 1.0]);
        assert_eq!(norm.std, vec![1.0, 1.0]);
    }

    #[test]
    fn normalizer_round_trips() {
        let x = Matrix::from_rows(&[vec![1.0, 10.0], vec![3.0, 30.0], vec![7.0, 50.0]]).unwrap();
        let norm = fit_normalizer(&[x.clone(), x.scale(2.0)]).unwrap();
        let back = norm.invert(&norm.apply(&x));
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn normalizer_rejects_empty() {
        assert!(fit_normalizer(&[]).is_err());
    }

    #[test]
    fn graph_chain_is_valid_and_connected() {
        let g = ServiceGraph::from_edges(vec!["a".into(), "b".into()], &[(0, 1)]).unwrap();
        let report = validate_graph(&g);
        assert!(report.weakly_connected);
        assert_eq!(report.edge_count, 1);
        assert!(report.isolated.is_empty());
    }

    #[test]
    fn graph_rejects_self_loop() {
        let mut a = Matrix::zeros(2, 2);
        a.set(0, 0, 1.0);
        let err = ServiceGraph::new(vec!["a".into(), "b".into()], a).unwrap_err();
        assert!(err.to_string().contains("self-loop"));
    }

    #[test]
    fn graph_rejects_non_binary_with_coordinates() {
        let mut a = Matrix::zeros(2, 2);
        a.set(0, 1, 0.5);
        let err = ServiceGraph::new(vec!["a".into(), "b".into()], a).unwrap_err();
        assert!(err.to_string().contains("(0,1)"));
    }

    #[test]
    fn schema_rejects_permuted_columns() {
        let schema = MetricSchema::v1();
        let mut permuted = schema.columns.clone();
        permuted.swap(0, 1);
        assert!(schema.validate_columns(&permuted).is_err());
        assert!(schema.validate_columns(&schema.columns).is_ok());
    }
}
