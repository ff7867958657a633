//! Window-sample records, the JSON-lines dataset format, and the
//! time-ordered train/validation/test split.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::{build_feature_matrix, ServiceGraph, SystemState, METRIC_DIM};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Operational scene kinds used by the generator and the analysis logs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Cpu,
    Io,
    Network,
    Mixed,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Cpu,
        ScenarioKind::Io,
        ScenarioKind::Network,
        ScenarioKind::Mixed,
    ];
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScenarioKind::Cpu => "cpu",
            ScenarioKind::Io => "io",
            ScenarioKind::Network => "network",
            ScenarioKind::Mixed => "mixed",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cpu" => Ok(ScenarioKind::Cpu),
            "io" => Ok(ScenarioKind::Io),
            "network" => Ok(ScenarioKind::Network),
            "mixed" => Ok(ScenarioKind::Mixed),
            other => Err(Error::Config(format!("unknown scenario kind '{other}'"))),
        }
    }
}

/// One training/evaluation record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowSample {
    pub window_id: u64,
    pub scenario_kind: ScenarioKind,
    pub graph_ref: String,
    #[serde(rename = "S")]
    pub metrics: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub quotas: Vec<f64>,
    #[serde(rename = "W")]
    pub workload: Vec<f64>,
    pub latency_p50: f64,
    pub latency_p90: f64,
    pub latency_p99: f64,
}

impl WindowSample {
    pub fn n(&self) -> usize {
        self.metrics.len()
    }

    pub fn target(&self, percentile: u8) -> Result<f64> {
        match percentile {
            50 => Ok(self.latency_p50),
            90 => Ok(self.latency_p90),
            99 => Ok(self.latency_p99),
            other => Err(Error::Config(format!("unknown percentile {other}"))),
        }
    }

    pub fn system_state(&self) -> Result<SystemState> {
        let n = self.n();
        if self.metrics.iter().any(|row| row.len() != METRIC_DIM) {
            return Err(Error::Dataset(format!(
                "window {}: metric rows must have {METRIC_DIM} columns",
                self.window_id
            )));
        }
        let flat: Vec<f64> = self.metrics.iter().flatten().copied().collect();
        let metrics = Matrix::from_vec(n, METRIC_DIM, flat).map_err(Error::from)?;
        let quotas = Matrix::column(&self.quotas).map_err(Error::from)?;
        let workload = Matrix::column(&self.workload).map_err(Error::from)?;
        SystemState::new(metrics, quotas, workload)
    }

    /// Unified feature matrix for this window.
    pub fn features(&self) -> Result<Matrix> {
        Ok(build_feature_matrix(&self.system_state()?))
    }
}

/// Topology sidecar stored next to the dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopologySidecar {
    pub name: String,
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub entries: Vec<usize>,
}

impl TopologySidecar {
    pub fn from_graph(name: &str, graph: &ServiceGraph, entries: &[usize]) -> Self {
        TopologySidecar {
            name: name.to_string(),
            n: graph.n(),
            edges: graph.edges().iter().map(|&(i, j)| [i, j]).collect(),
            entries: entries.to_vec(),
        }
    }

    pub fn to_graph(&self) -> Result<ServiceGraph> {
        let names = (0..self.n).map(|i| format!("svc{i}")).collect();
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        ServiceGraph::from_edges(names, &edges)
    }
}

pub fn write_jsonl(path: &Path, samples: &[WindowSample]) -> Result<()> {
    let mut buf = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut buf, s)?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<WindowSample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: WindowSample = serde_json::from_str(&line).map_err(|e| {
            Error::Dataset(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(sample);
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("{}: no samples", path.display())));
    }
    Ok(out)
}

pub fn write_topology(path: &Path, sidecar: &TopologySidecar) -> Result<()> {
    let text = serde_json::to_string_pretty(sidecar)?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_topology(path: &Path) -> Result<TopologySidecar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// 70/15/15 split in window order; no shuffling.
pub fn split_by_time(samples: &[WindowSample]) -> (&[WindowSample], &[WindowSample], &[WindowSample]) {
    let n = samples.len();
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    (
        &samples[..n_train],
        &samples[n_train..n_train + n_val],
        &samples[n_train + n_val..],
    )
}
