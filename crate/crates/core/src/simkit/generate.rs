//! Window generation: draws quotas and scenario-shaped metrics, runs the
//! latency oracle, and writes the JSON-lines dataset with its topology
//! sidecar and a generation summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_jsonl, write_topology, TopologySidecar, WindowSample};
use crate::encoding::{MetricSchema, SystemState};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::simkit::oracle::{OracleKind, OracleModel};
use crate::simkit::scenario::{ScenarioMix, ScenarioSpec};
use crate::simkit::topology::{generate_topology, Topology, TopologyTemplate};
use crate::simkit::trace::{TraceProfile, TraceShape};

/// Everything that determines a generated dataset.
#[derive(Clone, Debug)]
pub struct GenerateSpec {
    pub template: TopologyTemplate,
    pub mix: ScenarioMix,
    pub trace_shape: TraceShape,
    pub base_rps: f64,
    pub n_windows: usize,
    pub seed: u64,
    pub oracle: OracleKind,
    /// Quota provisioning headroom range relative to typical load.
    /// Lower floors let live stress push services into saturation.
    pub headroom: (f64, f64),
}

impl GenerateSpec {
    pub fn new(template: TopologyTemplate, n_windows: usize, seed: u64) -> Self {
        GenerateSpec {
            template,
            mix: ScenarioMix::uniform(),
            trace_shape: TraceShape::Bursty,
            base_rps: 10.0,
            n_windows,
            seed,
            oracle: OracleKind::Queueing,
            headroom: (1.6, 3.4),
        }
    }
}

/// Generation summary written next to the dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub template: String,
    pub n_windows: usize,
    pub seed: u64,
    pub oracle: String,
    pub trace_shape: String,
    pub base_rps: f64,
    pub metric_schema_version: u32,
    pub scenario_counts: BTreeMap<String, usize>,
    pub saturated_windows: Vec<u64>,
}

/// In-memory result of a generation run.
pub struct GeneratedDataset {
    pub samples: Vec<WindowSample>,
    pub topology: Topology,
    pub sidecar: TopologySidecar,
    pub meta: DatasetMeta,
}

/// Deterministic for a fixed spec: identical specs give byte-identical
/// files.
pub fn generate_dataset(spec: &GenerateSpec) -> Result<GeneratedDataset> {
    if spec.n_windows == 0 {
        return Err(Error::Config("n_windows must be at least 1".into()));
    }
    if !(spec.headroom.0 >= 1.0 && spec.headroom.1 > spec.headroom.0) {
        return Err(Error::Config(format!(
            "headroom range {:?} must satisfy 1 <= min < max",
            spec.headroom
        )));
    }
    let topology = generate_topology(&spec.template, spec.seed)?;
    let n = topology.graph.n();
    let oracle = OracleModel::new(&topology.graph, spec.oracle.clone(), spec.seed)?;
    let offered_load =
        oracle.typical_offered_load(&topology.graph, &topology.entries, spec.base_rps);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let trace = TraceProfile::generate(spec.trace_shape, spec.base_rps, spec.n_windows, &mut rng)?;

    let mut samples = Vec::with_capacity(spec.n_windows);
    let mut scenario_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut saturated_windows = Vec::new();

    for window_id in 0..spec.n_windows as u64 {
        let kind = spec.mix.sample(rng.gen_range(0.0..1.0));
        let scenario = ScenarioSpec::for_kind(kind);
        let rate_rps = trace.rates[window_id as usize];

        let mut workload = vec![0.0; n];
        for &e in &topology.entries {
            workload[e] = rate_rps * 60.0;
        }

        // arrival rates drive the observed call counters
        let probe_state = SystemState::new(
            Matrix::zeros(n, 7),
            Matrix::filled(n, 1, 1.0),
            Matrix::column(&workload)?,
        )?;
        let lambda = oracle.arrival_rates(&topology.graph, &probe_state);

        let noise = Normal::new(0.0, scenario.noise).expect("valid std");
        let mut metrics = Matrix::zeros(n, 7);
        for i in 0..n {
            // stress localizes: each service is either hot (full scenario
            // multiplier) or near baseline, so system-wide averages hide
            // which services are struggling
            let hot = rng.gen_bool(0.5);
            let stress = |mult: f64| if hot { mult } else { 1.0 + 0.1 * (mult - 1.0) };
            let cpu = (rng.gen_range(0.15..0.35) * stress(scenario.cpu_mult)
                * (1.0 + noise.sample(&mut rng)))
            .clamp(0.0, 1.0);
            let mem = (rng.gen_range(0.2..0.4)
                * (1.0 + 0.3 * (stress(scenario.cpu_mult) - 1.0))
                * (1.0 + noise.sample(&mut rng)))
            .clamp(0.0, 1.0);
            let file_io = (rng.gen_range(5.0..15.0) * stress(scenario.io_mult)
                * (1.0 + noise.sample(&mut rng)))
            .max(0.0);
            let net_in = (rng.gen_range(5.0..15.0) * stress(scenario.net_mult)
                * (1.0 + noise.sample(&mut rng)))
            .max(0.0);
            let net_out = (rng.gen_range(5.0..15.0) * stress(scenario.net_mult)
                * (1.0 + noise.sample(&mut rng)))
            .max(0.0);
            let calls = (lambda[i] * 60.0 * (1.0 + noise.sample(&mut rng) * 0.5)).max(0.0);
            for (c, v) in [cpu, mem, file_io, net_in, net_out, 1.0, calls]
                .into_iter()
                .enumerate()
            {
                metrics.set(i, c, v);
            }
        }

        // provision each service against its typical unstressed load with
        // a random headroom factor; live stress eats into the headroom,
        // so utilization couples quota, workload, and metrics
        let quotas: Vec<f64> = (0..n)
            .map(|i| {
                let headroom = rng.gen_range(spec.headroom.0..spec.headroom.1);
                (offered_load[i] * headroom).ceil().clamp(1.0, 64.0)
            })
            .collect();
        for i in 0..n {
            metrics.set(i, 5, quotas[i]); // one pod per allocated core
        }

        let state = SystemState::new(
            metrics,
            Matrix::column(&quotas)?,
            Matrix::column(&workload)?,
        )?;
        let p50 = oracle.latency(&topology.graph, &state, 50)?;
        let p90 = oracle.latency(&topology.graph, &state, 90)?;
        let p99 = oracle.latency(&topology.graph, &state, 99)?;
        if p50.saturated {
            saturated_windows.push(window_id);
        }
        *scenario_counts.entry(kind.to_string()).or_insert(0) += 1;

        samples.push(WindowSample {
            window_id,
            scenario_kind: kind,
            graph_ref: "topology.json".into(),
            metrics: (0..n)
                .map(|i| state.metrics().row_slice(i).to_vec())
                .collect(),
            quotas,
            workload,
            latency_p50: p50.ms,
            latency_p90: p90.ms,
            latency_p99: p99.ms,
        });
    }

    let sidecar = TopologySidecar::from_graph(&topology.name, &topology.graph, &topology.entries);
    let meta = DatasetMeta {
        template: topology.name.clone(),
        n_windows: spec.n_windows,
        seed: spec.seed,
        oracle: spec.oracle.name().into(),
        trace_shape: spec.trace_shape.name().into(),
        base_rps: spec.base_rps,
        metric_schema_version: MetricSchema::v1().version,
        scenario_counts,
        saturated_windows,
    };
    Ok(GeneratedDataset {
        samples,
        topology,
        sidecar,
        meta,
    })
}

/// File names inside a dataset directory.
pub struct DatasetPaths {
    pub dataset: PathBuf,
    pub topology: PathBuf,
    pub meta: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            dataset: dir.join("dataset.jsonl"),
            topology: dir.join("topology.json"),
            meta: dir.join("meta.json"),
        }
    }
}

/// Writes dataset, topology sidecar, and generation summary.
pub fn write_dataset(dir: &Path, data: &GeneratedDataset) -> Result<DatasetPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let paths = DatasetPaths::in_dir(dir);
    write_jsonl(&paths.dataset, &data.samples)?;
    write_topology(&paths.topology, &data.sidecar)?;
    let meta_text = serde_json::to_string_pretty(&data.meta)?;
    fs::write(&paths.meta, meta_text).map_err(|e| Error::io(paths.meta.display().to_string(), e))?;
    Ok(paths)
}
