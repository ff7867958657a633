//! Synthetic microservice-system generator: topologies, operational
//! scenarios, workload traces, and a queueing-model latency oracle that
//! provides ground-truth targets.

pub mod generate;
pub mod oracle;
pub mod scenario;
pub mod topology;
pub mod trace;

pub use generate::{generate_dataset, write_dataset, DatasetMeta, DatasetPaths, GenerateSpec, GeneratedDataset};
pub use oracle::{mmc_mean_sojourn, percentile_factor, OracleKind, OracleLatency, OracleModel};
pub use scenario::{ScenarioMix, ScenarioSpec};
pub use topology::{generate_topology, topological_order, Topology, TopologyTemplate};
pub use trace::{TraceProfile, TraceShape};
