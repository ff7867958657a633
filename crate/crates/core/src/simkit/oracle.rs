//! Queueing ground-truth model: each service is an M/M/c station whose
//! effective service time stretches with its observed metrics; requests
//! propagate over the call DAG with unit fan-out, and the end-to-end
//! latency is the heaviest root-to-leaf path.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::encoding::{ServiceGraph, SystemState};
use crate::error::{Error, Result};
use crate::simkit::topology::topological_order;

/// Fixed tail-inflation factors for the mean sojourn time.
pub fn percentile_factor(percentile: u8) -> Result<f64> {
    match percentile {
        50 => Ok(1.0),
        90 => Ok(2.3),
        99 => Ok(4.6),
        other => Err(Error::Config(format!("unknown percentile {other}"))),
    }
}

/// Utilization cap; windows that hit it are reported as saturated.
pub const RHO_CAP: f64 = 0.99;

/// Latency produced by the oracle for one window.
#[derive(Clone, Copy, Debug)]
pub struct OracleLatency {
    pub ms: f64,
    /// True when any station had to be clipped to the utilization cap.
    pub saturated: bool,
}

/// Which ground-truth function the generator uses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OracleKind {
    /// M/M/c network with metric-dependent service times.
    Queueing,
    /// Latency affine in the quota vector; a degenerate reference case.
    Linear,
}

impl OracleKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "queueing" => Ok(OracleKind::Queueing),
            "linear" => Ok(OracleKind::Linear),
            other => Err(Error::Config(format!("unknown oracle '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OracleKind::Queueing => "queueing",
            OracleKind::Linear => "linear",
        }
    }
}

/// Ground-truth latency model for a fixed topology.
#[derive(Clone, Debug)]
pub struct OracleModel {
    kind: OracleKind,
    /// Unstressed service time per service, milliseconds.
    base_service_ms: Vec<f64>,
    /// Affine coefficients for the linear oracle.
    linear_coef: Vec<f64>,
    linear_base: f64,
    topo_order: Vec<usize>,
}

// Metric sensitivity of the effective service time.
const CPU_COEF: f64 = 0.9;
const MEM_COEF: f64 = 0.3;
const IO_COEF: f64 = 0.55;
const NET_COEF: f64 = 0.45;
/// Fraction of a callee's excess slowdown inherited by its callers.
const CASCADE_COEF: f64 = 0.4;
const IO_REF: f64 = 50.0;
const NET_REF: f64 = 100.0;

impl OracleModel {
    /// Draws per-service base times deterministically from the seed.
    pub fn new(graph: &ServiceGraph, kind: OracleKind, seed: u64) -> Result<Self> {
        let topo_order = topological_order(graph)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6f7261636c65); // "oracle"
        let n = graph.n();
        let base_service_ms = (0..n).map(|_| rng.gen_range(20.0..120.0)).collect();
        // one shared coefficient keeps the reference target exactly
        // linear in the total allocated quota
        let shared = rng.gen_range(1.5..3.5);
        let linear_coef = vec![shared; n];
        Ok(OracleModel {
            kind,
            base_service_ms,
            linear_coef,
            linear_base: 20.0,
            topo_order,
        })
    }

    /// Unstressed offered load per service at the trace's base rate:
    /// lambda_typical * base service time. Provisioning quotas against
    /// this keeps utilizations in the responsive band.
    pub fn typical_offered_load(
        &self,
        graph: &ServiceGraph,
        entries: &[usize],
        base_rps: f64,
    ) -> Vec<f64> {
        let n = graph.n();
        let mut lambda = vec![0.0; n];
        for &e in entries {
            lambda[e] = base_rps;
        }
        for &u in &self.topo_order {
            for v in graph.out_neighbors(u) {
                lambda[v] += lambda[u];
            }
        }
        (0..n)
            .map(|i| lambda[i] * self.base_service_ms[i] / 1000.0)
            .collect()
    }

    pub fn kind(&self) -> &OracleKind {
        &self.kind
    }

    /// Per-service arrival rates (requests/second) propagated over the
    /// DAG with unit fan-out: every request to a service calls each of
    /// its downstream dependencies once. Workload is given in
    /// requests/minute at the entry services.
    pub fn arrival_rates(&self, graph: &ServiceGraph, state: &SystemState) -> Vec<f64> {
        let n = graph.n();
        let mut lambda = vec![0.0; n];
        for i in 0..n {
            lambda[i] = state.workload().get(i, 0) / 60.0;
        }
        for &u in &self.topo_order {
            for v in graph.out_neighbors(u) {
                lambda[v] += lambda[u];
            }
        }
        lambda
    }

    /// End-to-end latency at a percentile. Strictly decreasing in any
    /// service quota that carries load, non-decreasing in arrival rate.
    pub fn latency(
        &self,
        graph: &ServiceGraph,
        state: &SystemState,
        percentile: u8,
    ) -> Result<OracleLatency> {
        let factor = percentile_factor(percentile)?;
        match self.kind {
            OracleKind::Linear => {
                let mut total = self.linear_base;
                for i in 0..graph.n() {
                    total += self.linear_coef[i] * state.quotas().get(i, 0);
                }
                Ok(OracleLatency {
                    ms: total * factor,
                    saturated: false,
                })
            }
            OracleKind::Queueing => self.queueing_latency(graph, state, factor),
        }
    }

    /// Service-time stretch implied by the observed metrics: quadratic in
    /// the utilizations, linear in the I/O and traffic counters.
    pub fn slowdown_factor(&self, metrics: &crate::numerics::Matrix, i: usize) -> f64 {
        1.0 + CPU_COEF * metrics.get(i, 0) * metrics.get(i, 0)
            + MEM_COEF * metrics.get(i, 1) * metrics.get(i, 1)
            + IO_COEF * metrics.get(i, 2) / IO_REF
            + NET_COEF * (metrics.get(i, 3) + metrics.get(i, 4)) / NET_REF
    }

    pub fn base_service_ms(&self, i: usize) -> f64 {
        self.base_service_ms[i]
    }

    /// Per-service service-time stretch including backpressure: a slow
    /// callee stretches its callers, so stress cascades multiple hops up
    /// the call chain.
    pub fn cascade_factors(&self, graph: &ServiceGraph, state: &SystemState) -> Vec<f64> {
        let n = graph.n();
        let mut cascade = vec![0.0; n];
        for &u in self.topo_order.iter().rev() {
            let own = self.slowdown_factor(state.metrics(), u);
            let mut worst_child = 0.0f64;
            for v in graph.out_neighbors(u) {
                worst_child = worst_child.max(cascade[v] - 1.0);
            }
            cascade[u] = own * (1.0 + CASCADE_COEF * worst_child);
        }
        cascade
    }

    fn queueing_latency(
        &self,
        graph: &ServiceGraph,
        state: &SystemState,
        factor: f64,
    ) -> Result<OracleLatency> {
        let n = graph.n();
        let lambda = self.arrival_rates(graph, state);
        let cascade = self.cascade_factors(graph, state);
        let mut saturated = false;
        let mut sojourn_ms = vec![0.0; n];
        for i in 0..n {
            let slowdown = cascade[i];
            let service_s = self.base_service_ms[i] / 1000.0 * slowdown;
            let mu = 1.0 / service_s;
            let servers = (state.quotas().get(i, 0).round() as usize).max(1);
            let capacity = servers as f64 * mu;
            let mut rate = lambda[i];
            if rate >= RHO_CAP * capacity {
                rate = RHO_CAP * capacity;
                saturated = true;
            }
            sojourn_ms[i] = mmc_mean_sojourn(rate, mu, servers) * 1000.0 * factor;
        }

        // heaviest entry-to-leaf path; only services that carry traffic
        // are on such a path
        let mut best = 0.0f64;
        let mut dp = vec![f64::NEG_INFINITY; n];
        for &u in &self.topo_order {
            let from_entry = if state.workload().get(u, 0) > 0.0 { 0.0 } else { f64::NEG_INFINITY };
            let mut incoming = from_entry;
            for i in 0..n {
                if graph.adjacency().get(i, u) == 1.0 {
                    incoming = incoming.max(dp[i]);
                }
            }
            if incoming > f64::NEG_INFINITY {
                dp[u] = incoming + sojourn_ms[u];
                best = best.max(dp[u]);
            }
        }
        if best == 0.0 {
            return Err(Error::State(
                "no traffic reaches any service; workload is zero everywhere".into(),
            ));
        }
        Ok(OracleLatency { ms: best, saturated })
    }
}

/// Mean time in system for an M/M/c queue (Erlang-C waiting time plus
/// service time), in the same time unit as 1/mu. Requires rho < 1.
pub fn mmc_mean_sojourn(lambda: f64, mu: f64, servers: usize) -> f64 {
    let c = servers.max(1);
    if lambda <= 0.0 {
        return 1.0 / mu;
    }
    let a = lambda / mu; // offered load
    let rho = a / c as f64;
    debug_assert!(rho < 1.0, "mmc_mean_sojourn requires rho < 1, got {rho}");
    // Erlang-C via the incremental term a^k / k!
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..c {
        term *= a / k as f64;
        sum += term;
    }
    let tail = term * a / c as f64 / (1.0 - rho);
    let p_wait = tail / (sum + tail);
    let wq = p_wait / (c as f64 * mu - lambda);
    wq + 1.0 / mu
}
