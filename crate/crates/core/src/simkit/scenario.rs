//! Operational scenario specifications: per-kind stress multipliers on
//! the metric columns plus observation noise.

use crate::dataset::ScenarioKind;
use crate::error::{Error, Result};

/// Stress profile for one scenario kind. Multipliers scale the base draw
/// of their metric column; the noise level perturbs every metric
/// multiplicatively before clipping.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub cpu_mult: f64,
    pub io_mult: f64,
    pub net_mult: f64,
    pub noise: f64,
}

impl ScenarioSpec {
    pub fn for_kind(kind: ScenarioKind) -> Self {
        let (cpu_mult, io_mult, net_mult) = match kind {
            ScenarioKind::Cpu => (2.8, 1.0, 1.0),
            ScenarioKind::Io => (1.0, 6.0, 1.0),
            ScenarioKind::Network => (1.0, 1.0, 6.0),
            ScenarioKind::Mixed => (1.8, 3.0, 3.0),
        };
        ScenarioSpec {
            kind,
            cpu_mult,
            io_mult,
            net_mult,
            noise: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [
            ("cpu_mult", self.cpu_mult),
            ("io_mult", self.io_mult),
            ("net_mult", self.net_mult),
        ] {
            if m < 1.0 || !m.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be >= 1 for scenario {}, got {m}",
                    self.kind
                )));
            }
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::Config(format!(
                "noise must be nonnegative, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

/// A normalized scenario mix: kinds with sampling probabilities.
#[derive(Clone, Debug)]
pub struct ScenarioMix {
    entries: Vec<(ScenarioKind, f64)>,
}

impl ScenarioMix {
    pub fn uniform() -> Self {
        ScenarioMix {
            entries: ScenarioKind::ALL.iter().map(|&k| (k, 0.25)).collect(),
        }
    }

    pub fn single(kind: ScenarioKind) -> Self {
        ScenarioMix {
            entries: vec![(kind, 1.0)],
        }
    }

    pub fn new(entries: Vec<(ScenarioKind, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("scenario mix must not be empty".into()));
        }
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        if !(total.is_finite() && total > 0.0) || entries.iter().any(|&(_, w)| w < 0.0) {
            return Err(Error::Config("scenario mix weights must be nonnegative".into()));
        }
        Ok(ScenarioMix {
            entries: entries.into_iter().map(|(k, w)| (k, w / total)).collect(),
        })
    }

    /// Parses "cpu=0.25,io=0.25,network=0.25,mixed=0.25".
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for part in text.split(',') {
            let (kind, weight) = part.split_once('=').ok_or_else(|| {
                Error::Config(format!("scenario mix entry '{part}' is not kind=weight"))
            })?;
            let kind: ScenarioKind = kind.trim().parse()?;
            let weight: f64 = weight
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad weight in '{part}'")))?;
            entries.push((kind, weight));
        }
        ScenarioMix::new(entries)
    }

    /// Picks a kind from a uniform draw in [0, 1).
    pub fn sample(&self, u: f64) -> ScenarioKind {
        let mut acc = 0.0;
        for &(kind, w) in &self.entries {
            acc += w;
            if u < acc {
                return kind;
            }
        }
        self.entries.last().expect("non-empty mix").0
    }

    pub fn entries(&self) -> &[(ScenarioKind, f64)] {
        &self.entries
    }
}
