//! Synthetic request-rate traces: smooth daily-style fluctuation or a
//! bursty profile with pronounced spikes.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Trace shapes. A smooth trace keeps max/min at 1.5 or below; a bursty
/// trace guarantees a ratio of at least 5.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceShape {
    Smooth,
    Bursty,
}

impl TraceShape {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "smooth" => Ok(TraceShape::Smooth),
            "bursty" => Ok(TraceShape::Bursty),
            other => Err(Error::Config(format!("unknown trace shape '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TraceShape::Smooth => "smooth",
            TraceShape::Bursty => "bursty",
        }
    }
}

/// Per-window request rates (requests per second) at the entry services.
#[derive(Clone, Debug)]
pub struct TraceProfile {
    pub shape: TraceShape,
    pub base_rps: f64,
    pub rates: Vec<f64>,
}

impl TraceProfile {
    pub fn generate(
        shape: TraceShape,
        base_rps: f64,
        n_windows: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        if base_rps <= 0.0 || !base_rps.is_finite() {
            return Err(Error::Config(format!("base RPS must be positive, got {base_rps}")));
        }
        if n_windows == 0 {
            return Err(Error::Config("trace needs at least one window".into()));
        }
        let mut rates = Vec::with_capacity(n_windows);
        match shape {
            TraceShape::Smooth => {
                for t in 0..n_windows {
                    let phase = t as f64 / 48.0 * std::f64::consts::TAU;
                    let wobble = rng.gen_range(-0.03..0.03);
                    rates.push(base_rps * (1.0 + 0.15 * phase.sin() + wobble));
                }
            }
            TraceShape::Bursty => {
                // guaranteed low point keeps the max/min ratio honest
                rates.push(base_rps * 0.28);
                let mut burst_seen = false;
                for _ in 1..n_windows {
                    if rng.gen_bool(0.15) {
                        burst_seen = true;
                        rates.push(base_rps * rng.gen_range(1.4..1.7));
                    } else {
                        rates.push(base_rps * rng.gen_range(0.28..0.6));
                    }
                }
                if !burst_seen && n_windows > 1 {
                    let idx = n_windows / 2;
                    rates[idx] = base_rps * 1.55;
                }
            }
        }
        let profile = TraceProfile {
            shape,
            base_rps,
            rates,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.iter().any(|&r| r <= 0.0 || !r.is_finite()) {
            return Err(Error::Config("trace rates must be positive".into()));
        }
        let max = self.rates.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.rates.iter().cloned().fold(f64::MAX, f64::min);
        let ratio = max / min;
        match self.shape {
            TraceShape::Smooth if ratio > 1.5 => Err(Error::Config(format!(
                "smooth trace has max/min ratio {ratio:.2} > 1.5"
            ))),
            TraceShape::Bursty if self.rates.len() > 1 && ratio < 5.0 => Err(Error::Config(
                format!("bursty trace has max/min ratio {ratio:.2} < 5"),
            )),
            _ => Ok(()),
        }
    }
}
