//! Projection of per-round measurements onto a whole training run.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::report::{RoundOutcome, RoundReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pricing {
    pub instance_per_hour: f64,
    pub egress_per_gb: f64,
    /// Billed machines; defaults to one per client plus the server.
    pub instances: Option<u32>,
}

impl Default for Pricing {
    fn default() -> Self {
        Self { instance_per_hour: 0.68, egress_per_gb: 0.02, instances: None }
    }
}

impl Pricing {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.instance_per_hour) || !ok(self.egress_per_gb) {
            return Err(SimError::Config("prices must be finite and non-negative".into()));
        }
        if self.instances == Some(0) {
            return Err(SimError::Config("instance count must be positive".into()));
        }
        Ok(())
    }

    pub fn instances_for(&self, clients: u32) -> u32 {
        self.instances.unwrap_or(clients + 1)
    }

    pub fn dollars(&self, seconds: f64, bytes: f64, instances: u32) -> f64 {
        seconds / 3600.0 * self.instance_per_hour * instances as f64 + bytes / 1e9 * self.egress_per_gb
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostProjection {
    pub rounds: u64,
    pub compute_hours: f64,
    pub compute_dollars: f64,
    pub egress_gb: f64,
    pub egress_dollars: f64,
    pub total_dollars: f64,
}

/// Scales the mean completed round to `rounds` rounds.
///
/// Compute dollars are wall hours times the instance rate times the number
/// of instances; egress dollars are transferred gigabytes (10^9 bytes) times
/// the egress rate.
pub fn project_cost(reports: &[RoundReport], rounds: u64, pricing: &Pricing, instances: u32) -> Result<CostProjection> {
    pricing.validate()?;
    if rounds == 0 {
        return Ok(CostProjection::default());
    }
    let done: Vec<&RoundReport> = reports.iter().filter(|r| r.outcome == RoundOutcome::Completed).collect();
    if done.is_empty() {
        return Err(SimError::Config("no completed rounds to project from".into()));
    }
    let n = done.len() as f64;
    let mean_seconds = done.iter().map(|r| r.round_seconds).sum::<f64>() / n;
    let mean_bytes = done.iter().map(|r| r.total_bytes() as f64).sum::<f64>() / n;
    let compute_hours = mean_seconds * rounds as f64 / 3600.0;
    let compute_dollars = compute_hours * pricing.instance_per_hour * instances as f64;
    let egress_gb = mean_bytes * rounds as f64 / 1e9;
    let egress_dollars = egress_gb * pricing.egress_per_gb;
    Ok(CostProjection {
        rounds,
        compute_hours,
        compute_dollars,
        egress_gb,
        egress_dollars,
        total_dollars: compute_dollars + egress_dollars,
    })
}
