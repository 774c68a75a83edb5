//! Affine quantization of real-valued updates into the integer plaintext space.
//!
//! A value is clipped to `[-α, α]` and mapped onto `[0, 2^M - 1]` with
//! round-half-even. Sums of `k` encoded values carry `k` zero-point offsets,
//! which [`dequantize_sum`] removes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prf::SchemeParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    clip: f64,
    bits: u32,
}

impl QuantParams {
    pub fn new(clip: f64, bits: u32) -> Result<Self> {
        if !clip.is_finite() || clip <= 0.0 {
            return Err(Error::InvalidParameter(format!("clip threshold must be finite and positive, got {clip}")));
        }
        if bits == 0 || bits > 63 {
            return Err(Error::InvalidParameter(format!("quantization width {bits} outside 1..=63")));
        }
        Ok(Self { clip, bits })
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// `2^M - 1`.
    pub fn levels(&self) -> u64 {
        (1u64 << self.bits) - 1
    }

    /// Largest input-domain error of a single encode/decode round trip.
    pub fn half_step(&self) -> f64 {
        self.clip / self.levels() as f64
    }

    /// Checks that sums of up to `max_clients` values cannot wrap the ring.
    pub fn check_headroom(&self, ring: SchemeParams, max_clients: u64) -> Result<()> {
        let guard = if max_clients <= 1 { 0 } else { 64 - (max_clients - 1).leading_zeros() };
        if self.bits + guard > ring.modulus_bits() {
            return Err(Error::InvalidParameter(format!(
                "{}-bit quantization with {max_clients} clients needs {} bits, ring has {}",
                self.bits,
                self.bits + guard,
                ring.modulus_bits()
            )));
        }
        Ok(())
    }
}

pub fn quantize(v: f64, p: &QuantParams) -> Result<u64> {
    if !v.is_finite() {
        return Err(Error::NonFinite(v));
    }
    let clipped = v.clamp(-p.clip, p.clip);
    let scaled = (clipped + p.clip) / (2.0 * p.clip) * p.levels() as f64;
    Ok((scaled.round_ties_even() as u64).min(p.levels()))
}

pub fn quantize_slice(values: &[f64], p: &QuantParams) -> Result<Vec<u64>> {
    values.iter().map(|&v| quantize(v, p)).collect()
}

/// Sum of `contributors` real values from the sum `q` of their encodings.
pub fn dequantize_sum(q: u64, contributors: u64, p: &QuantParams) -> Result<f64> {
    if contributors == 0 {
        return Err(Error::InvalidParameter("dequantize_sum needs at least one contributor".into()));
    }
    let levels = p.levels();
    if contributors.checked_mul(levels).is_some_and(|max| q > max) {
        return Err(Error::QuantOverflow { sum: q, contributors, levels });
    }
    Ok(q as f64 / levels as f64 * 2.0 * p.clip - contributors as f64 * p.clip)
}

/// Summary of one aggregated (global) update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean: f64,
    pub std: f64,
    pub max_abs: f64,
}

impl UpdateStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0, max_abs: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self { mean, std: var.sqrt(), max_abs }
    }
}

/// Statistics of past global updates. Never fed with client-local data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipHistory {
    rounds: Vec<UpdateStats>,
}

impl ClipHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_global_update(&mut self, global: &[f64]) {
        self.rounds.push(UpdateStats::of(global));
    }

    pub fn push(&mut self, stats: UpdateStats) {
        self.rounds.push(stats);
    }

    pub fn latest(&self) -> Option<&UpdateStats> {
        self.rounds.last()
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipConfig {
    /// Threshold used before any global update exists.
    pub bootstrap: f64,
    /// Multiple of the fitted standard deviation.
    pub default_factor: f64,
    /// Per-bit-width overrides of `default_factor`.
    pub factor_by_bits: BTreeMap<u32, f64>,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { bootstrap: 1.0, default_factor: 12.0, factor_by_bits: BTreeMap::new() }
    }
}

impl ClipConfig {
    pub fn factor(&self, bits: u32) -> f64 {
        self.factor_by_bits.get(&bits).copied().unwrap_or(self.default_factor)
    }
}

/// Clip threshold from a Gaussian fit of the latest global update.
///
/// Falls back to the bootstrap value without history or when the fitted
/// spread is degenerate.
pub fn fit_clip_threshold(history: &ClipHistory, bits: u32, config: &ClipConfig) -> f64 {
    match history.latest() {
        Some(s) if s.std.is_finite() && s.std > 0.0 => config.factor(bits) * s.std,
        _ => config.bootstrap,
    }
}
