//! Mask-generation cost model for double versus single masking.
//!
//! Per surviving client and coordinate, double masking costs two masks to
//! encrypt plus two per maximal run of consecutive survivor indices to
//! decrypt; single masking costs one mask to encrypt plus one per survivor.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitmask::Bitmask;
use crate::cipher::Scheme;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutScenario {
    pub total_clients: u32,
    pub dropout_rate: f64,
    pub coords: u64,
}

impl DropoutScenario {
    pub fn new(total_clients: u32, dropout_rate: f64, coords: u64) -> Result<Self> {
        if total_clients < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 clients, got {total_clients}")));
        }
        if coords == 0 {
            return Err(Error::InvalidParameter("coords must be positive".into()));
        }
        if !(0.0..=1.0).contains(&dropout_rate) {
            return Err(Error::InvalidParameter(format!("dropout rate {dropout_rate} outside [0, 1]")));
        }
        Ok(Self { total_clients, dropout_rate, coords })
    }
}

/// Masks to generate under one scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskBudget {
    pub scheme: Scheme,
    pub per_client_masks: f64,
    pub total_masks: u64,
}

/// Closed-form expected masks per surviving client under double masking.
pub fn expected_masks_double(n: u32, d: f64, coords: u64) -> f64 {
    let n = n as f64;
    2.0 * (-n * d * d + (n - 1.0) * d + 2.0) * coords as f64
}

/// Closed-form expected masks per surviving client under single masking.
pub fn expected_masks_single(n: u32, d: f64, coords: u64) -> f64 {
    let n = n as f64;
    (-n * d + n + 1.0) * coords as f64
}

/// Expected masks under the run-counting rule with clients on a line:
/// `E[runs] = (1 - d)(1 + (N - 1) d)`, ignoring the conditioning on at
/// least one survivor.
pub fn linear_expected_masks_double(n: u32, d: f64, coords: u64) -> f64 {
    let runs = (1.0 - d) * (1.0 + (n as f64 - 1.0) * d);
    (2.0 + 2.0 * runs) * coords as f64
}

/// Number of maximal blocks of consecutive integers in an ascending slice.
pub fn runs(sorted: &[u32]) -> usize {
    sorted.iter().enumerate().filter(|&(i, &j)| i == 0 || sorted[i - 1].checked_add(1) != Some(j)).count()
}

/// Exact masks generated by one surviving client for a concrete survivor set.
pub fn count_masks_exact(survivors: &[u32], n: u32, coords: u64, scheme: Scheme) -> Result<u64> {
    if survivors.is_empty() {
        return Err(Error::NoSurvivors);
    }
    let mut sorted = survivors.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&j| j == 0 || j > n) {
        return Err(Error::SurvivorOutOfRange { client: bad, total: n });
    }
    let per_coord = match scheme {
        Scheme::Double => 2 + 2 * runs(&sorted) as u64,
        Scheme::Single => 1 + sorted.len() as u64,
    };
    Ok(per_coord * coords)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub trials: u64,
    pub double_mean: f64,
    pub single_mean: f64,
    pub double_stderr: f64,
    pub single_stderr: f64,
}

/// Survivors of one round, conditioned on at least one survivor.
///
/// The first survivor is drawn from its exact conditional law
/// `P(first = k) ∝ d^(k-1) (1-d)`, the rest independently; this needs no
/// rejection loop and degrades to a uniform single survivor at `d = 1`.
pub fn sample_survivors<R: Rng + ?Sized>(rng: &mut R, n: u32, d: f64) -> Vec<u32> {
    let first = if d >= 1.0 {
        rng.gen_range(1..=n)
    } else if d <= 0.0 {
        1
    } else {
        let total = 1.0 - d.powi(n as i32);
        let u: f64 = rng.gen::<f64>() * total;
        let mut cum = 0.0;
        let mut pick = n;
        for k in 1..=n {
            cum += d.powi(k as i32 - 1) * (1.0 - d);
            if u < cum {
                pick = k;
                break;
            }
        }
        pick
    };
    let mut out = vec![first];
    for j in first + 1..=n {
        if !rng.gen_bool(d.clamp(0.0, 1.0)) {
            out.push(j);
        }
    }
    out
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Average per-client mask counts over seeded Bernoulli survivor draws.
///
/// Both schemes are evaluated on the same draw of each trial.
pub fn monte_carlo_masks(n: u32, d: f64, coords: u64, trials: u64, seed: u64) -> Result<MonteCarloEstimate> {
    DropoutScenario::new(n, d, coords)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let samples: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let survivors = sample_survivors(&mut trial_rng(seed, t), n, d);
            let double = count_masks_exact(&survivors, n, coords, Scheme::Double).expect("valid survivors");
            let single = count_masks_exact(&survivors, n, coords, Scheme::Single).expect("valid survivors");
            (double as f64, single as f64)
        })
        .collect();
    let doubles: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let singles: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (double_mean, double_stderr) = mean_and_stderr(&doubles);
    let (single_mean, single_stderr) = mean_and_stderr(&singles);
    Ok(MonteCarloEstimate { trials, double_mean, single_mean, double_stderr, single_stderr })
}

/// Grid resolution of [`crossover_estimate`].
pub const CROSSOVER_STEP: f64 = 0.01;

/// Smallest dropout rate on a 0.01 grid at which double masking is no
/// cheaper than single masking.
pub fn crossover_estimate(n: u32, coords: u64, trials: u64, seed: u64) -> Result<f64> {
    let steps = (1.0 / CROSSOVER_STEP).round() as u32;
    for k in 0..=steps {
        let d = k as f64 / steps as f64;
        let est = monte_carlo_masks(n, d, coords, trials, seed.wrapping_add(k as u64))?;
        if est.double_mean >= est.single_mean {
            return Ok(d);
        }
    }
    Ok(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskingDecision {
    pub scheme: Scheme,
    pub double_cost: u64,
    pub single_cost: u64,
}

/// Picks the scheme needing fewer masks across the whole federation.
///
/// For coordinate `d` with contributor set `S_d`, double masking costs
/// `2|S_d| + 2 * decryptors * runs(S_d)` and single masking
/// `|S_d| + decryptors * |S_d|`. Ties go to double masking.
pub fn decide_masking(masks: &BTreeMap<u32, Bitmask>, decryptors: u64) -> Result<MaskingDecision> {
    let mut iter = masks.values();
    let Some(first) = iter.next() else {
        return Ok(MaskingDecision { scheme: Scheme::Double, double_cost: 0, single_cost: 0 });
    };
    let len = first.len();
    if let Some(other) = iter.find(|m| m.len() != len) {
        return Err(Error::LengthMismatch { left: len, right: other.len() });
    }
    let entries: Vec<(u32, &Bitmask)> = masks.iter().map(|(&j, m)| (j, m)).collect();
    let words = len.div_ceil(64);
    let (mut members, mut run_starts) = (0u64, 0u64);
    for w in 0..words {
        let mut prev_client: Option<u32> = None;
        let mut prev_word = 0u64;
        for &(client, mask) in &entries {
            let word = mask.words()[w];
            members += word.count_ones() as u64;
            // a set bit starts a run unless the immediately preceding client index has it too
            let adjacent = prev_client.is_some_and(|p| p.checked_add(1) == Some(client));
            let starts = if adjacent { word & !prev_word } else { word };
            run_starts += starts.count_ones() as u64;
            prev_client = Some(client);
            prev_word = word;
        }
    }
    let double_cost = 2 * members + 2 * decryptors * run_starts;
    let single_cost = members + decryptors * members;
    let scheme = if double_cost <= single_cost { Scheme::Double } else { Scheme::Single };
    Ok(MaskingDecision { scheme, double_cost, single_cost })
}
