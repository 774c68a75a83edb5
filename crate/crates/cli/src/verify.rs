//! Self-checks runnable from the command line.

use std::collections::BTreeMap;
use std::str::FromStr;

use flashe::cipher::{decrypt, encrypt, hom_sum};
use flashe::planner::{count_masks_exact, crossover_estimate, decide_masking};
use flashe::sparse::{aggregate_aligned, decrypt_sparse_residues, encrypt_compact};
use flashe::{Bitmask, Prf, Scheme, SchemeParams, SecretKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Roundtrip,
    Oracle,
    Crossover,
    Uniformity,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["roundtrip", "oracle", "crossover", "uniformity", "all"];

    fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Roundtrip, Suite::Oracle, Suite::Crossover, Suite::Uniformity],
            s => vec![s],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Roundtrip => "roundtrip",
            Suite::Oracle => "oracle",
            Suite::Crossover => "crossover",
            Suite::Uniformity => "uniformity",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "roundtrip" => Ok(Suite::Roundtrip),
            "oracle" => Ok(Suite::Oracle),
            "crossover" => Ok(Suite::Crossover),
            "uniformity" => Ok(Suite::Uniformity),
            "all" => Ok(Suite::All),
            other => {
                Err(CliError::Usage(format!("unknown suite {other:?}; expected one of {}", Self::NAMES.join(", "))))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub suite: Suite,
    pub passed: bool,
    pub detail: String,
}

pub fn run(suite: Suite, seed: u64) -> Result<Vec<SuiteResult>, CliError> {
    suite
        .expand()
        .into_iter()
        .map(|s| {
            let (passed, detail) = match s {
                Suite::Roundtrip => roundtrip(seed)?,
                Suite::Oracle => oracle(seed)?,
                Suite::Crossover => crossover(seed)?,
                Suite::Uniformity => uniformity(seed)?,
                Suite::All => unreachable!("expanded"),
            };
            Ok(SuiteResult { suite: s, passed, detail })
        })
        .collect()
}

fn random_params(rng: &mut ChaCha20Rng) -> SchemeParams {
    SchemeParams::new([16, 32, 64][rng.gen_range(0..3)]).expect("supported width")
}

/// Random dense aggregates decrypt to plaintext sums in the ring.
fn roundtrip(seed: u64) -> Result<(bool, String), CliError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let trials = 2000;
    for t in 0..trials {
        let params = random_params(&mut rng);
        let prf = Prf::new(&SecretKey::generate(&mut rng, params));
        let n = rng.gen_range(2..=10u32);
        let d = rng.gen_range(1..=512usize);
        let round = rng.gen();
        let scheme = if rng.gen() { Scheme::Double } else { Scheme::Single };
        let plains: Vec<Vec<u64>> =
            (0..n).map(|_| (0..d).map(|_| rng.gen::<u64>() & params.residue_mask()).collect()).collect();
        let cts = plains
            .iter()
            .enumerate()
            .map(|(i, m)| encrypt(&prf, scheme, round, i as u32 + 1, m))
            .collect::<Result<Vec<_>, _>>()?;
        let got = decrypt(&prf, scheme, &hom_sum(&cts)?.expect("n >= 2"))?;
        for (k, &g) in got.iter().enumerate() {
            let expect = plains.iter().fold(0, |acc, m| params.add(acc, m[k]));
            if g != expect {
                return Ok((false, format!("trial {t}: coordinate {k} decrypted {g}, expected {expect}")));
            }
        }
    }
    Ok((true, format!("{trials} random aggregates decrypted exactly")))
}

/// Sparse aligned aggregation against plaintext sums, and the masking
/// decision against per-coordinate brute force.
fn oracle(seed: u64) -> Result<(bool, String), CliError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let trials = 300;
    for t in 0..trials {
        let params = random_params(&mut rng);
        let prf = Prf::new(&SecretKey::generate(&mut rng, params));
        let n = rng.gen_range(1..=16u32);
        let d = rng.gen_range(1..=1024usize);
        let density: f64 = rng.gen_range(0.01..1.0);
        let mut masks = BTreeMap::new();
        for j in 1..=n {
            if rng.gen_bool(0.8) {
                let bits: Vec<bool> = (0..d).map(|_| rng.gen_bool(density)).collect();
                masks.insert(j, Bitmask::from_bools(&bits));
            }
        }
        if masks.is_empty() {
            continue;
        }
        let decision = decide_masking(&masks, masks.len() as u64)?;
        let (double, single) = brute_force_costs(&masks, d);
        if (decision.double_cost, decision.single_cost) != (double, single) {
            return Ok((false, format!("trial {t}: planner costs {decision:?}, brute force ({double}, {single})")));
        }
        let mut expect = vec![0u64; d];
        let mut inputs = Vec::new();
        for (&j, mask) in &masks {
            let values: Vec<u64> = (0..mask.count_ones()).map(|_| rng.gen::<u64>() & params.residue_mask()).collect();
            for (k, &v) in mask.iter_ones().zip(&values) {
                expect[k] = params.add(expect[k], v);
            }
            inputs.push((mask.clone(), encrypt_compact(&prf, decision.scheme, 3, j, mask, &values)?));
        }
        let (counts, agg) = aggregate_aligned(&inputs)?;
        let got = decrypt_sparse_residues(&prf, &agg, &masks, &counts, decision.scheme)?;
        if got != expect {
            return Ok((false, format!("trial {t}: sparse aggregate disagrees with plaintext sums")));
        }
    }
    for n in 2..=100u32 {
        let all: Vec<u32> = (1..=n).collect();
        let double = count_masks_exact(&all, n, 1, Scheme::Double)?;
        let single = count_masks_exact(&all, n, 1, Scheme::Single)?;
        if double != 4 || single != u64::from(n) + 1 {
            return Ok((false, format!("N={n}: full participation costs {double}/{single}")));
        }
    }
    Ok((true, format!("{trials} sparse trials exact; mask counts at zero dropout match for N in 2..=100")))
}

pub fn brute_force_costs(masks: &BTreeMap<u32, Bitmask>, len: usize) -> (u64, u64) {
    let k = masks.len() as u64;
    let (mut double, mut single) = (0u64, 0u64);
    for d in 0..len {
        let members: Vec<u32> = masks.iter().filter(|(_, m)| m.get(d)).map(|(&j, _)| j).collect();
        let runs = (0..members.len()).filter(|&i| i == 0 || members[i - 1] + 1 != members[i]).count() as u64;
        let s = members.len() as u64;
        double += 2 * s + 2 * k * runs;
        single += s + k * s;
    }
    (double, single)
}

pub const CROSSOVER_CLIENTS: [u32; 3] = [20, 40, 80];
pub const CROSSOVER_RANGE: (f64, f64) = (0.3, 0.5);

fn crossover(seed: u64) -> Result<(bool, String), CliError> {
    let mut parts = Vec::new();
    let mut ok = true;
    for n in CROSSOVER_CLIENTS {
        let c = crossover_estimate(n, 1, 10_000, seed)?;
        ok &= (CROSSOVER_RANGE.0..=CROSSOVER_RANGE.1).contains(&c);
        parts.push(format!("N={n}: {c:.2}"));
    }
    Ok((ok, format!("{} (expected within [{}, {}])", parts.join(", "), CROSSOVER_RANGE.0, CROSSOVER_RANGE.1)))
}

pub const UNIFORMITY_SAMPLES: u32 = 100_000;
pub const UNIFORMITY_ALPHA: f64 = 0.001;

/// Byte-frequency chi-square p-value of `bytes` against the uniform law.
pub fn byte_uniformity_p(bytes: &[u8]) -> f64 {
    let mut hist = [0u64; 256];
    for &b in bytes {
        hist[b as usize] += 1;
    }
    let expect = bytes.len() as f64 / 256.0;
    let stat: f64 = hist.iter().map(|&o| (o as f64 - expect).powi(2) / expect).sum();
    let dist = ChiSquared::new(255.0).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

/// One fixed plaintext encrypted under fresh round indices; the ciphertext
/// bytes should look uniform.
pub fn uniformity_bytes(seed: u64, samples: u32) -> Result<Vec<u8>, CliError> {
    let params = SchemeParams::new(32)?;
    let prf = Prf::new(&SecretKey::generate(&mut ChaCha20Rng::seed_from_u64(seed), params));
    let plaintext = [0x0123_4567u64];
    let mut bytes = Vec::with_capacity(samples as usize * 4);
    for r in 0..samples {
        let ct = encrypt(&prf, Scheme::Double, r, 1, &plaintext)?;
        bytes.extend_from_slice(&(ct.residues()[0] as u32).to_le_bytes());
    }
    Ok(bytes)
}

fn uniformity(seed: u64) -> Result<(bool, String), CliError> {
    let p = byte_uniformity_p(&uniformity_bytes(seed, UNIFORMITY_SAMPLES)?);
    Ok((
        p >= UNIFORMITY_ALPHA,
        format!("chi-square p = {p:.4} over {UNIFORMITY_SAMPLES} ciphertexts (reject below {UNIFORMITY_ALPHA})"),
    ))
}
