//! Micro-benchmarks of encryption, decryption, homomorphic addition and
//! ciphertext size across schemes.

use std::str::FromStr;
use std::time::Instant;

use flashe::cipher::{decrypt, encrypt_owned, hom_sum};
use flashe::paillier::{batch_pack, BatchLayout, PaillierKeypair, DEFAULT_KEY_BITS};
use flashe::{wire, Prf, Scheme, SchemeParams, SecretKey};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchScheme {
    FlasheDouble,
    FlasheSingle,
    Paillier,
    PaillierBatched,
}

impl BenchScheme {
    pub const ALL: [BenchScheme; 4] =
        [BenchScheme::FlasheDouble, BenchScheme::FlasheSingle, BenchScheme::Paillier, BenchScheme::PaillierBatched];

    pub fn name(self) -> &'static str {
        match self {
            BenchScheme::FlasheDouble => "flashe-double",
            BenchScheme::FlasheSingle => "flashe-single",
            BenchScheme::Paillier => "paillier",
            BenchScheme::PaillierBatched => "paillier-batched",
        }
    }
}

impl FromStr for BenchScheme {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Self::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown scheme {s:?}; expected one of flashe-double, flashe-single, paillier, paillier-batched"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub schemes: Vec<BenchScheme>,
    pub addends: usize,
    pub reps: usize,
    /// Plaintext width in bits.
    pub value_bits: u32,
    pub key_bits: u32,
    /// Paillier timings measure at most this many values (or batched
    /// plaintexts) and scale linearly to the full size.
    pub paillier_sample: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            sizes: vec![16384, 65536, 262144],
            schemes: BenchScheme::ALL.to_vec(),
            addends: 10,
            reps: 3,
            value_bits: 16,
            key_bits: DEFAULT_KEY_BITS,
            paillier_sample: 32,
            seed: 0,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.reps < 3 {
            return Err(CliError::Usage(format!("need at least 3 repetitions, got {}", self.reps)));
        }
        if self.addends == 0 {
            return Err(CliError::Usage("addends must be positive".into()));
        }
        if self.paillier_sample == 0 {
            return Err(CliError::Usage("paillier sample must be positive".into()));
        }
        if ![16, 32, 64].contains(&self.value_bits) {
            return Err(CliError::Usage(format!("value width {} not in 16, 32, 64", self.value_bits)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scheme: BenchScheme,
    pub size: usize,
    pub plaintext_bytes: u64,
    pub ciphertext_bytes: u64,
    pub inflation: f64,
    pub enc_seconds: f64,
    pub dec_seconds: f64,
    pub add_seconds: f64,
    pub reps: usize,
    /// Values (or batched plaintexts) actually processed per timing.
    pub measured_units: usize,
    /// Timings scaled up from a sample rather than measured in full.
    pub extrapolated: bool,
}

pub fn median(xs: &mut [f64]) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn time<T>(f: impl FnOnce() -> T) -> (f64, T) {
    let start = Instant::now();
    let out = f();
    (start.elapsed().as_secs_f64(), out)
}

fn median_of<T>(reps: usize, mut f: impl FnMut() -> (f64, T)) -> (f64, T) {
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        let (t, v) = f();
        times.push(t);
        last = Some(v);
    }
    (median(&mut times), last.expect("reps >= 1"))
}

fn empty_row(scheme: BenchScheme, reps: usize) -> BenchRow {
    BenchRow {
        scheme,
        size: 0,
        plaintext_bytes: 0,
        ciphertext_bytes: 0,
        inflation: 0.0,
        enc_seconds: 0.0,
        dec_seconds: 0.0,
        add_seconds: 0.0,
        reps,
        measured_units: 0,
        extrapolated: false,
    }
}

fn random_values(rng: &mut ChaCha20Rng, n: usize, bits: u32) -> Vec<u64> {
    let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
    (0..n).map(|_| rng.gen::<u64>() & mask).collect()
}

fn bench_flashe(spec: &BenchSpec, scheme: Scheme, bs: BenchScheme, size: usize) -> Result<BenchRow, CliError> {
    let params = SchemeParams::new(spec.value_bits)?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let prf = Prf::new(&SecretKey::generate(&mut rng, params));
    let inputs: Vec<Vec<u64>> = (0..spec.addends).map(|_| random_values(&mut rng, size, spec.value_bits)).collect();
    let (enc_seconds, ct) = median_of(spec.reps, || {
        let buf = inputs[0].clone();
        time(|| encrypt_owned(&prf, scheme, 0, 1, buf))
    });
    let ciphertext_bytes = wire::serialize(&ct?).len() as u64;
    let cts = inputs
        .iter()
        .enumerate()
        .map(|(i, m)| encrypt_owned(&prf, scheme, 0, i as u32 + 1, m.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let (add_seconds, agg) = median_of(spec.reps, || time(|| hom_sum(&cts)));
    let agg = agg?.expect("addends >= 1");
    let (dec_seconds, plain) = median_of(spec.reps, || time(|| decrypt(&prf, scheme, &agg)));
    let plain = plain?;
    for (k, &p) in plain.iter().enumerate() {
        let expect = inputs.iter().fold(0u64, |acc, m| params.add(acc, m[k]));
        if p != expect {
            return Err(CliError::Verification(format!("{} decrypted a wrong sum at {k}", bs.name())));
        }
    }
    let plaintext_bytes = (size * params.residue_bytes()) as u64;
    Ok(BenchRow {
        scheme: bs,
        size,
        plaintext_bytes,
        ciphertext_bytes,
        inflation: ciphertext_bytes as f64 / plaintext_bytes as f64,
        enc_seconds,
        dec_seconds,
        add_seconds,
        reps: spec.reps,
        measured_units: size,
        extrapolated: false,
    })
}

fn bench_paillier(spec: &BenchSpec, kp: &PaillierKeypair, batched: bool, size: usize) -> Result<BenchRow, CliError> {
    let pk = kp.public();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let values = random_values(&mut rng, size, spec.value_bits);
    let (units, plaintexts): (usize, Vec<BigUint>) = if batched {
        let layout = BatchLayout::new(spec.key_bits, spec.value_bits, spec.addends as u64)?;
        let packed = values.chunks(layout.slots).map(|c| batch_pack(c, &layout)).collect::<Result<Vec<_>, _>>()?;
        (packed.len(), packed)
    } else {
        (size, values.iter().map(|&v| BigUint::from(v)).collect())
    };
    let sample = units.min(spec.paillier_sample);
    let scale = units as f64 / sample as f64;
    let (enc_seconds, cts) = median_of(spec.reps, || {
        time(|| plaintexts[..sample].iter().map(|m| pk.encrypt(m, &mut rng)).collect::<Result<Vec<_>, _>>())
    });
    let cts = cts?;
    let (dec_seconds, _) =
        median_of(spec.reps, || time(|| cts.iter().for_each(|c| drop(std::hint::black_box(kp.decrypt(c))))));
    // fold `addends` ciphertexts per unit
    let (add_seconds, _) = median_of(spec.reps, || {
        time(|| {
            cts.iter().for_each(|c| {
                drop(std::hint::black_box((1..spec.addends).fold(c.clone(), |acc, _| pk.hom_add(&acc, c))))
            })
        })
    });
    let ciphertext_bytes = units as u64 * cts.first().map_or(0, |c| pk.to_bytes(c).len() as u64);
    let plaintext_bytes = (size * (spec.value_bits as usize / 8)) as u64;
    Ok(BenchRow {
        scheme: if batched { BenchScheme::PaillierBatched } else { BenchScheme::Paillier },
        size,
        plaintext_bytes,
        ciphertext_bytes,
        inflation: ciphertext_bytes as f64 / plaintext_bytes as f64,
        enc_seconds: enc_seconds * scale,
        dec_seconds: dec_seconds * scale,
        add_seconds: add_seconds * scale,
        reps: spec.reps,
        measured_units: sample,
        extrapolated: sample < units,
    })
}

pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>, CliError> {
    spec.validate()?;
    let needs_paillier = spec.schemes.iter().any(|s| matches!(s, BenchScheme::Paillier | BenchScheme::PaillierBatched));
    let keypair = if needs_paillier && spec.sizes.iter().any(|&s| s > 0) {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed ^ 0x9A11);
        Some(PaillierKeypair::keygen(spec.key_bits, &mut rng)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for &size in &spec.sizes {
        for &scheme in &spec.schemes {
            if size == 0 {
                rows.push(empty_row(scheme, spec.reps));
                continue;
            }
            rows.push(match scheme {
                BenchScheme::FlasheDouble => bench_flashe(spec, Scheme::Double, scheme, size)?,
                BenchScheme::FlasheSingle => bench_flashe(spec, Scheme::Single, scheme, size)?,
                BenchScheme::Paillier => bench_paillier(spec, keypair.as_ref().expect("keypair"), false, size)?,
                BenchScheme::PaillierBatched => bench_paillier(spec, keypair.as_ref().expect("keypair"), true, size)?,
            });
        }
    }
    Ok(rows)
}

pub fn render_table(rows: &[BenchRow]) -> String {
    let mut out = format!(
        "{:<17} {:>8} {:>13} {:>9} {:>12} {:>12} {:>12}\n",
        "scheme", "size", "ct bytes", "inflation", "enc s", "dec s", "add s"
    );
    for r in rows {
        let mark = if r.extrapolated { "*" } else { "" };
        out.push_str(&format!(
            "{:<17} {:>8} {:>13} {:>9.3} {:>11.6}{mark:1} {:>11.6}{mark:1} {:>11.6}{mark:1}\n",
            r.scheme.name(),
            r.size,
            r.ciphertext_bytes,
            r.inflation,
            r.enc_seconds,
            r.dec_seconds,
            r.add_seconds
        ));
    }
    if rows.iter().any(|r| r.extrapolated) {
        out.push_str("* scaled linearly from a sample\n");
    }
    out
}

pub fn write_csv<W: std::io::Write>(rows: &[BenchRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
