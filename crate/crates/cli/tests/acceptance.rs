//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any of them fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use flashe::cipher::{decrypt, encrypt, hom_sum};
use flashe::codec::{quantize, QuantParams};
use flashe::paillier::{batch_pack, batch_unpack, BatchLayout, PaillierKeypair};
use flashe::planner::{count_masks_exact, crossover_estimate, decide_masking};
use flashe::sparse::{aggregate_aligned, decrypt_sparse_residues, encrypt_compact, topk_sparsify};
use flashe::wire::{self, COMPACT_HEADER_BYTES, DENSE_HEADER_BYTES, RECORD_ENTRY_BYTES};
use flashe::{precompute, CachedMasks, LayeredUpdate, MaskSource, Prf, Scheme, SchemeParams, SecretKey};
use flashe_fedsim::network::{simulate_comm, BandwidthMatrix};
use num_bigint::{BigUint, RandBigInt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn ring(bits: u32) -> SchemeParams {
    SchemeParams::new(bits).unwrap()
}

fn random_residues(rng: &mut ChaCha20Rng, len: usize, bits: u32) -> Vec<u64> {
    let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
    (0..len).map(|_| rng.gen::<u64>() & mask).collect()
}

fn wrapping_sum(vectors: &[Vec<u64>], bits: u32) -> Vec<u64> {
    let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
    let mut out = vec![0u64; vectors[0].len()];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v) {
            *o = o.wrapping_add(*x) & mask;
        }
    }
    out
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

fn homomorphic_correctness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let trials = 10_000;
    for t in 0..trials {
        let bits = [16, 32, 64][r.gen_range(0..3)];
        let scheme = if t % 2 == 0 { Scheme::Double } else { Scheme::Single };
        let n = r.gen_range(2..=10u32);
        let d = r.gen_range(1..=4096usize);
        let round = r.gen();
        let prf = Prf::new(&SecretKey::generate(&mut r, ring(bits)));
        let plains: Vec<Vec<u64>> = (0..n).map(|_| random_residues(&mut r, d, bits)).collect();
        let cts: Vec<_> = plains.iter().zip(1..).map(|(m, j)| encrypt(&prf, scheme, round, j, m).unwrap()).collect();
        let got = decrypt(&prf, scheme, &hom_sum(&cts).unwrap().unwrap()).unwrap();
        if got != wrapping_sum(&plains, bits) {
            return outcome(false, format!("trial {t} (N={n}, D={d}, b={bits}, {scheme:?}) decrypted a wrong sum"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(secs < 60.0, format!("{trials} trials exact in {secs:.1} s (limit 60 s)"))
}

fn zero_inflation() -> Outcome {
    let mut r = rng(2);
    let prf = Prf::new(&SecretKey::generate(&mut r, ring(16)));
    let mut parts = Vec::new();
    let mut ok = true;
    for d in [16384usize, 65536, 262144] {
        let plains: Vec<Vec<u64>> = (0..3).map(|_| random_residues(&mut r, d, 16)).collect();
        let cts: Vec<_> =
            plains.iter().zip(1..).map(|(m, j)| encrypt(&prf, Scheme::Double, 0, j, m).unwrap()).collect();
        for ct in [cts[0].clone(), hom_sum(&cts).unwrap().unwrap()] {
            let bytes = wire::serialize(&ct).len();
            let entries = ct.record().len();
            let header = bytes - 2 * d;
            ok &= header == DENSE_HEADER_BYTES + RECORD_ENTRY_BYTES * entries;
            ok &= header <= 64 + RECORD_ENTRY_BYTES * entries;
            ok &= wire::deserialize(&wire::serialize(&ct)).unwrap() == ct;
        }
        parts.push(format!("D={d}: payload {} B", 2 * d));
    }
    outcome(
        ok,
        format!("{}; header {DENSE_HEADER_BYTES} B + {RECORD_ENTRY_BYTES} B per record entry", parts.join(", ")),
    )
}

/// Per-client cost measured by running one encryption and one decryption of
/// the full aggregate through an instrumented PRF.
fn measured_masks(prf: &Prf, scheme: Scheme, n: u32, d: usize) -> u64 {
    let plains: Vec<Vec<u64>> = (0..n).map(|_| vec![1u64; d]).collect();
    let cts: Vec<_> = plains.iter().zip(1..).map(|(m, j)| encrypt(prf, scheme, 0, j, m).unwrap()).collect();
    let agg = hom_sum(&cts).unwrap().unwrap();
    prf.reset_stats();
    encrypt(prf, scheme, 0, 1, &plains[0]).unwrap();
    decrypt(prf, scheme, &agg).unwrap();
    prf.stats().lane_evals
}

fn boundary_identities() -> Outcome {
    let d = 64u64;
    let prf = Prf::new(&SecretKey::generate(&mut rng(3), ring(32)));
    for n in 2..=100u32 {
        let all: Vec<u32> = (1..=n).collect();
        let double = count_masks_exact(&all, n, d, Scheme::Double).unwrap();
        let single = count_masks_exact(&all, n, d, Scheme::Single).unwrap();
        if double != 4 * d || single != (n as u64 + 1) * d {
            return outcome(
                false,
                format!("N={n}: counted {double} / {single}, expected {} / {}", 4 * d, (n as u64 + 1) * d),
            );
        }
        if matches!(n, 2 | 3 | 17 | 100) {
            let md = measured_masks(&prf, Scheme::Double, n, d as usize);
            let ms = measured_masks(&prf, Scheme::Single, n, d as usize);
            if md != double || ms != single {
                return outcome(
                    false,
                    format!("N={n}: instrumented PRF used {md} / {ms}, counted {double} / {single}"),
                );
            }
        }
    }
    outcome(true, format!("4D and (N+1)D for N in 2..=100 at D={d}; PRF counters agree for N in 2, 3, 17, 100"))
}

fn crossover_range() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [20, 40, 80] {
        let c = crossover_estimate(n, 1, 10_000, 4).unwrap();
        ok &= (0.3..=0.5).contains(&c);
        parts.push(format!("N={n}: {c:.2}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    outcome(ok, format!("{} in [0.3, 0.5]; {secs:.1} s (limit 120 s)", parts.join(", ")))
}

fn corner_case_counts() -> Outcome {
    let d = 1000usize;
    let prf = Prf::new(&SecretKey::generate(&mut rng(5), ring(32)));
    let mut parts = Vec::new();
    let mut ok = true;
    let aggregate = |clients: &[u32]| {
        let cts: Vec<_> =
            clients.iter().map(|&j| encrypt(&prf, Scheme::Double, 9, j, &vec![0u64; d]).unwrap()).collect();
        hom_sum(&cts).unwrap().unwrap()
    };
    for n in [2u32, 8, 20] {
        let agg = aggregate(&(1..=n).collect::<Vec<_>>());
        prf.reset_stats();
        decrypt(&prf, Scheme::Double, &agg).unwrap();
        let evals = prf.stats().lane_evals;
        ok &= evals == 2 * d as u64;
        parts.push(format!("contiguous N={n}: {evals}"));
    }
    for k in [1u32, 4, 10] {
        let agg = aggregate(&(1..=k).map(|i| 2 * i - 1).collect::<Vec<_>>());
        prf.reset_stats();
        decrypt(&prf, Scheme::Double, &agg).unwrap();
        let evals = prf.stats().lane_evals;
        ok &= evals == 2 * k as u64 * d as u64;
        parts.push(format!("alternating k={k}: {evals}"));
    }
    outcome(ok, format!("D={d}; {}", parts.join(", ")))
}

fn brute_force_cheaper(masks: &BTreeMap<u32, Vec<bool>>, d: usize) -> (u64, u64, Scheme) {
    let k = masks.len() as u64;
    let (mut double, mut single) = (0u64, 0u64);
    for c in 0..d {
        let members: Vec<u32> = masks.iter().filter(|(_, m)| m[c]).map(|(&j, _)| j).collect();
        let runs = members.windows(2).filter(|w| w[1] != w[0] + 1).count() as u64 + u64::from(!members.is_empty());
        double += 2 * members.len() as u64 + 2 * k * runs;
        single += (1 + k) * members.len() as u64;
    }
    (double, single, if double <= single { Scheme::Double } else { Scheme::Single })
}

fn sparse_oracle() -> Outcome {
    let mut r = rng(6);
    let quant = QuantParams::new(0.5, 16).unwrap();
    let trials = 200;
    for t in 0..trials {
        let prf = Prf::new(&SecretKey::generate(&mut r, ring(32)));
        let n = r.gen_range(1..=16u32);
        let d = r.gen_range(1..=4096usize);
        let density = r.gen_range(0.0..1.0);
        let mut bools = BTreeMap::new();
        let mut values = BTreeMap::new();
        for j in 1..=n {
            if r.gen_bool(0.75) {
                let bits: Vec<bool> = (0..d).map(|_| r.gen_bool(density)).collect();
                let vals: Vec<u64> =
                    bits.iter().filter(|&&b| b).map(|_| quantize(r.gen_range(-0.7..0.7), &quant).unwrap()).collect();
                bools.insert(j, bits);
                values.insert(j, vals);
            }
        }
        if bools.is_empty() {
            continue;
        }
        let mut expect = vec![0u64; d];
        for (j, bits) in &bools {
            let mut it = values[j].iter();
            for (c, &b) in bits.iter().enumerate() {
                if b {
                    expect[c] += it.next().unwrap();
                }
            }
        }
        let masks: BTreeMap<u32, flashe::Bitmask> =
            bools.iter().map(|(&j, b)| (j, flashe::Bitmask::from_bools(b))).collect();
        let decision = decide_masking(&masks, masks.len() as u64).unwrap();
        let (double, single, cheaper) = brute_force_cheaper(&bools, d);
        if (decision.double_cost, decision.single_cost, decision.scheme) != (double, single, cheaper) {
            return outcome(false, format!("trial {t}: decision {decision:?}, brute force {double} / {single}"));
        }
        for scheme in [Scheme::Double, Scheme::Single] {
            let inputs: Vec<_> = masks
                .iter()
                .map(|(&j, m)| (m.clone(), encrypt_compact(&prf, scheme, t, j, m, &values[&j]).unwrap()))
                .collect();
            let (counts, agg) = aggregate_aligned(&inputs).unwrap();
            let covered = (0..d).filter(|&c| bools.values().any(|b| b[c])).count();
            let got = decrypt_sparse_residues(&prf, &agg, &masks, &counts, scheme).unwrap();
            if agg.len() != covered || got != expect {
                return outcome(
                    false,
                    format!("trial {t} ({scheme:?}, N={n}, D={d}): sparse aggregate differs from plaintext sum"),
                );
            }
        }
    }
    outcome(true, format!("{trials} trials exact under both schemes; adaptive choice matches brute force"))
}

fn sparsification_traffic() -> Outcome {
    let d = 1usize << 20;
    let mut r = rng(7);
    let prf = Prf::new(&SecretKey::generate(&mut r, ring(16)));
    let quant = QuantParams::new(0.05, 16).unwrap();
    let layers: Vec<Vec<f64>> =
        [d / 2, d / 4, d / 4].iter().map(|&len| (0..len).map(|_| r.gen_range(-0.05..0.05)).collect()).collect();
    let update = LayeredUpdate { layers, round: 0, client: 1 };
    let dense_q: Vec<u64> = update.flatten().iter().map(|&v| quantize(v, &quant).unwrap()).collect();
    let dense = wire::serialize(&encrypt(&prf, Scheme::Double, 0, 1, &dense_q).unwrap()).len();

    let sparse = topk_sparsify(&update, &[], 10.0).unwrap();
    let q: Vec<u64> = sparse.values.iter().map(|&v| quantize(v, &quant).unwrap()).collect();
    let frame = wire::serialize_compact(&encrypt_compact(&prf, Scheme::Double, 0, 1, &sparse.mask, &q).unwrap()).len();
    let bitmask = sparse.mask.to_bytes().len();
    let uplink = frame + bitmask;
    let reduction = dense as f64 / uplink as f64;
    outcome(
        (4.5..=5.5).contains(&reduction),
        format!(
            "dense {dense} B, sparse {uplink} B ({} values x 2 B + {bitmask} B bitmask + {COMPACT_HEADER_BYTES} B header): {reduction:.2}x reduction, expected [4.5, 5.5]",
            q.len()
        ),
    )
}

fn paillier_correctness(keypair: &PaillierKeypair) -> Outcome {
    let toy = PaillierKeypair::from_primes(&BigUint::from(5u32), &BigUint::from(7u32)).unwrap();
    let n = 35u32;
    let mut toy_cases = 0;
    for m in 0..n {
        for rr in (1..n).filter(|x| x % 5 != 0 && x % 7 != 0) {
            let c = toy.public().encrypt_with_r(&BigUint::from(m), &BigUint::from(rr)).unwrap();
            if toy.decrypt(&c) != BigUint::from(m) {
                return outcome(false, format!("toy modulus: m={m}, r={rr} did not round-trip"));
            }
            toy_cases += 1;
        }
    }

    let mut r = rng(8);
    let pk = keypair.public();
    for _ in 0..8 {
        let a = r.gen_biguint_below(pk.n());
        let b = r.gen_biguint_below(pk.n());
        let ca = pk.encrypt(&a, &mut r).unwrap();
        let cb = pk.encrypt(&b, &mut r).unwrap();
        if keypair.decrypt(&ca) != a || keypair.decrypt(&pk.hom_add(&ca, &cb)) != (&a + &b) % pk.n() {
            return outcome(false, "2048-bit round trip or homomorphic sum failed");
        }
    }

    let layout = BatchLayout::new(2048, 16, 11).unwrap();
    if layout.guard_bits != 4 {
        return outcome(false, format!("batch layout for 11 addends has {} guard bits", layout.guard_bits));
    }
    let addends: Vec<Vec<u64>> = (0..11)
        .map(|i| if i == 0 { vec![0xFFFF; layout.slots] } else { random_residues(&mut r, layout.slots, 16) })
        .collect();
    let cts: Vec<BigUint> =
        addends.iter().map(|v| pk.encrypt(&batch_pack(v, &layout).unwrap(), &mut r).unwrap()).collect();
    let sum = cts[1..].iter().fold(cts[0].clone(), |acc, c| pk.hom_add(&acc, c));
    let got = batch_unpack(&keypair.decrypt(&sum), layout.slots, &layout);
    let expect: Vec<u64> = (0..layout.slots).map(|s| addends.iter().map(|v| v[s]).sum()).collect();
    outcome(
        got == expect,
        format!(
            "{toy_cases} toy cases exact; 2048-bit randomized ok; {} slots of 16+4 bits exact after 10 additions",
            layout.slots
        ),
    )
}

fn speed_ordering(keypair: &PaillierKeypair) -> Outcome {
    let d = 16384;
    let mut r = rng(9);
    let prf = Prf::new(&SecretKey::generate(&mut r, ring(16)));
    let values = random_residues(&mut r, d, 16);
    let flashe = median(
        (0..5)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(encrypt(&prf, Scheme::Double, 0, 1, &values).unwrap());
                t.elapsed()
            })
            .collect(),
    );
    let sample = 64;
    let pk = keypair.public();
    let per_value = median(
        (0..3)
            .map(|_| {
                let t = Instant::now();
                for &v in &values[..sample] {
                    std::hint::black_box(pk.encrypt(&BigUint::from(v), &mut r).unwrap());
                }
                t.elapsed() / sample as u32
            })
            .collect(),
    );
    let paillier = per_value.as_secs_f64() * d as f64;
    let speedup = paillier / flashe.as_secs_f64();
    outcome(
        speedup >= 10.0,
        format!(
            "double masking {:.3} ms, Paillier {paillier:.2} s (extrapolated from {sample} values): {speedup:.0}x",
            flashe.as_secs_f64() * 1e3
        ),
    )
}

fn precomputation_effect() -> Outcome {
    let d = 1usize << 18;
    let mut r = rng(10);
    let prf = Prf::new(&SecretKey::generate(&mut r, ring(32)));
    let values = random_residues(&mut r, d, 32);
    let (round, client) = (3, 5);
    let cold = median(
        (0..7)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(encrypt(&prf, Scheme::Double, round, client, &values).unwrap());
                t.elapsed()
            })
            .collect(),
    );
    let lanes = prf.params().lanes_per_block() as u64;
    let cache = precompute(&prf, round, [client, client + 1], d as u64, 2 * (d as u64).div_ceil(lanes)).unwrap();
    let warm_src = CachedMasks::new(&cache, &prf);
    let reference = encrypt(&prf, Scheme::Double, round, client, &values).unwrap();
    prf.reset_stats();
    let mut warm_times = Vec::new();
    for _ in 0..7 {
        let t = Instant::now();
        let ct = std::hint::black_box(encrypt(&warm_src, Scheme::Double, round, client, &values).unwrap());
        warm_times.push(t.elapsed());
        if ct != reference {
            return outcome(false, "cached encryption differs from direct encryption");
        }
    }
    let on_path = prf.stats().block_calls;
    let warm = median(warm_times);
    let ratio = cold.as_secs_f64() / warm.as_secs_f64();
    outcome(
        on_path == 0 && ratio > 10.0,
        format!(
            "D=2^18: {on_path} on-path block calls; cold {:.2} ms, warm {:.2} ms, ratio {ratio:.1} (needs > 10)",
            cold.as_secs_f64() * 1e3,
            warm.as_secs_f64() * 1e3
        ),
    )
}

fn wan_arithmetic() -> Outcome {
    let params = 40_000_000u64;
    let plain_bytes = params * 2;
    let extra = (plain_bytes as f64 * (2.4 - 1.0)).round() as u64;
    let bw = BandwidthMatrix::uniform(vec!["client".into(), "server".into()], 40.0).unwrap();
    let secs = simulate_comm(extra, extra, "client", "server", &bw).unwrap();
    let oracle = 2.0 * extra as f64 * 8.0 / 40e6;
    outcome(
        (secs - oracle).abs() < 1e-9 && (secs - 45.0).abs() <= 4.5,
        format!("{extra} extra bytes each way at 40 Mb/s: {secs:.1} s (target 45 s +-10%)"),
    )
}

fn ciphertext_uniformity() -> Outcome {
    let mut r = rng(12);
    let prf = Prf::new(&SecretKey::generate(&mut r, ring(32)));
    let samples = 100_000u32;
    let mut hist = [0u64; 256];
    for round in 0..samples {
        let ct = encrypt(&prf, Scheme::Double, round, 1, &[0xDEAD_BEEF]).unwrap();
        for b in (ct.residues()[0] as u32).to_le_bytes() {
            hist[b as usize] += 1;
        }
    }
    let total: u64 = hist.iter().sum();
    let expect = total as f64 / 256.0;
    let stat: f64 = hist.iter().map(|&o| (o as f64 - expect).powi(2) / expect).sum();
    let p = 1.0 - ChiSquared::new(255.0).unwrap().cdf(stat);
    outcome(p >= 0.001, format!("chi-square {stat:.1} on 255 df over {total} bytes, p = {p:.4} (reject below 0.001)"))
}

type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() -> ExitCode {
    let keypair = PaillierKeypair::keygen(2048, &mut rng(11)).unwrap();
    let criteria: [Check; 12] = [
        ("homomorphic correctness", Box::new(homomorphic_correctness)),
        ("zero message inflation", Box::new(zero_inflation)),
        ("mask-count boundary identities", Box::new(boundary_identities)),
        ("dropout crossover range", Box::new(crossover_range)),
        ("corner-case PRF counts", Box::new(corner_case_counts)),
        ("sparse pipeline oracle", Box::new(sparse_oracle)),
        ("sparsification uplink traffic", Box::new(sparsification_traffic)),
        ("Paillier baseline correctness", Box::new(|| paillier_correctness(&keypair))),
        ("speed relative to Paillier", Box::new(|| speed_ordering(&keypair))),
        ("precomputation effect", Box::new(precomputation_effect)),
        ("WAN communication arithmetic", Box::new(wan_arithmetic)),
        ("ciphertext byte uniformity", Box::new(ciphertext_uniformity)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.passed);
        println!("criterion {:>2} {} {name}: {}", i + 1, if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of 12 passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
