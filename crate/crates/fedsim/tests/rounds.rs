use std::collections::BTreeMap;

use flashe::codec::{dequantize_sum, quantize, QuantParams};
use flashe::sparse::{topk_sparsify, Permutation};
use flashe::wire::{COMPACT_HEADER_BYTES, DENSE_HEADER_BYTES, RECORD_ENTRY_BYTES};
use flashe::Scheme;
use flashe_fedsim::config::{DropoutModel, PrecomputeConfig, SparsityStep};
use flashe_fedsim::report::{write_csv, write_jsonl, RoundSummary};
use flashe_fedsim::sim::{sample_survivors, synthetic_update};
use flashe_fedsim::*;

fn small(clients: u32, coords: usize) -> FederationConfig {
    FederationConfig { clients, layers: vec![coords], rounds: 1, seed: 11, ..Default::default() }
}

fn quantized(cfg: &FederationConfig, round: u32, client: u32, q: &QuantParams) -> Vec<u64> {
    synthetic_update(cfg, round, client).flatten().iter().map(|&v| quantize(v, q).unwrap()).collect()
}

#[test]
fn dense_round_matches_plaintext_mean() {
    let cfg = FederationConfig { policy: SchemePolicy::Double, ..small(4, 300) };
    let mut fed = Federation::new(cfg.clone()).unwrap();
    let report = fed.run_round().unwrap();
    assert_eq!(report.outcome, RoundOutcome::Completed);
    assert_eq!(report.scheme, Some(Scheme::Double));
    let q = QuantParams::new(report.clip, cfg.quant.bits).unwrap();
    let per_client: Vec<Vec<u64>> = (1..=4).map(|j| quantized(&cfg, 0, j, &q)).collect();
    for d in 0..300 {
        let sum: u64 = per_client.iter().map(|v| v[d]).sum();
        let expect = dequantize_sum(sum, 4, &q).unwrap() / 4.0;
        assert_eq!(fed.global_update()[d], expect, "coordinate {d}");
    }
}

#[test]
fn sparse_round_matches_plaintext_mean_per_coordinate() {
    let cfg = FederationConfig {
        layers: vec![120, 80],
        sparsity: vec![SparsityStep { from_round: 0, percent: 10.0 }],
        policy: SchemePolicy::Single,
        ..small(5, 0)
    };
    let mut fed = Federation::new(cfg.clone()).unwrap();
    let report = fed.run_round().unwrap();
    let q = QuantParams::new(report.clip, cfg.quant.bits).unwrap();
    let mut sums = vec![0u64; 200];
    let mut counts = vec![0u64; 200];
    for j in 1..=5 {
        let sp = topk_sparsify(&synthetic_update(&cfg, 0, j), &[], 10.0).unwrap();
        assert_eq!(fed.residual(j), sp.residual.as_slice());
        for (d, v) in sp.mask.iter_ones().zip(&sp.values) {
            sums[d] += quantize(*v, &q).unwrap();
            counts[d] += 1;
        }
    }
    for d in 0..200 {
        let expect =
            if counts[d] == 0 { 0.0 } else { dequantize_sum(sums[d], counts[d], &q).unwrap() / counts[d] as f64 };
        assert_eq!(fed.global_update()[d], expect, "coordinate {d}");
    }
}

/// Brute-force mask costs from the announced masks.
fn brute_force_costs(masks: &BTreeMap<u32, flashe::Bitmask>, len: usize) -> (u64, u64) {
    let k = masks.len() as u64;
    let (mut double, mut single) = (0u64, 0u64);
    for d in 0..len {
        let members: Vec<u32> = masks.iter().filter(|(_, m)| m.get(d)).map(|(&j, _)| j).collect();
        let runs = members.iter().enumerate().filter(|(i, &j)| *i == 0 || members[i - 1] + 1 != j).count() as u64;
        let s = members.len() as u64;
        double += 2 * s + 2 * k * runs;
        single += s + k * s;
    }
    (double, single)
}

#[test]
fn adaptive_choice_is_brute_force_cheaper() {
    for seed in 0..6 {
        let cfg = FederationConfig {
            policy: SchemePolicy::Adaptive,
            sparsity: vec![SparsityStep { from_round: 0, percent: 10.0 }],
            seed,
            dropout: DropoutModel { rate: 0.3, seed: Some(seed) },
            ..small(4, 512)
        };
        let mut fed = Federation::new(cfg.clone()).unwrap();
        let report = fed.run_round().unwrap();
        if report.outcome == RoundOutcome::NoSurvivors {
            continue;
        }
        let perm = Permutation::derive(&flashe::PermutationSeed { secret: perm_secret_of(&cfg), round: 0 }, 512);
        let masks: BTreeMap<u32, flashe::Bitmask> = report
            .survivors
            .iter()
            .map(|&j| {
                let sp = topk_sparsify(&synthetic_update(&cfg, 0, j), &[], 10.0).unwrap();
                (j, perm.apply_mask(&sp.mask).unwrap())
            })
            .collect();
        let (double, single) = brute_force_costs(&masks, 512);
        assert_eq!(report.double_cost, Some(double));
        assert_eq!(report.single_cost, Some(single));
        let cheaper = if double <= single { Scheme::Double } else { Scheme::Single };
        assert_eq!(report.scheme, Some(cheaper), "seed {seed}");
    }
}

/// The permutation secret follows the key in the federation's seeded stream.
fn perm_secret_of(cfg: &FederationConfig) -> [u8; 32] {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut key = [0u8; 32];
    rng.fill_bytes(&mut key);
    let mut secret = [0u8; 32];
    rng.fill_bytes(&mut secret);
    secret
}

#[test]
fn everyone_drops() {
    let cfg = FederationConfig { dropout: DropoutModel { rate: 1.0, seed: None }, ..small(4, 16) };
    let mut fed = Federation::new(cfg).unwrap();
    let r = fed.run_round().unwrap();
    assert_eq!(r.outcome, RoundOutcome::NoSurvivors);
    assert!(r.survivors.is_empty() && r.clients.is_empty());
    assert_eq!(r.total_bytes(), 0);
}

#[test]
fn precomputation_removes_on_path_cipher_calls() {
    let (n, d) = (4u32, 1000usize);
    let cfg = FederationConfig { rounds: 3, ..small(n, d) };
    let mut fed = Federation::new(cfg).unwrap();
    let reports = fed.run().unwrap();
    let blocks = (d as u64).div_ceil(4);
    let cold = &reports[0];
    assert_eq!(cold.cache, CacheState::Cold);
    // each client: two masks to encrypt, two boundary masks to decrypt {1..n}
    for c in &cold.clients {
        assert_eq!(c.enc_prf_blocks, 2 * blocks);
        assert_eq!(c.dec_prf_blocks, 2 * blocks);
    }
    assert_eq!(cold.on_path_prf_blocks, 4 * blocks * n as u64);
    assert_eq!(cold.precomputed_blocks, (n as u64 + 1) * blocks);
    for warm in &reports[1..] {
        assert_eq!(warm.cache, CacheState::Warm);
        assert_eq!(warm.on_path_prf_blocks, 0);
    }
}

#[test]
fn short_idle_window_gives_partial_cache() {
    let d = 1000usize;
    let blocks = (d as u64).div_ceil(4);
    let cfg = FederationConfig {
        rounds: 2,
        precompute: PrecomputeConfig { enabled: true, idle_window_blocks: Some(3 * blocks) },
        ..small(4, d)
    };
    let reports = Federation::new(cfg).unwrap().run().unwrap();
    assert_eq!(reports[0].precomputed_blocks, 3 * blocks);
    assert_eq!(reports[1].cache, CacheState::Partial);
    assert!(reports[1].on_path_prf_blocks > 0);
    assert!(reports[1].on_path_prf_blocks < reports[0].on_path_prf_blocks);

    let off = FederationConfig {
        rounds: 2,
        precompute: PrecomputeConfig { enabled: false, idle_window_blocks: None },
        ..small(4, d)
    };
    let reports = Federation::new(off).unwrap().run().unwrap();
    assert_eq!(reports[1].cache, CacheState::Cold);
    assert_eq!(reports[1].precomputed_blocks, 0);
}

#[test]
fn reports_are_reproducible() {
    let cfg = FederationConfig {
        rounds: 4,
        policy: SchemePolicy::Adaptive,
        sparsity: vec![SparsityStep { from_round: 1, percent: 20.0 }, SparsityStep { from_round: 3, percent: 5.0 }],
        dropout: DropoutModel { rate: 0.25, seed: None },
        ..small(6, 700)
    };
    let a: Vec<_> = Federation::new(cfg.clone()).unwrap().run().unwrap().iter().map(|r| r.without_timings()).collect();
    let b: Vec<_> = Federation::new(cfg).unwrap().run().unwrap().iter().map(|r| r.without_timings()).collect();
    assert_eq!(a, b);
}

#[test]
fn traffic_is_plaintext_plus_fixed_headers() {
    let n = 5u64;
    let mut fed = Federation::new(small(n as u32, 333)).unwrap();
    let r = fed.run_round().unwrap();
    assert_eq!(r.upload_bytes, r.clients.iter().map(|c| c.upload_bytes).sum::<u64>());
    assert_eq!(r.download_bytes, r.clients.iter().map(|c| c.download_bytes).sum::<u64>());
    assert_eq!(r.plaintext_bytes, n * 2 * 333 * 4);
    let up_headers = n * (DENSE_HEADER_BYTES + RECORD_ENTRY_BYTES) as u64;
    let down_headers = n * (DENSE_HEADER_BYTES as u64 + RECORD_ENTRY_BYTES as u64 * n);
    assert_eq!(r.header_bytes, up_headers + down_headers);
    assert_eq!(r.upload_bytes + r.download_bytes, r.plaintext_bytes + r.header_bytes);

    let cfg =
        FederationConfig { sparsity: vec![SparsityStep { from_round: 0, percent: 10.0 }], ..small(n as u32, 333) };
    let r = Federation::new(cfg).unwrap().run_round().unwrap();
    assert_eq!(r.header_bytes, 2 * n * COMPACT_HEADER_BYTES as u64);
}

#[test]
fn survivor_count_tracks_dropout_rate() {
    let (n, rate, rounds) = (20u32, 0.3, 2000u32);
    let total: usize = (0..rounds).map(|r| sample_survivors(n, rate, 99, r).len()).sum();
    let mean = total as f64 / rounds as f64;
    let expect = n as f64 * (1.0 - rate);
    let sigma = (n as f64 * rate * (1.0 - rate) / rounds as f64).sqrt();
    assert!((mean - expect).abs() <= 3.0 * sigma, "mean {mean} vs {expect} ± {}", 3.0 * sigma);
}

#[test]
fn comm_time_is_slowest_client() {
    let r = Federation::new(small(5, 64)).unwrap().run_round().unwrap();
    let max = r.clients.iter().map(|c| c.comm_seconds).fold(0.0, f64::max);
    assert_eq!(r.comm_seconds, max);
    assert!(r.round_seconds >= r.comm_seconds);
}

#[test]
fn cost_projection() {
    let pricing = Pricing { instance_per_hour: 2.0, egress_per_gb: 0.5, instances: None };
    let mut fed = Federation::new(small(3, 64)).unwrap();
    let mut r = fed.run_round().unwrap();
    assert_eq!(project_cost(&[r.clone()], 0, &pricing, 4).unwrap(), CostProjection::default());

    // worked example: 1.8 s per round, 2.5 MB per round, 1000 rounds, 4 instances
    r.round_seconds = 1.8;
    r.upload_bytes = 2_000_000;
    r.download_bytes = 500_000;
    let p = project_cost(&[r.clone()], 1000, &pricing, 4).unwrap();
    assert!((p.compute_hours - 0.5).abs() < 1e-12);
    assert!((p.compute_dollars - 4.0).abs() < 1e-12);
    assert!((p.egress_gb - 2.5).abs() < 1e-12);
    assert!((p.egress_dollars - 1.25).abs() < 1e-12);
    assert!((p.total_dollars - 5.25).abs() < 1e-12);
    let double = project_cost(&[r.clone()], 2000, &pricing, 4).unwrap();
    assert!((double.total_dollars - 2.0 * p.total_dollars).abs() < 1e-9);

    let mut dropped = r.clone();
    dropped.outcome = RoundOutcome::NoSurvivors;
    assert!(project_cost(&[dropped], 10, &pricing, 4).is_err());
}

#[test]
fn jsonl_and_csv_round_trip() {
    let cfg = FederationConfig { rounds: 2, ..small(3, 32) };
    let reports = Federation::new(cfg).unwrap().run().unwrap();
    let mut buf = Vec::new();
    write_jsonl(&reports, &mut buf).unwrap();
    let lines: Vec<RoundReport> =
        String::from_utf8(buf).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines, reports);

    let mut buf = Vec::new();
    write_csv(&reports, &mut buf).unwrap();
    let mut rd = csv::Reader::from_reader(buf.as_slice());
    let rows: Vec<RoundSummary> = rd.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].upload_bytes, reports[1].upload_bytes);
}
