//! Synchronous federation rounds over the masking scheme.

use std::collections::BTreeMap;
use std::time::Instant;

use flashe::cipher::{decrypt, encrypt_owned, hom_sum};
use flashe::codec::{dequantize_sum, fit_clip_threshold, quantize_slice, ClipHistory, QuantParams};
use flashe::planner::decide_masking;
use flashe::prf::{precompute, CachedMasks, MaskCache, MaskSource, Prf, PrfStats, SchemeParams, SecretKey};
use flashe::sparse::{
    aggregate_aligned, compact, decrypt_sparse_residues, expand, normalize, topk_sparsify, CompactCiphertext,
    LayeredUpdate, Permutation, PermutationSeed,
};
use flashe::wire;
use flashe::Bitmask;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use rand_distr::{Distribution, Normal};

use crate::config::FederationConfig;
use crate::error::{Result, SimError};
use crate::network::{simulate_comm, synchronous_comm};
use crate::report::{CacheState, ClientReport, RoundOutcome, RoundReport};

/// Bytes naming a client next to its bitmask in the server broadcast.
const CLIENT_ID_BYTES: u64 = 4;

/// Clients that take part in `round`: each of `1..=n` independently drops
/// with probability `rate`.
pub fn sample_survivors(n: u32, rate: f64, seed: u64, round: u32) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(round));
    (1..=n).filter(|_| !rng.gen_bool(rate)).collect()
}

/// Gaussian stand-in for a locally trained model delta.
pub fn synthetic_update(config: &FederationConfig, round: u32, client: u32) -> LayeredUpdate {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_u64.rotate_left(40));
    rng.set_stream((u64::from(round) << 32) | u64::from(client));
    let normal = Normal::new(0.0, config.update_std).expect("validated std");
    let layers = config.layers.iter().map(|&len| (0..len).map(|_| normal.sample(&mut rng)).collect()).collect();
    LayeredUpdate { layers, round, client }
}

/// What one client hands to the server.
enum Upload {
    Dense(Vec<u8>),
    Sparse { frame: Vec<u8>, mask: Vec<u8> },
}

impl Upload {
    fn len(&self) -> u64 {
        match self {
            Upload::Dense(b) => b.len() as u64,
            Upload::Sparse { frame, mask } => (frame.len() + mask.len()) as u64,
        }
    }
}

struct Prepared {
    client: u32,
    mask: Bitmask,
    quantized: Vec<u64>,
}

pub struct Federation {
    config: FederationConfig,
    params: SchemeParams,
    prf: Prf,
    perm_secret: [u8; 32],
    residuals: Vec<Vec<f64>>,
    history: ClipHistory,
    cache: Option<MaskCache>,
    next_round: u32,
    global: Vec<f64>,
}

impl std::fmt::Debug for Federation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Federation").field("next_round", &self.next_round).finish_non_exhaustive()
    }
}

impl Federation {
    /// Sets up clients that already share a key and a permutation secret.
    pub fn new(config: FederationConfig) -> Result<Self> {
        config.validate()?;
        let params = config.scheme_params()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let key = SecretKey::generate(&mut rng, params);
        let mut perm_secret = [0u8; 32];
        rng.fill_bytes(&mut perm_secret);
        let d = config.coords();
        Ok(Self {
            residuals: vec![vec![0.0; d]; config.clients as usize],
            global: vec![0.0; d],
            params,
            prf: Prf::new(&key),
            perm_secret,
            history: ClipHistory::new(),
            cache: None,
            next_round: 0,
            config,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn next_round(&self) -> u32 {
        self.next_round
    }

    /// Latest decrypted global update in model coordinates.
    pub fn global_update(&self) -> &[f64] {
        &self.global
    }

    pub fn residual(&self, client: u32) -> &[f64] {
        &self.residuals[client as usize - 1]
    }

    pub fn prf(&self) -> &Prf {
        &self.prf
    }

    pub fn cache_state(&self, round: u32) -> CacheState {
        match &self.cache {
            Some(c) if c.round() == round => {
                if (1..=self.config.clients + 1).all(|j| c.contains_client(j)) {
                    CacheState::Warm
                } else {
                    CacheState::Partial
                }
            }
            _ => CacheState::Cold,
        }
    }

    /// Fills the mask cache for `round` within the idle-window budget.
    /// Returns the number of cipher blocks computed.
    pub fn precompute_schedule(&mut self, round: u32) -> Result<u64> {
        self.cache = None;
        if !self.config.precompute.enabled {
            return Ok(0);
        }
        let d = self.config.coords() as u64;
        let per_client = d.div_ceil(self.params.lanes_per_block() as u64);
        let budget = self.config.precompute.idle_window_blocks.unwrap_or(u64::MAX);
        let wanted = u64::from(self.config.clients) + 1;
        let fit = wanted.min(budget / per_client);
        if fit == 0 {
            return Ok(0);
        }
        let before = self.prf.stats();
        let cache = precompute(&self.prf, round, 1..=fit as u32, d, budget)?;
        self.cache = Some(cache);
        Ok((self.prf.stats() - before).block_calls)
    }

    pub fn run(&mut self) -> Result<Vec<RoundReport>> {
        (0..self.config.rounds).map(|_| self.run_round()).collect()
    }

    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.next_round;
        self.next_round += 1;
        let cfg = self.config.clone();
        let d = cfg.coords();
        let rb = self.params.residue_bytes() as u64;
        let cache_state = self.cache_state(round);
        let survivors = sample_survivors(cfg.clients, cfg.dropout.rate, cfg.dropout_seed(), round);
        let sparsity = cfg.sparsity_at(round);
        let clip = cfg.quant.clip.unwrap_or_else(|| fit_clip_threshold(&self.history, cfg.quant.bits, &cfg.quant.fit));
        let quant = QuantParams::new(clip, cfg.quant.bits)?;

        let mut report = RoundReport {
            round,
            outcome: RoundOutcome::NoSurvivors,
            survivors: survivors.clone(),
            scheme: None,
            sparsity_percent: sparsity,
            double_cost: None,
            single_cost: None,
            cache: cache_state,
            clip,
            clients: Vec::new(),
            server_add_seconds: 0.0,
            comm_seconds: 0.0,
            round_seconds: 0.0,
            upload_bytes: 0,
            download_bytes: 0,
            plaintext_bytes: 0,
            header_bytes: 0,
            on_path_prf_blocks: 0,
            mask_evals: 0,
            precomputed_blocks: 0,
            cost_delta_dollars: 0.0,
        };
        if survivors.is_empty() {
            report.precomputed_blocks = self.precompute_schedule(round + 1)?;
            return Ok(report);
        }

        // local training, error feedback, permutation, quantization
        let perm = sparsity.map(|_| Permutation::derive(&PermutationSeed { secret: self.perm_secret, round }, d));
        let mut prepared = Vec::with_capacity(survivors.len());
        for &j in &survivors {
            let update = synthetic_update(&cfg, round, j);
            let sp = topk_sparsify(&update, &self.residuals[j as usize - 1], sparsity.unwrap_or(100.0))?;
            self.residuals[j as usize - 1] = sp.residual;
            let (mask, values) = match &perm {
                Some(p) => {
                    let pmask = p.apply_mask(&sp.mask)?;
                    let pvalues = compact(&p.apply(&expand(&sp.mask, &sp.values)?)?, &pmask)?;
                    (pmask, pvalues)
                }
                None => (sp.mask, sp.values),
            };
            prepared.push(Prepared { client: j, mask, quantized: quantize_slice(&values, &quant)? });
        }
        let masks: BTreeMap<u32, Bitmask> = prepared.iter().map(|p| (p.client, p.mask.clone())).collect();

        let scheme = match cfg.policy.fixed() {
            Some(s) => s,
            None => {
                let decision = decide_masking(&masks, survivors.len() as u64)?;
                report.double_cost = Some(decision.double_cost);
                report.single_cost = Some(decision.single_cost);
                decision.scheme
            }
        };
        report.scheme = Some(scheme);

        // plaintext oracle of the quantized sum
        let mut oracle = vec![0u64; d];
        for p in &prepared {
            for (slot, &q) in p.mask.iter_ones().zip(&p.quantized) {
                oracle[slot] = self.params.add(oracle[slot], q);
            }
        }

        // client-side encryption
        let cached = self.cache.as_ref().filter(|c| c.round() == round).map(|c| CachedMasks::new(c, &self.prf));
        let src: &dyn MaskSource = match &cached {
            Some(c) => c,
            None => &self.prf,
        };
        let mut uploads = Vec::with_capacity(prepared.len());
        let mut clients = Vec::with_capacity(prepared.len());
        for p in &prepared {
            let before = self.prf.stats();
            let start = Instant::now();
            let upload = if sparsity.is_some() {
                let cc = flashe::sparse::encrypt_compact(src, scheme, round, p.client, &p.mask, &p.quantized)?;
                Upload::Sparse { frame: wire::serialize_compact(&cc), mask: p.mask.to_bytes() }
            } else {
                Upload::Dense(wire::serialize(&encrypt_owned(src, scheme, round, p.client, p.quantized.clone())?))
            };
            let enc_seconds = start.elapsed().as_secs_f64();
            let stats = self.prf.stats() - before;
            let plaintext_upload_bytes =
                p.quantized.len() as u64 * rb + if sparsity.is_some() { p.mask.byte_len() as u64 } else { 0 };
            clients.push(ClientReport {
                client: p.client,
                site: cfg.client_site(p.client).to_string(),
                enc_seconds,
                dec_seconds: 0.0,
                enc_prf_blocks: stats.block_calls,
                dec_prf_blocks: 0,
                enc_mask_evals: stats.lane_evals,
                dec_mask_evals: 0,
                upload_bytes: upload.len(),
                download_bytes: 0,
                plaintext_upload_bytes,
                plaintext_download_bytes: 0,
                comm_seconds: 0.0,
            });
            uploads.push(upload);
        }

        // server: parse and aggregate
        let start = Instant::now();
        let (frame, counts, download, plaintext_download) = if sparsity.is_some() {
            let mut parsed = Vec::with_capacity(uploads.len());
            for up in &uploads {
                let Upload::Sparse { frame, mask } = up else { unreachable!("dense upload in sparse round") };
                parsed.push((Bitmask::from_bytes(d, mask)?, wire::deserialize_compact(frame)?));
            }
            let (counts, agg) = aggregate_aligned(&parsed)?;
            let frame = wire::serialize_compact(&agg);
            // the broadcast also carries every survivor's bitmask
            let side: u64 = masks.values().map(|m| CLIENT_ID_BYTES + m.byte_len() as u64).sum();
            let download = frame.len() as u64 + side;
            (frame, counts, download, agg.len() as u64 * rb + side)
        } else {
            let mut parsed = Vec::with_capacity(uploads.len());
            for up in &uploads {
                let Upload::Dense(bytes) = up else { unreachable!("sparse upload in dense round") };
                parsed.push(wire::deserialize(bytes)?);
            }
            let agg = hom_sum(&parsed)?.expect("at least one survivor");
            let frame = wire::serialize(&agg);
            let download = frame.len() as u64;
            (frame, vec![survivors.len() as u32; d], download, d as u64 * rb)
        };
        report.server_add_seconds = start.elapsed().as_secs_f64();

        // every survivor decrypts and checks against the oracle
        let mut decrypted = Vec::new();
        for c in clients.iter_mut() {
            let before = self.prf.stats();
            let start = Instant::now();
            let sums = if sparsity.is_some() {
                let agg: CompactCiphertext = wire::deserialize_compact(&frame)?;
                decrypt_sparse_residues(src, &agg, &masks, &counts, scheme)?
            } else {
                decrypt(src, scheme, &wire::deserialize(&frame)?)?
            };
            c.dec_seconds = start.elapsed().as_secs_f64();
            let stats: PrfStats = self.prf.stats() - before;
            c.dec_prf_blocks = stats.block_calls;
            c.dec_mask_evals = stats.lane_evals;
            c.download_bytes = download;
            c.plaintext_download_bytes = plaintext_download;
            if let Some(k) = (0..d).find(|&k| sums[k] != oracle[k]) {
                return Err(SimError::OracleMismatch {
                    round,
                    client: c.client,
                    coordinate: k,
                    expected: oracle[k],
                    got: sums[k],
                });
            }
            c.comm_seconds = simulate_comm(
                c.upload_bytes,
                c.download_bytes,
                &c.site,
                &cfg.network.server_site,
                &cfg.network.bandwidth,
            )?;
            decrypted = sums;
        }

        // global update in model coordinates
        let mut sums = vec![0.0; d];
        for k in 0..d {
            if counts[k] > 0 {
                sums[k] = dequantize_sum(decrypted[k], u64::from(counts[k]), &quant)?;
            }
        }
        let update = normalize(&sums, &counts, cfg.normalize)?;
        self.global = match &perm {
            Some(p) => p.invert(&update)?,
            None => update,
        };
        self.history.record_global_update(&self.global);

        report.outcome = RoundOutcome::Completed;
        report.comm_seconds = synchronous_comm(clients.iter().map(|c| c.comm_seconds));
        report.upload_bytes = clients.iter().map(|c| c.upload_bytes).sum();
        report.download_bytes = clients.iter().map(|c| c.download_bytes).sum();
        report.plaintext_bytes = clients.iter().map(|c| c.plaintext_upload_bytes + c.plaintext_download_bytes).sum();
        report.header_bytes = report.upload_bytes + report.download_bytes - report.plaintext_bytes;
        report.on_path_prf_blocks = clients.iter().map(|c| c.enc_prf_blocks + c.dec_prf_blocks).sum();
        report.mask_evals = clients.iter().map(|c| c.enc_mask_evals + c.dec_mask_evals).sum();
        report.clients = clients;
        let crypto = report.max_enc_seconds() + report.server_add_seconds + report.max_dec_seconds();
        report.round_seconds = crypto + report.comm_seconds;
        let instances = cfg.pricing.instances_for(cfg.clients);
        report.cost_delta_dollars = cfg.pricing.dollars(crypto, report.header_bytes as f64, instances);
        report.precomputed_blocks = self.precompute_schedule(round + 1)?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survivors_are_deterministic() {
        assert_eq!(sample_survivors(10, 0.3, 5, 2), sample_survivors(10, 0.3, 5, 2));
        assert_eq!(sample_survivors(10, 0.0, 5, 2), (1..=10).collect::<Vec<_>>());
        assert!(sample_survivors(10, 1.0, 5, 2).is_empty());
    }

    #[test]
    fn updates_are_seeded() {
        let cfg = FederationConfig { layers: vec![5, 3], ..Default::default() };
        let a = synthetic_update(&cfg, 1, 2);
        assert_eq!(a, synthetic_update(&cfg, 1, 2));
        assert_ne!(a, synthetic_update(&cfg, 1, 3));
        assert_eq!(a.layers.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 3]);
    }
}
