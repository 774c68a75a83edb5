//! Per-round measurements and their JSON-lines / CSV encodings.

use std::io::Write;

use flashe::Scheme;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundOutcome {
    Completed,
    NoSurvivors,
}

/// Mask availability at the start of a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheState {
    Cold,
    Partial,
    Warm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub client: u32,
    pub site: String,
    pub enc_seconds: f64,
    pub dec_seconds: f64,
    /// Block-cipher calls made while encrypting (excludes precomputation).
    pub enc_prf_blocks: u64,
    pub dec_prf_blocks: u64,
    pub enc_mask_evals: u64,
    pub dec_mask_evals: u64,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    /// Bytes the same round would move with unencrypted quantized values.
    pub plaintext_upload_bytes: u64,
    pub plaintext_download_bytes: u64,
    pub comm_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub outcome: RoundOutcome,
    pub survivors: Vec<u32>,
    pub scheme: Option<Scheme>,
    pub sparsity_percent: Option<f64>,
    /// Mask costs of both schemes when the policy is adaptive.
    pub double_cost: Option<u64>,
    pub single_cost: Option<u64>,
    pub cache: CacheState,
    pub clip: f64,
    pub clients: Vec<ClientReport>,
    pub server_add_seconds: f64,
    pub comm_seconds: f64,
    pub round_seconds: f64,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    pub plaintext_bytes: u64,
    pub header_bytes: u64,
    pub on_path_prf_blocks: u64,
    pub mask_evals: u64,
    /// Blocks computed in the idle window after this round for the next one.
    pub precomputed_blocks: u64,
    pub cost_delta_dollars: f64,
}

impl RoundReport {
    pub fn max_enc_seconds(&self) -> f64 {
        self.clients.iter().map(|c| c.enc_seconds).fold(0.0, f64::max)
    }

    pub fn max_dec_seconds(&self) -> f64 {
        self.clients.iter().map(|c| c.dec_seconds).fold(0.0, f64::max)
    }

    pub fn total_bytes(&self) -> u64 {
        self.upload_bytes + self.download_bytes
    }

    /// Copy with every wall-clock measurement zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.server_add_seconds = 0.0;
        r.round_seconds = 0.0;
        r.cost_delta_dollars = 0.0;
        for c in &mut r.clients {
            c.enc_seconds = 0.0;
            c.dec_seconds = 0.0;
        }
        r
    }
}

/// Flat per-round row for CSV output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub outcome: RoundOutcome,
    pub survivors: usize,
    pub scheme: Option<Scheme>,
    pub sparsity_percent: Option<f64>,
    pub cache: CacheState,
    pub upload_bytes: u64,
    pub download_bytes: u64,
    pub plaintext_bytes: u64,
    pub header_bytes: u64,
    pub max_enc_seconds: f64,
    pub max_dec_seconds: f64,
    pub server_add_seconds: f64,
    pub comm_seconds: f64,
    pub round_seconds: f64,
    pub on_path_prf_blocks: u64,
    pub mask_evals: u64,
    pub precomputed_blocks: u64,
    pub cost_delta_dollars: f64,
}

impl From<&RoundReport> for RoundSummary {
    fn from(r: &RoundReport) -> Self {
        Self {
            round: r.round,
            outcome: r.outcome,
            survivors: r.survivors.len(),
            scheme: r.scheme,
            sparsity_percent: r.sparsity_percent,
            cache: r.cache,
            upload_bytes: r.upload_bytes,
            download_bytes: r.download_bytes,
            plaintext_bytes: r.plaintext_bytes,
            header_bytes: r.header_bytes,
            max_enc_seconds: r.max_enc_seconds(),
            max_dec_seconds: r.max_dec_seconds(),
            server_add_seconds: r.server_add_seconds,
            comm_seconds: r.comm_seconds,
            round_seconds: r.round_seconds,
            on_path_prf_blocks: r.on_path_prf_blocks,
            mask_evals: r.mask_evals,
            precomputed_blocks: r.precomputed_blocks,
            cost_delta_dollars: r.cost_delta_dollars,
        }
    }
}

pub fn write_jsonl<W: Write>(reports: &[RoundReport], mut out: W) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(reports: &[RoundReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(RoundSummary::from(r))?;
    }
    w.flush()?;
    Ok(())
}
