//! Federation description, loadable from JSON or TOML.

use std::path::Path;

use flashe::codec::ClipConfig;
use flashe::sparse::NormalizeMode;
use flashe::{QuantParams, Scheme, SchemeParams};
use serde::{Deserialize, Serialize};

use crate::cost::Pricing;
use crate::error::{Result, SimError};
use crate::network::BandwidthMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemePolicy {
    #[default]
    Double,
    Single,
    /// Picks the cheaper scheme each round from the announced bitmasks.
    Adaptive,
}

impl SchemePolicy {
    pub fn fixed(self) -> Option<Scheme> {
        match self {
            SchemePolicy::Double => Some(Scheme::Double),
            SchemePolicy::Single => Some(Scheme::Single),
            SchemePolicy::Adaptive => None,
        }
    }
}

/// From `from_round` on, clients send their top `percent`% per layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityStep {
    pub from_round: u32,
    pub percent: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutModel {
    /// Per-client, per-round probability of missing the round.
    pub rate: f64,
    /// Defaults to the federation seed.
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub bits: u32,
    /// Fixed clipping threshold; when absent it is fitted from past rounds.
    pub clip: Option<f64>,
    pub fit: ClipConfig,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self { bits: 16, clip: None, fit: ClipConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub bandwidth: BandwidthMatrix,
    pub server_site: String,
    /// Site of client `j` is entry `j - 1`; empty assigns sites round-robin.
    pub client_sites: Vec<String>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let bandwidth = BandwidthMatrix::five_site_fixture();
        let server_site = bandwidth.sites()[0].clone();
        Self { bandwidth, server_site, client_sites: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecomputeConfig {
    pub enabled: bool,
    /// Cipher blocks that fit in the idle window between rounds; unlimited when absent.
    pub idle_window_blocks: Option<u64>,
}

impl Default for PrecomputeConfig {
    fn default() -> Self {
        Self { enabled: true, idle_window_blocks: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub clients: u32,
    /// Layer sizes; the model has `sum(layers)` coordinates.
    pub layers: Vec<usize>,
    pub rounds: u32,
    pub policy: SchemePolicy,
    pub sparsity: Vec<SparsityStep>,
    pub dropout: DropoutModel,
    pub quant: QuantConfig,
    pub modulus_bits: u32,
    /// Standard deviation of the synthetic Gaussian updates.
    pub update_std: f64,
    pub normalize: NormalizeMode,
    pub seed: u64,
    pub precompute: PrecomputeConfig,
    pub network: NetworkConfig,
    pub pricing: Pricing,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            layers: vec![4096],
            rounds: 5,
            policy: SchemePolicy::default(),
            sparsity: Vec::new(),
            dropout: DropoutModel::default(),
            quant: QuantConfig::default(),
            modulus_bits: 32,
            update_std: 0.01,
            normalize: NormalizeMode::Mean,
            seed: 0,
            precompute: PrecomputeConfig::default(),
            network: NetworkConfig::default(),
            pricing: Pricing::default(),
        }
    }
}

impl FederationConfig {
    /// Parses TOML for `.toml` files and JSON otherwise.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let parse_err = |message: String| SimError::Parse { path: path.display().to_string(), message };
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn coords(&self) -> usize {
        self.layers.iter().sum()
    }

    pub fn scheme_params(&self) -> Result<SchemeParams> {
        Ok(SchemeParams::new(self.modulus_bits)?)
    }

    pub fn dropout_seed(&self) -> u64 {
        self.dropout.seed.unwrap_or(self.seed)
    }

    /// Sparsity in effect at `round`, `None` for dense rounds.
    pub fn sparsity_at(&self, round: u32) -> Option<f64> {
        self.sparsity.iter().take_while(|s| s.from_round <= round).last().map(|s| s.percent)
    }

    pub fn client_site(&self, client: u32) -> &str {
        let sites = if self.network.client_sites.is_empty() {
            self.network.bandwidth.sites()
        } else {
            &self.network.client_sites
        };
        &sites[(client as usize - 1) % sites.len()]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.clients == 0 || self.clients >= u32::MAX - 1 {
            return bad(format!("client count {} out of range", self.clients));
        }
        if self.layers.is_empty() || self.layers.contains(&0) {
            return bad("layers must be non-empty and positive".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.dropout.rate) {
            return bad(format!("dropout rate {} outside [0, 1]", self.dropout.rate));
        }
        if !(self.update_std.is_finite() && self.update_std > 0.0) {
            return bad(format!("update_std must be positive, got {}", self.update_std));
        }
        for w in self.sparsity.windows(2) {
            if w[1].from_round <= w[0].from_round {
                return bad("sparsity schedule rounds must increase".into());
            }
        }
        if let Some(s) = self.sparsity.iter().find(|s| !(s.percent > 0.0 && s.percent <= 100.0)) {
            return bad(format!("sparsity {}% outside (0, 100]", s.percent));
        }
        let ring = self.scheme_params()?;
        QuantParams::new(self.quant.clip.unwrap_or(1.0), self.quant.bits)?.check_headroom(ring, self.clients as u64)?;
        self.pricing.validate()?;
        if self.precompute.idle_window_blocks == Some(0) && self.precompute.enabled {
            return bad("idle window of zero blocks; disable precomputation instead".into());
        }
        let bw = &self.network.bandwidth;
        bw.site_index(&self.network.server_site)?;
        for s in &self.network.client_sites {
            bw.site_index(s)?;
        }
        if !self.network.client_sites.is_empty() && self.network.client_sites.len() != self.clients as usize {
            return bad(format!(
                "{} client sites listed for {} clients",
                self.network.client_sites.len(),
                self.clients
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        FederationConfig::default().validate().unwrap();
    }

    #[test]
    fn schedule_lookup() {
        let cfg = FederationConfig {
            sparsity: vec![
                SparsityStep { from_round: 2, percent: 20.0 },
                SparsityStep { from_round: 5, percent: 10.0 },
            ],
            ..Default::default()
        };
        assert_eq!(cfg.sparsity_at(0), None);
        assert_eq!(cfg.sparsity_at(2), Some(20.0));
        assert_eq!(cfg.sparsity_at(4), Some(20.0));
        assert_eq!(cfg.sparsity_at(9), Some(10.0));
    }

    #[test]
    fn validation_failures() {
        let base = FederationConfig::default();
        let cases = [
            FederationConfig { clients: 0, ..base.clone() },
            FederationConfig { layers: vec![], ..base.clone() },
            FederationConfig { layers: vec![3, 0], ..base.clone() },
            FederationConfig { rounds: 0, ..base.clone() },
            FederationConfig { dropout: DropoutModel { rate: 1.5, seed: None }, ..base.clone() },
            FederationConfig { modulus_bits: 24, ..base.clone() },
            FederationConfig { modulus_bits: 16, ..base.clone() },
            FederationConfig {
                sparsity: vec![
                    SparsityStep { from_round: 3, percent: 10.0 },
                    SparsityStep { from_round: 3, percent: 5.0 },
                ],
                ..base.clone()
            },
            FederationConfig { sparsity: vec![SparsityStep { from_round: 0, percent: 0.0 }], ..base.clone() },
            FederationConfig {
                network: NetworkConfig { server_site: "nowhere".into(), ..NetworkConfig::default() },
                ..base.clone()
            },
        ];
        for (i, c) in cases.iter().enumerate() {
            assert!(c.validate().is_err(), "case {i} accepted");
        }
    }

    #[test]
    fn json_and_toml() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("fed.json");
        std::fs::write(
            &json,
            r#"{"clients": 4, "layers": [10, 6], "rounds": 2, "policy": "adaptive",
            "sparsity": [{"from_round": 1, "percent": 25}], "dropout": {"rate": 0.1}}"#,
        )
        .unwrap();
        let cfg = FederationConfig::from_path(&json).unwrap();
        assert_eq!(cfg.coords(), 16);
        assert_eq!(cfg.policy, SchemePolicy::Adaptive);
        assert_eq!(cfg.client_site(6), cfg.network.bandwidth.sites()[0]);

        let toml_path = dir.path().join("fed.toml");
        std::fs::write(&toml_path, "clients = 3\nlayers = [8]\nrounds = 1\npolicy = \"single\"\n[quant]\nbits = 12\n")
            .unwrap();
        let cfg = FederationConfig::from_path(&toml_path).unwrap();
        assert_eq!(cfg.policy, SchemePolicy::Single);
        assert_eq!(cfg.quant.bits, 12);

        std::fs::write(&json, r#"{"clients": 4, "bogus": 1}"#).unwrap();
        assert!(matches!(FederationConfig::from_path(&json), Err(SimError::Parse { .. })));
        assert!(matches!(FederationConfig::from_path(dir.path().join("missing.json")), Err(SimError::Io(_))));
    }
}
