//! WAN model: per-ordered-pair bandwidth between sites.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Bandwidth in Mb/s (10^6 bits per second) for every ordered site pair.
///
/// `mbps[a][b]` is the rate from site `a` to site `b`; the diagonal is the
/// intra-site (LAN) rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct BandwidthMatrix {
    sites: Vec<String>,
    mbps: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    sites: Vec<String>,
    mbps: Vec<Vec<f64>>,
}

impl TryFrom<RawMatrix> for BandwidthMatrix {
    type Error = SimError;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        BandwidthMatrix::new(raw.sites, raw.mbps)
    }
}

impl From<BandwidthMatrix> for RawMatrix {
    fn from(m: BandwidthMatrix) -> Self {
        RawMatrix { sites: m.sites, mbps: m.mbps }
    }
}

impl BandwidthMatrix {
    pub fn new(sites: Vec<String>, mbps: Vec<Vec<f64>>) -> Result<Self> {
        if sites.is_empty() {
            return Err(SimError::Config("bandwidth matrix needs at least one site".into()));
        }
        if mbps.len() != sites.len() || mbps.iter().any(|row| row.len() != sites.len()) {
            return Err(SimError::Config(format!("bandwidth matrix must be {0}x{0}", sites.len())));
        }
        if let Some(bad) = mbps.iter().flatten().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(SimError::Config(format!("bandwidth entries must be positive, got {bad}")));
        }
        for (i, s) in sites.iter().enumerate() {
            if sites[..i].contains(s) {
                return Err(SimError::Config(format!("duplicate site {s:?}")));
            }
        }
        Ok(Self { sites, mbps })
    }

    /// Five regions. The slowest link is 40 Mb/s and every intra-site rate is
    /// 120 times the mean inter-site rate; other entries are illustrative.
    pub fn five_site_fixture() -> Self {
        let sites = ["us-east", "us-west", "eu-west", "ap-northeast", "ap-southeast"];
        #[rustfmt::skip]
        let wan = [
            [0.0,   420.0, 300.0, 150.0, 110.0],
            [380.0, 0.0,   160.0, 260.0, 200.0],
            [320.0, 150.0, 0.0,   70.0,  40.0 ],
            [140.0, 240.0, 65.0,  0.0,   180.0],
            [100.0, 190.0, 45.0,  170.0, 0.0  ],
        ];
        let off: Vec<f64> = (0..5).flat_map(|a| (0..5).filter(move |&b| b != a).map(move |b| wan[a][b])).collect();
        let lan = 120.0 * off.iter().sum::<f64>() / off.len() as f64;
        let mbps = (0..5).map(|a| (0..5).map(|b| if a == b { lan } else { wan[a][b] }).collect()).collect();
        Self::new(sites.iter().map(|s| s.to_string()).collect(), mbps).expect("fixture is valid")
    }

    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    pub fn site_index(&self, name: &str) -> Result<usize> {
        self.sites.iter().position(|s| s == name).ok_or_else(|| SimError::UnknownSite(name.to_string()))
    }

    pub fn mbps(&self, from: usize, to: usize) -> f64 {
        self.mbps[from][to]
    }

    fn inter_site(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.sites.len();
        (0..n).flat_map(move |a| (0..n).filter(move |&b| b != a).map(move |b| self.mbps[a][b]))
    }

    /// Slowest inter-site link, or `None` with a single site.
    pub fn tail_wan(&self) -> Option<f64> {
        self.inter_site().min_by(f64::total_cmp)
    }

    pub fn mean_wan(&self) -> Option<f64> {
        let n = self.sites.len();
        (n > 1).then(|| self.inter_site().sum::<f64>() / (n * (n - 1)) as f64)
    }

    pub fn mean_lan(&self) -> f64 {
        (0..self.sites.len()).map(|a| self.mbps[a][a]).sum::<f64>() / self.sites.len() as f64
    }

    /// Uniform matrix with every pair (and the diagonal) at `mbps`.
    pub fn uniform(sites: Vec<String>, mbps: f64) -> Result<Self> {
        let n = sites.len();
        Self::new(sites, vec![vec![mbps; n]; n])
    }
}

pub fn transfer_seconds(bytes: u64, mbps: f64) -> f64 {
    bytes as f64 * 8.0 / (mbps * 1e6)
}

/// Upload plus download time of one client against the server.
pub fn simulate_comm(
    bytes_up: u64,
    bytes_down: u64,
    client_site: &str,
    server_site: &str,
    bw: &BandwidthMatrix,
) -> Result<f64> {
    let c = bw.site_index(client_site)?;
    let s = bw.site_index(server_site)?;
    Ok(transfer_seconds(bytes_up, bw.mbps(c, s)) + transfer_seconds(bytes_down, bw.mbps(s, c)))
}

/// A synchronous round waits for the slowest client.
pub fn synchronous_comm(per_client: impl IntoIterator<Item = f64>) -> f64 {
    per_client.into_iter().fold(0.0, f64::max)
}
