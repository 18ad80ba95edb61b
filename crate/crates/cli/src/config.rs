//! TOML run configuration. Every key is optional; missing keys take the
//! library defaults (802.11b, 256-byte payload, ten nodes).

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use dcf_netcalc::bounds::{ArrivalModel, GridConfig, DEFAULT_X_MAX};
use dcf_netcalc::characterize::{FitOptions, TraceData};
use dcf_netcalc::mac80211::Params80211;
use dcf_netcalc::sim::{CollisionMode, SimConfig, Traffic};

/// Environment variable naming a config file when `--config` is absent.
pub const CONFIG_ENV: &str = "DCF_NETCALC_CONFIG";

/// A configuration the tool cannot act on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhySection {
    pub basic_rate_bps: f64,
    pub data_rate_bps: f64,
    pub phy_header_bytes: u32,
    pub ack_header_bytes: u32,
    pub mac_header_bytes: u32,
    pub sifs_us: f64,
    pub difs_us: f64,
    pub idle_slot_us: f64,
}

impl Default for PhySection {
    fn default() -> Self {
        let p = Params80211::default();
        Self {
            basic_rate_bps: p.basic_rate_bps,
            data_rate_bps: p.data_rate_bps,
            phy_header_bytes: p.phy_header_bytes,
            ack_header_bytes: p.ack_header_bytes,
            mac_header_bytes: p.mac_header_bytes,
            sifs_us: p.sifs_us,
            difs_us: p.difs_us,
            idle_slot_us: p.idle_slot_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacSection {
    pub cw_min: u32,
    pub cw_max: u32,
    pub retry_limit: u32,
    pub payload_bytes: u32,
    pub n_nodes: u32,
}

impl Default for MacSection {
    fn default() -> Self {
        let p = Params80211::default();
        Self {
            cw_min: p.cw_min,
            cw_max: p.cw_max,
            retry_limit: p.retry_limit,
            payload_bytes: p.payload_bytes,
            n_nodes: p.n_nodes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficKind {
    #[default]
    Poisson,
    Saturated,
    Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    pub kind: TrafficKind,
    /// Packets per slot of `L` idle slots.
    pub lambda: f64,
    /// One arrival count per line, per slot.
    pub trace_path: Option<PathBuf>,
    pub trace_max_t: usize,
    pub trace_epsilon: f64,
    pub independent_increments: bool,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self {
            kind: TrafficKind::Poisson,
            lambda: 0.04,
            trace_path: None,
            trace_max_t: 1000,
            trace_epsilon: 1e-2,
            independent_increments: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub duration_secs: f64,
    pub replications: usize,
    pub sample_time_secs: f64,
    pub collision_mode: CollisionMode,
    pub trace_every_secs: Option<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            duration_secs: s.duration_secs,
            replications: s.replications,
            sample_time_secs: s.sample_time_secs,
            collision_mode: s.collision_mode,
            trace_every_secs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub p_list: Vec<f64>,
    pub variants: Vec<String>,
    pub x_max: u64,
    /// Thetas for `characterize`; empty means the default log grid.
    pub thetas: Vec<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            p_list: vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05],
            variants: vec!["bound1".into(), "bound2".into(), "bound3".into(), "bound4".into()],
            x_max: DEFAULT_X_MAX,
            thetas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phy: PhySection,
    pub mac: MacSection,
    pub traffic: TrafficSection,
    pub grid: GridConfig,
    pub sim: SimSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("reading config {}: {e}", path.display())))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn params(&self) -> Params80211 {
        let (phy, mac) = (&self.phy, &self.mac);
        Params80211 {
            basic_rate_bps: phy.basic_rate_bps,
            data_rate_bps: phy.data_rate_bps,
            phy_header_bytes: phy.phy_header_bytes,
            ack_header_bytes: phy.ack_header_bytes,
            mac_header_bytes: phy.mac_header_bytes,
            sifs_us: phy.sifs_us,
            difs_us: phy.difs_us,
            idle_slot_us: phy.idle_slot_us,
            cw_min: mac.cw_min,
            cw_max: mac.cw_max,
            retry_limit: mac.retry_limit,
            payload_bytes: mac.payload_bytes,
            n_nodes: mac.n_nodes,
        }
    }

    pub fn arrival_model(&self) -> Result<ArrivalModel> {
        let t = &self.traffic;
        match t.kind {
            TrafficKind::Poisson => Ok(ArrivalModel::Poisson { lambda: t.lambda }),
            TrafficKind::Saturated => config_error("saturated traffic has no arrival curve; use poisson or trace"),
            TrafficKind::Trace => {
                let Some(path) = &t.trace_path else {
                    return config_error("traffic.kind = \"trace\" needs traffic.trace_path");
                };
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError(format!("reading trace {}: {e}", path.display())))?;
                Ok(ArrivalModel::Trace {
                    trace: TraceData::parse(&text, "slot")?,
                    max_t: t.trace_max_t,
                    fit: FitOptions {
                        epsilon: t.trace_epsilon,
                        ..Default::default()
                    },
                    independent_increments: t.independent_increments,
                })
            }
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let traffic = match self.traffic.kind {
            TrafficKind::Poisson => Traffic::Poisson {
                lambda: self.traffic.lambda,
            },
            TrafficKind::Saturated => Traffic::Saturated,
            TrafficKind::Trace => return config_error("the simulator takes poisson or saturated traffic"),
        };
        let s = &self.sim;
        Ok(SimConfig {
            params: self.params(),
            traffic,
            duration_secs: s.duration_secs,
            replications: s.replications,
            sample_time_secs: s.sample_time_secs,
            seed: self.run.seed,
            collision_mode: s.collision_mode,
            trace_every_secs: s.trace_every_secs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.params(), Params80211::default());
        assert_eq!(c.grid, GridConfig::default());
    }

    #[test]
    fn sections_override() {
        let c = RunConfig::from_toml(
            r#"
            [mac]
            n_nodes = 20
            payload_bytes = 512
            [traffic]
            lambda = 0.07
            [sim]
            collision_mode = "data-plus-difs"
            replications = 5
            [run]
            seed = 9
            "#,
        )
        .unwrap();
        assert_eq!(c.params().n_nodes, 20);
        assert_eq!(c.params().payload_bytes, 512);
        let s = c.sim_config().unwrap();
        assert_eq!(s.collision_mode, CollisionMode::DataPlusDifs);
        assert_eq!(s.replications, 5);
        assert_eq!(s.seed, 9);
        assert_eq!(s.traffic, Traffic::Poisson { lambda: 0.07 });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[mac]\nnodes = 3\n").is_err());
        assert!(RunConfig::from_toml("[bogus]\n").is_err());
    }

    #[test]
    fn trace_needs_a_path() {
        let c = RunConfig::from_toml("[traffic]\nkind = \"trace\"\n").unwrap();
        assert!(c.arrival_model().is_err());
        assert!(c.sim_config().is_err());
    }
}
