//! Slot-synchronous 802.11 DCF simulator.
//!
//! Time advances in idle slots. Transmissions start only on idle-slot
//! boundaries; every busy period is followed by a DIFS of idle channel
//! before backoff counters resume. Node 0 is the tagged node whose backlog
//! is sampled.
//!
//! Replication `i` draws from `ChaCha8Rng` seeded with `seed` on stream `i`,
//! so replications are independent and each one is reproducible alone.

mod engine;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mac80211::Params80211;

pub use engine::NodeState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Traffic {
    /// Every node always has a packet queued.
    Saturated,
    /// Poisson arrivals at `lambda` packets per slot of `L` idle slots.
    Poisson { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionMode {
    /// A collision occupies the channel as long as a successful exchange.
    #[default]
    SameAsSuccess,
    /// A collision occupies only the DATA frame before the DIFS.
    DataPlusDifs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: Params80211,
    pub traffic: Traffic,
    pub duration_secs: f64,
    pub replications: usize,
    pub sample_time_secs: f64,
    pub seed: u64,
    pub collision_mode: CollisionMode,
    /// Record the tagged backlog every this many seconds.
    pub trace_every_secs: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            params: Params80211::default(),
            traffic: Traffic::Poisson { lambda: 0.04 },
            duration_secs: 100.0,
            replications: 100,
            sample_time_secs: 50.0,
            seed: 1,
            collision_mode: CollisionMode::SameAsSuccess,
            trace_every_secs: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        if !(self.duration_secs > 0.0 && self.duration_secs.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "duration must be positive, got {}",
                self.duration_secs
            )));
        }
        if !(self.sample_time_secs >= 0.0 && self.sample_time_secs <= self.duration_secs) {
            return Err(Error::InvalidParameter(format!(
                "sample time {} must lie in [0, duration {}]",
                self.sample_time_secs, self.duration_secs
            )));
        }
        if let Traffic::Poisson { lambda } = self.traffic {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
            }
        }
        if let Some(every) = self.trace_every_secs {
            if !(every > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "trace interval must be positive, got {every}"
                )));
            }
        }
        Ok(())
    }

    fn secs_to_slots(&self, secs: f64) -> u64 {
        (secs / self.params.idle_slot_secs()).round() as u64
    }
}

/// Per-node packet counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub arrivals: u64,
    pub departures: u64,
    pub drops: u64,
    /// Queue length at the end of the run.
    pub backlog: u64,
}

/// One backlog observation of the tagged node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub replication: usize,
    pub time_secs: f64,
    pub backlog: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    /// Tagged backlog at the sample time.
    pub sampled_backlog: u64,
    pub nodes: Vec<NodeCounters>,
    /// Tagged transmission attempts.
    pub attempts: u64,
    /// Tagged attempts that collided.
    pub collisions: u64,
    /// Idle slots in which the tagged node's backoff counter decremented
    /// while it had a packet.
    pub backoff_slots: u64,
    pub busy_periods: u64,
    pub successes: u64,
    pub slots: u64,
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub replications: Vec<ReplicationResult>,
    pub slot_length: u32,
}

impl SimResult {
    /// Tagged backlog at the sample time, one per replication.
    pub fn backlogs(&self) -> Vec<u64> {
        self.replications.iter().map(|r| r.sampled_backlog).collect()
    }

    pub fn mean_backlog(&self) -> f64 {
        let b = self.backlogs();
        b.iter().sum::<u64>() as f64 / b.len() as f64
    }

    /// Packets dropped at the retry limit, all nodes and replications.
    pub fn drops(&self) -> u64 {
        self.replications
            .iter()
            .flat_map(|r| r.nodes.iter())
            .map(|n| n.drops)
            .sum()
    }

    /// Delivered packets per node per slot of `L` idle slots.
    pub fn throughput_per_node(&self) -> f64 {
        let (mut pkts, mut node_slots) = (0.0, 0.0);
        for r in &self.replications {
            pkts += r.nodes.iter().map(|n| n.departures).sum::<u64>() as f64;
            node_slots += r.nodes.len() as f64 * r.slots as f64 / f64::from(self.slot_length);
        }
        pkts / node_slots
    }

    /// Tagged attempts per backoff slot (attempt slots included), the
    /// empirical counterpart of the attempt probability.
    pub fn attempt_rate(&self) -> f64 {
        let attempts: u64 = self.replications.iter().map(|r| r.attempts).sum();
        let slots: u64 = self.replications.iter().map(|r| r.backoff_slots + r.attempts).sum();
        attempts as f64 / slots as f64
    }

    /// Fraction of tagged attempts that collided.
    pub fn collision_fraction(&self) -> f64 {
        let attempts: u64 = self.replications.iter().map(|r| r.attempts).sum();
        let collisions: u64 = self.replications.iter().map(|r| r.collisions).sum();
        collisions as f64 / attempts as f64
    }

    pub fn trace(&self) -> impl Iterator<Item = &TracePoint> {
        self.replications.iter().flat_map(|r| r.trace.iter())
    }
}

/// Fraction of replications whose sampled backlog exceeds `x`.
pub fn empirical_tail(result: &SimResult, x: u64) -> f64 {
    let b = result.backlogs();
    b.iter().filter(|&&v| v > x).count() as f64 / b.len() as f64
}

/// Binomial standard error of [`empirical_tail`].
pub fn empirical_tail_stderr(result: &SimResult, x: u64) -> f64 {
    let p = empirical_tail(result, x);
    (p * (1.0 - p) / result.replications.len() as f64).sqrt()
}

/// Runs all replications, in parallel, in replication order.
pub fn run(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let replications = (0..config.replications)
        .into_par_iter()
        .map(|i| engine::replicate(config, i))
        .collect();
    Ok(SimResult {
        replications,
        slot_length: crate::mac80211::slot_length(&config.params),
    })
}
