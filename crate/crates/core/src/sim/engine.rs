use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{CollisionMode, NodeCounters, ReplicationResult, SimConfig, TracePoint, Traffic};
use crate::mac80211::slot_geometry;

/// MAC state of one station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeState {
    pub queue_len: u64,
    pub cw: u32,
    /// In `[0, cw - 1]`; keeps counting down with an empty queue.
    pub backoff_counter: u32,
    /// Failed attempts of the head-of-line packet, below the retry limit.
    pub retries: u32,
    /// Idle slots still needed before the counter may decrement.
    pub difs_wait: u32,
}

struct Node {
    state: NodeState,
    counters: NodeCounters,
    next_arrival: f64,
}

struct Observation {
    slot: u64,
    time_secs: f64,
    is_sample: bool,
}

struct Replica {
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    interarrival: Option<Exp<f64>>,
    saturated: bool,
    observations: Vec<Observation>,
    next_obs: usize,
    sampled: Option<u64>,
    trace: Vec<TracePoint>,
    replication: usize,
}

impl Replica {
    fn has_packet(&self, i: usize) -> bool {
        self.saturated || self.nodes[i].state.queue_len > 0
    }

    fn draw_backoff(rng: &mut ChaCha8Rng, cw: u32) -> u32 {
        rng.random_range(0..cw)
    }

    fn deliver(&mut self, i: usize, until: f64) {
        let Some(exp) = self.interarrival else { return };
        let node = &mut self.nodes[i];
        while node.next_arrival <= until {
            node.state.queue_len += 1;
            node.counters.arrivals += 1;
            node.next_arrival += exp.sample(&mut self.rng);
        }
    }

    /// Records every observation at a slot below `limit`.
    fn observe_before(&mut self, limit: u64) {
        while let Some(obs) = self.observations.get(self.next_obs) {
            if obs.slot >= limit {
                break;
            }
            let (slot, time_secs, is_sample) = (obs.slot, obs.time_secs, obs.is_sample);
            self.next_obs += 1;
            self.deliver(0, slot as f64);
            let backlog = self.nodes[0].state.queue_len;
            if is_sample {
                self.sampled = Some(backlog);
            } else {
                self.trace.push(TracePoint {
                    replication: self.replication,
                    time_secs,
                    backlog,
                });
            }
        }
    }
}

pub(super) fn replicate(cfg: &SimConfig, replication: usize) -> ReplicationResult {
    let p = &cfg.params;
    let geo = slot_geometry(p);
    let l = geo.slot_length();
    let success_busy = u64::from(geo.busy_slots());
    let collision_busy = match cfg.collision_mode {
        CollisionMode::SameAsSuccess => success_busy,
        CollisionMode::DataPlusDifs => u64::from(geo.data),
    };
    let difs = geo.difs;
    let horizon = cfg.secs_to_slots(cfg.duration_secs);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replication as u64);

    let (saturated, interarrival) = match cfg.traffic {
        Traffic::Saturated => (true, None),
        Traffic::Poisson { lambda } if lambda > 0.0 => (
            false,
            Some(Exp::new(lambda / f64::from(l)).expect("positive arrival rate")),
        ),
        Traffic::Poisson { .. } => (false, None),
    };

    let mut nodes = Vec::with_capacity(p.n_nodes as usize);
    for _ in 0..p.n_nodes {
        let backoff_counter = Replica::draw_backoff(&mut rng, p.cw_min);
        let next_arrival = interarrival.map_or(f64::INFINITY, |e| e.sample(&mut rng));
        nodes.push(Node {
            state: NodeState {
                queue_len: 0,
                cw: p.cw_min,
                backoff_counter,
                retries: 0,
                difs_wait: difs,
            },
            counters: NodeCounters::default(),
            next_arrival,
        });
    }

    let mut observations = vec![Observation {
        slot: cfg.secs_to_slots(cfg.sample_time_secs),
        time_secs: cfg.sample_time_secs,
        is_sample: true,
    }];
    if let Some(every) = cfg.trace_every_secs {
        let count = (cfg.duration_secs / every + 1e-9).floor() as u64;
        for k in 1..=count {
            let time_secs = every * k as f64;
            observations.push(Observation {
                slot: cfg.secs_to_slots(time_secs),
                time_secs,
                is_sample: false,
            });
        }
    }
    // the sample sorts ahead of a trace point at the same slot
    observations.sort_by_key(|o| (o.slot, !o.is_sample));

    let mut r = Replica {
        rng,
        nodes,
        interarrival,
        saturated,
        observations,
        next_obs: 0,
        sampled: None,
        trace: Vec::new(),
        replication,
    };

    let (mut attempts, mut collisions, mut backoff_slots) = (0u64, 0u64, 0u64);
    let (mut busy_periods, mut successes) = (0u64, 0u64);
    let mut transmitters: Vec<usize> = Vec::with_capacity(r.nodes.len());
    let mut t = 0u64;

    while t < horizon {
        for i in 0..r.nodes.len() {
            r.deliver(i, t as f64);
        }
        transmitters.clear();
        transmitters.extend((0..r.nodes.len()).filter(|&i| {
            let s = &r.nodes[i].state;
            s.difs_wait == 0 && s.backoff_counter == 0 && r.has_packet(i)
        }));

        if !transmitters.is_empty() {
            let success = transmitters.len() == 1;
            let busy = if success { success_busy } else { collision_busy };
            r.observe_before(t + busy);
            t += busy;
            busy_periods += 1;
            if transmitters[0] == 0 {
                attempts += 1;
                if !success {
                    collisions += 1;
                }
            }
            for &i in &transmitters {
                let node = &mut r.nodes[i];
                let s = &mut node.state;
                if success {
                    successes += 1;
                    node.counters.departures += 1;
                    if !r.saturated {
                        s.queue_len -= 1;
                    }
                    s.cw = p.cw_min;
                    s.retries = 0;
                } else {
                    s.retries += 1;
                    if s.retries >= p.retry_limit {
                        node.counters.drops += 1;
                        if !r.saturated {
                            s.queue_len -= 1;
                        }
                        s.cw = p.cw_min;
                        s.retries = 0;
                    } else {
                        s.cw = (s.cw * 2).min(p.cw_max);
                    }
                }
                s.backoff_counter = Replica::draw_backoff(&mut r.rng, s.cw);
            }
            for node in &mut r.nodes {
                node.state.difs_wait = difs;
            }
            continue;
        }

        // idle stretch up to the next transmission, the boundary after an
        // arrival to an empty queue, or the horizon
        let mut k = horizon - t;
        for (i, node) in r.nodes.iter().enumerate() {
            let s = &node.state;
            if r.has_packet(i) {
                k = k.min(u64::from(s.difs_wait) + u64::from(s.backoff_counter));
            } else if node.next_arrival.is_finite() {
                k = k.min((node.next_arrival.ceil() as u64).saturating_sub(t).max(1));
            }
        }
        let k = k.max(1);
        r.observe_before(t + k);
        for i in 0..r.nodes.len() {
            let busy_node = r.has_packet(i);
            let s = &mut r.nodes[i].state;
            let d = s.difs_wait.min(k.min(u64::from(u32::MAX)) as u32);
            s.difs_wait -= d;
            let rem = k - u64::from(d);
            let dec = u64::from(s.backoff_counter).min(rem);
            s.backoff_counter -= dec as u32;
            if i == 0 && busy_node {
                backoff_slots += dec;
            }
        }
        t += k;
    }
    r.observe_before(u64::MAX);

    let mut nodes_out = Vec::with_capacity(r.nodes.len());
    for node in &r.nodes {
        let s = &node.state;
        debug_assert!(s.cw >= p.cw_min && s.cw <= p.cw_max);
        debug_assert!(s.backoff_counter < s.cw && s.retries < p.retry_limit);
        let mut c = node.counters;
        if r.saturated {
            c.arrivals = c.departures + c.drops;
        } else {
            c.backlog = s.queue_len;
        }
        debug_assert_eq!(c.arrivals, c.departures + c.backlog + c.drops);
        nodes_out.push(c);
    }

    ReplicationResult {
        replication,
        sampled_backlog: r.sampled.unwrap_or(0),
        nodes: nodes_out,
        attempts,
        collisions,
        backoff_slots,
        busy_periods,
        successes,
        slots: horizon,
        trace: r.trace,
    }
}
