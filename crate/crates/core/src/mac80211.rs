//! 802.11 DCF modeling: slot geometry, the saturated fixed point, and the
//! impairment process seen by one tagged node.
//!
//! One network-calculus slot is `L` idle slots, the channel time of one
//! complete DATA/ACK exchange. Traffic is counted in packets, so the ideal
//! server moves exactly one packet per slot.

use serde::{Deserialize, Serialize};

use crate::characterize::{fit_sigma_rho, EnvelopeFit, FitOptions, MgfEnvelope};
use crate::error::{Error, Result};
use crate::netcalc::{vb_curve_from_sigma_rho, CurveKind, CurveWithBound, SigmaRho};
use crate::numeric::{ln_binomial, ln_pow, LogSumExp};

/// Ideal service rate in packets per slot.
pub const CAPACITY: f64 = 1.0;

/// Largest `t` accepted by [`impairment_log_mgf`].
pub const MGF_HORIZON_CAP: u64 = 100_000;

/// Largest number of event sequences [`oracle_impairment_mgf`] will walk.
pub const ORACLE_PATH_LIMIT: u64 = 1 << 24;

/// PHY/MAC parameters. Defaults are 802.11b with a 256-byte payload and
/// ten contending nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params80211 {
    pub basic_rate_bps: f64,
    pub data_rate_bps: f64,
    pub phy_header_bytes: u32,
    pub ack_header_bytes: u32,
    pub mac_header_bytes: u32,
    pub sifs_us: f64,
    pub difs_us: f64,
    pub idle_slot_us: f64,
    pub cw_min: u32,
    pub cw_max: u32,
    /// Transmissions allowed per packet (backoff stages `0..retry_limit`).
    pub retry_limit: u32,
    pub payload_bytes: u32,
    pub n_nodes: u32,
}

impl Default for Params80211 {
    fn default() -> Self {
        Self {
            basic_rate_bps: 1e6,
            data_rate_bps: 11e6,
            phy_header_bytes: 24,
            ack_header_bytes: 14,
            mac_header_bytes: 28,
            sifs_us: 10.0,
            difs_us: 50.0,
            idle_slot_us: 20.0,
            cw_min: 32,
            cw_max: 1024,
            retry_limit: 7,
            payload_bytes: 256,
            n_nodes: 10,
        }
    }
}

impl Params80211 {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("basic_rate_bps", self.basic_rate_bps),
            ("data_rate_bps", self.data_rate_bps),
            ("sifs_us", self.sifs_us),
            ("difs_us", self.difs_us),
            ("idle_slot_us", self.idle_slot_us),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.cw_min < 1 || self.cw_min > self.cw_max {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= cw_min <= cw_max, got {} and {}",
                self.cw_min, self.cw_max
            )));
        }
        if !self.cw_min.is_power_of_two() || !self.cw_max.is_power_of_two() {
            return Err(Error::InvalidParameter(
                "cw_min and cw_max must be powers of two".into(),
            ));
        }
        if self.retry_limit == 0 {
            return Err(Error::InvalidParameter("retry_limit must be at least 1".into()));
        }
        if self.n_nodes == 0 {
            return Err(Error::InvalidParameter("n_nodes must be at least 1".into()));
        }
        Ok(())
    }

    /// Duration of one idle slot in seconds.
    pub fn idle_slot_secs(&self) -> f64 {
        self.idle_slot_us * 1e-6
    }
}

/// Frame durations in idle slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotGeometry {
    /// DIFS + SIFS.
    pub interframe: u32,
    pub ack: u32,
    pub data: u32,
    /// DIFS alone; the channel must stay idle this long before backoff resumes.
    pub difs: u32,
}

impl SlotGeometry {
    /// `L`, idle slots per network-calculus slot.
    pub fn slot_length(&self) -> u32 {
        self.interframe + self.ack + self.data
    }

    /// Busy period of a successful exchange, excluding the trailing DIFS.
    pub fn busy_slots(&self) -> u32 {
        self.slot_length() - self.difs
    }
}

fn us_to_slots(us: f64, idle_slot_us: f64) -> u32 {
    // durations that land exactly on a slot boundary must not round up
    (us / idle_slot_us - 1e-9).ceil().max(0.0) as u32
}

pub fn slot_geometry(params: &Params80211) -> SlotGeometry {
    let slot = params.idle_slot_us;
    let ack_us = f64::from((params.phy_header_bytes + params.ack_header_bytes) * 8) / params.basic_rate_bps * 1e6;
    let data_us = f64::from(params.phy_header_bytes * 8) / params.basic_rate_bps * 1e6
        + f64::from((params.mac_header_bytes + params.payload_bytes) * 8) / params.data_rate_bps * 1e6;
    SlotGeometry {
        interframe: us_to_slots(params.difs_us + params.sifs_us, slot),
        ack: us_to_slots(ack_us, slot),
        data: us_to_slots(data_us, slot),
        difs: us_to_slots(params.difs_us, slot),
    }
}

/// `L = (DIFS + SIFS) + ACK + DATA`, each rounded up to whole idle slots.
pub fn slot_length(params: &Params80211) -> u32 {
    slot_geometry(params).slot_length()
}

/// Solution of the saturated attempt/collision fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcfFixedPoint {
    /// Attempt probability per idle slot.
    pub tau: f64,
    /// Conditional collision probability.
    pub eta: f64,
    /// No node transmits at an idle slot.
    pub p_nt: f64,
    /// At least one node transmits.
    pub p_t: f64,
    /// The tagged node starts a successful transmission.
    pub p_s: f64,
    /// `p_s / p_t`.
    pub p_s_cond: f64,
    pub slot_length: u32,
}

impl DcfFixedPoint {
    pub fn channel(&self) -> ImpairmentChannel {
        ImpairmentChannel {
            p_t: self.p_t,
            p_s_cond: self.p_s_cond,
            slot_length: self.slot_length,
        }
    }
}

/// Mean backoff (plus the attempt slot) of each stage: `2^i cw_min / 2`.
pub fn stage_backoffs(params: &Params80211) -> Vec<f64> {
    (0..params.retry_limit)
        .map(|i| 2f64.powi(i as i32) * f64::from(params.cw_min) / 2.0)
        .collect()
}

/// Attempts per idle slot given the collision probability.
pub fn tau_of_eta(params: &Params80211, eta: f64) -> f64 {
    let b = stage_backoffs(params);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut pow = 1.0;
    for bi in b {
        num += pow;
        den += pow * bi;
        pow *= eta;
    }
    num / den
}

/// Collision probability seen when every other node attempts with `tau`.
pub fn eta_of_tau(n_nodes: u32, tau: f64) -> f64 {
    1.0 - (1.0 - tau).powi(n_nodes as i32 - 1)
}

/// Solves `tau = tau_of_eta(eta)`, `eta = eta_of_tau(tau)` by bisection on
/// `eta`. The composed map is decreasing in `eta`, so the root is unique.
pub fn solve_fixed_point(params: &Params80211) -> Result<DcfFixedPoint> {
    params.validate()?;
    let n = params.n_nodes;
    let eta = if n == 1 {
        0.0
    } else {
        let residual = |eta: f64| eta_of_tau(n, tau_of_eta(params, eta)) - eta;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        if !(residual(lo) >= 0.0 && residual(hi) <= 0.0) {
            return Err(Error::NonConvergence {
                what: "fixed point bracketing",
                limit: 0,
            });
        }
        let mut steps = 0;
        while hi - lo > 1e-15 {
            steps += 1;
            if steps > 200 {
                return Err(Error::NonConvergence {
                    what: "fixed point bisection",
                    limit: 200,
                });
            }
            let mid = 0.5 * (lo + hi);
            if residual(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let tau = tau_of_eta(params, eta);
    let eta = eta_of_tau(n, tau);
    let p_nt = (1.0 - tau).powi(n as i32);
    let p_t = 1.0 - p_nt;
    let p_s = tau * (1.0 - eta);
    Ok(DcfFixedPoint {
        tau,
        eta,
        p_nt,
        p_t,
        p_s,
        p_s_cond: p_s / p_t,
        slot_length: slot_length(params),
    })
}

/// Per-idle-slot channel statistics that drive the impairment process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentChannel {
    /// A transmission starts at an idle-slot boundary.
    pub p_t: f64,
    /// A started transmission is the tagged node's success.
    pub p_s_cond: f64,
    pub slot_length: u32,
}

impl ImpairmentChannel {
    pub fn new(p_t: f64, p_s_cond: f64, slot_length: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_t) || !(0.0..=1.0).contains(&p_s_cond) {
            return Err(Error::InvalidParameter(format!(
                "probabilities out of range: p_t={p_t}, p_s_cond={p_s_cond}"
            )));
        }
        if slot_length == 0 {
            return Err(Error::InvalidParameter("slot length must be positive".into()));
        }
        Ok(Self {
            p_t,
            p_s_cond,
            slot_length,
        })
    }

    fn p_nt(&self) -> f64 {
        1.0 - self.p_t
    }
}

/// `ln sup_s E exp(theta I(s, s+t))`.
///
/// The first slot of the window is taken to be busy with another node's
/// transmission; the remaining `(t-1) L` idle slots split into sequences
/// that end exactly on the window boundary and sequences whose last
/// transmission is cut after `k` idle slots. An own success completed inside
/// the window removes one packet of impairment; a cut own success removes
/// `k / L`.
pub fn impairment_log_mgf(ch: &ImpairmentChannel, theta: f64, t: u64) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidParameter("t must be at least 1".into()));
    }
    if t > MGF_HORIZON_CAP {
        return Err(Error::HorizonExceeded {
            t,
            cap: MGF_HORIZON_CAP,
        });
    }
    let l = u64::from(ch.slot_length);
    let (p_t, p_nt, ps) = (ch.p_t, ch.p_nt(), ch.p_s_cond);
    let ln_credit = (ps * (-theta).exp() + 1.0 - ps).ln();
    let base = theta * t as f64;
    let mut acc = LogSumExp::new();

    // complete sequences: i transmissions and (t-1-i) L idle slots
    for i in 0..t {
        let idle = (t - i - 1) * l;
        acc.add(ln_binomial(idle + i, i) + ln_pow(p_t, i) + ln_pow(p_nt, idle) + i as f64 * ln_credit + base);
    }
    // truncated last transmission after k idle slots
    for k in 1..l {
        let ln_partial = (ps * (-theta * k as f64 / l as f64).exp() + 1.0 - ps).ln();
        for i in 0..t.saturating_sub(1) {
            let idle = (t - i - 1) * l - k;
            acc.add(
                ln_pow(p_t, 1)
                    + ln_binomial(idle + i, i)
                    + ln_pow(p_t, i)
                    + ln_pow(p_nt, idle)
                    + ln_partial
                    + i as f64 * ln_credit
                    + base,
            );
        }
    }
    Ok(acc.value())
}

/// `sup_s E exp(theta I(s, s+t))`.
pub fn impairment_mgf(ch: &ImpairmentChannel, theta: f64, t: u64) -> Result<f64> {
    impairment_log_mgf(ch, theta, t).map(f64::exp)
}

fn oracle_path_count(slots: u64, l: u64) -> u64 {
    // sequences over `slots` idle slots with branches idle / own / other
    let mut counts = vec![1u64; slots as usize + 1];
    for r in 1..=slots as usize {
        let busy = if r as u64 >= l { counts[r - l as usize] } else { 1 };
        counts[r] = counts[r - 1].saturating_add(busy.saturating_mul(2));
    }
    counts[slots as usize]
}

/// Exact `E exp(theta I(0, t))` by walking every event sequence.
///
/// Validation oracle for [`impairment_mgf`]: after the forced busy first
/// slot, every idle-slot boundary is either idle (`1 - p_t`) or starts an
/// `L`-slot transmission (`p_t`), which is the tagged node's success with
/// probability `p_s_cond`. Only small instances are accepted.
pub fn oracle_impairment_mgf(ch: &ImpairmentChannel, theta: f64, t: u64) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidParameter("t must be at least 1".into()));
    }
    let l = u64::from(ch.slot_length);
    let slots = (t - 1) * l;
    let paths = oracle_path_count(slots, l);
    if paths > ORACLE_PATH_LIMIT {
        return Err(Error::InstanceTooLarge {
            slots,
            limit: ORACLE_PATH_LIMIT,
        });
    }

    struct Walk<'a> {
        ch: &'a ImpairmentChannel,
        theta: f64,
        t: f64,
        l: u64,
        total: f64,
    }

    impl Walk<'_> {
        fn leaf(&mut self, prob: f64, served: f64) {
            self.total += prob * (self.theta * (self.t - served)).exp();
        }

        fn go(&mut self, remaining: u64, prob: f64, served: f64) {
            if prob == 0.0 {
                return;
            }
            if remaining == 0 {
                self.leaf(prob, served);
                return;
            }
            let (p_t, ps) = (self.ch.p_t, self.ch.p_s_cond);
            self.go(remaining - 1, prob * (1.0 - p_t), served);
            if remaining >= self.l {
                self.go(remaining - self.l, prob * p_t * ps, served + 1.0);
                self.go(remaining - self.l, prob * p_t * (1.0 - ps), served);
            } else {
                self.leaf(prob * p_t * ps, served + remaining as f64 / self.l as f64);
                self.leaf(prob * p_t * (1.0 - ps), served);
            }
        }
    }

    let mut walk = Walk {
        ch,
        theta,
        t: t as f64,
        l,
        total: 0.0,
    };
    walk.go(slots, 1.0, 0.0);
    Ok(walk.total)
}

/// `y(t) = (1/theta) ln M_I(t)` for the given channel.
pub fn impairment_envelope(ch: ImpairmentChannel, theta: f64) -> MgfEnvelope {
    MgfEnvelope::from_fn(theta, move |t| {
        impairment_log_mgf(&ch, theta, t).map_or(f64::INFINITY, |v| v / theta)
    })
}

/// Fitted `(sigma_I, rho_I)` with the convergence point.
pub fn impairment_fit(params: &Params80211, theta: f64, opts: FitOptions) -> Result<EnvelopeFit> {
    let fp = solve_fixed_point(params)?;
    impairment_fit_for_channel(fp.channel(), theta, opts)
}

pub fn impairment_fit_for_channel(ch: ImpairmentChannel, theta: f64, opts: FitOptions) -> Result<EnvelopeFit> {
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    fit_sigma_rho(&impairment_envelope(ch, theta), opts)
}

pub fn impairment_sigma_rho(params: &Params80211, theta: f64) -> Result<SigmaRho> {
    impairment_fit(params, theta, FitOptions::default()).map(|f| f.sigma_rho)
}

/// Leftover service curve `(1 - r_I) t` with the vb bound of the impairment
/// at rate `r_I`, for a precomputed impairment characterization.
pub fn service_curve_from_impairment(impairment: SigmaRho, r_i: f64) -> Result<CurveWithBound> {
    if !(r_i < CAPACITY) {
        return Err(Error::InvalidRate {
            what: "impairment rate (service would be nonpositive)",
            rate: r_i,
            relation: "<",
            limit: CAPACITY,
        });
    }
    let vb = vb_curve_from_sigma_rho(impairment, r_i)?;
    Ok(CurveWithBound {
        rate: CAPACITY - r_i,
        bound: vb.bound,
        kind: CurveKind::WsService,
    })
}

pub fn service_curve(params: &Params80211, theta: f64, r_i: f64) -> Result<CurveWithBound> {
    service_curve_from_impairment(impairment_sigma_rho(params, theta)?, r_i)
}

/// `a_I = 1 - p_s L / (p_nt + p_t L)`.
pub fn impairment_average_rate(params: &Params80211) -> Result<f64> {
    let fp = solve_fixed_point(params)?;
    Ok(average_rate_of(&fp))
}

pub(crate) fn average_rate_of(fp: &DcfFixedPoint) -> f64 {
    let l = f64::from(fp.slot_length);
    1.0 - fp.p_s * l / (fp.p_nt + fp.p_t * l)
}
