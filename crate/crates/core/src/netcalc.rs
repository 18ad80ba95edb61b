//! Curve and bounding-function algebra.
//!
//! Traffic, service and backlog are measured in packets and time in
//! network-calculus slots, so every curve is linear (`rate * t`) and every
//! bounding function is either an exponential `a * exp(-theta * x)` or a
//! table of tail probabilities at integer `x`.
//!
//! Bounding functions keep their raw parameters for algebra (a prefactor
//! above one is normal for small `x`); [`BoundingFunction::evaluate`] clamps
//! to `[0, 1]` so every emitted value is a probability.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MGF envelope `(1/theta) log E exp(theta A(s,t)) <= rho (t - s) + sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaRho {
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl SigmaRho {
    pub fn new(theta: f64, sigma: f64, rho: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::InvalidParameter(format!("rho must be >= 0, got {rho}")));
        }
        Ok(Self { theta, sigma, rho })
    }
}

/// A nonincreasing tail-bound function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoundingFunction {
    /// `prefactor * exp(-decay * x)`.
    Exponential { prefactor: f64, decay: f64 },
    /// Tail probabilities at `x = 0, 1, 2, ...`; the last entry extends to
    /// infinity and non-integer `x` rounds down.
    Tabulated(Vec<f64>),
}

impl BoundingFunction {
    pub fn exponential(prefactor: f64, decay: f64) -> Self {
        debug_assert!(prefactor >= 0.0 && decay > 0.0);
        BoundingFunction::Exponential { prefactor, decay }
    }

    /// The identically-zero bound (a certain event never exceeds its curve).
    pub fn zero() -> Self {
        BoundingFunction::Tabulated(vec![0.0])
    }

    /// Unclamped value.
    pub fn raw(&self, x: f64) -> f64 {
        match self {
            BoundingFunction::Exponential { prefactor, decay } => prefactor * (-decay * x).exp(),
            BoundingFunction::Tabulated(values) => {
                if values.is_empty() {
                    return 0.0;
                }
                let idx = if x <= 0.0 { 0 } else { x.floor() as usize };
                values[idx.min(values.len() - 1)]
            }
        }
    }

    /// Value clamped to `[0, 1]`.
    pub fn evaluate(&self, x: f64) -> f64 {
        self.raw(x).clamp(0.0, 1.0)
    }

    pub fn prefactor(&self) -> Option<f64> {
        match self {
            BoundingFunction::Exponential { prefactor, .. } => Some(*prefactor),
            BoundingFunction::Tabulated(_) => None,
        }
    }

    pub fn decay(&self) -> Option<f64> {
        match self {
            BoundingFunction::Exponential { decay, .. } => Some(*decay),
            BoundingFunction::Tabulated(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveKind {
    TaArrival,
    VbArrival,
    WsService,
}

/// A linear curve `rate * t` with its bounding function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveWithBound {
    pub rate: f64,
    pub bound: BoundingFunction,
    pub kind: CurveKind,
}

impl CurveWithBound {
    pub fn value_at(&self, t: u64) -> f64 {
        self.rate * t as f64
    }
}

/// `1 - exp(a)` for `a <= 0`, accurate near zero.
fn one_minus_exp(a: f64) -> f64 {
    -a.exp_m1()
}

/// ta arrival curve of a `(sigma, rho)`-upper constrained process:
/// rate `r >= rho`, bound `exp(theta sigma) exp(-theta x)`.
pub fn ta_curve_from_sigma_rho(sr: SigmaRho, r: f64) -> Result<CurveWithBound> {
    if !(r >= sr.rho && r.is_finite()) {
        return Err(Error::InvalidRate {
            what: "ta arrival curve",
            rate: r,
            relation: ">=",
            limit: sr.rho,
        });
    }
    Ok(CurveWithBound {
        rate: r,
        bound: BoundingFunction::exponential((sr.theta * sr.sigma).exp(), sr.theta),
        kind: CurveKind::TaArrival,
    })
}

/// vb arrival curve of a `(sigma, rho)`-upper constrained process:
/// rate `r > rho`, bound `exp(theta sigma) / (1 - exp(theta (rho - r))) exp(-theta x)`.
///
/// `r = +inf` is accepted and yields prefactor `exp(theta sigma)`.
pub fn vb_curve_from_sigma_rho(sr: SigmaRho, r: f64) -> Result<CurveWithBound> {
    if !(r > sr.rho) || r.is_nan() {
        return Err(Error::InvalidRate {
            what: "vb arrival curve",
            rate: r,
            relation: ">",
            limit: sr.rho,
        });
    }
    let prefactor = (sr.theta * sr.sigma).exp() / one_minus_exp(sr.theta * (sr.rho - r));
    Ok(CurveWithBound {
        rate: r,
        bound: BoundingFunction::exponential(prefactor, sr.theta),
        kind: CurveKind::VbArrival,
    })
}

/// vb arrival curve for a process with independent per-slot increments:
/// rate `r >= rho + sigma`, bound exactly `exp(-theta x)`.
///
/// The independence of increments is the caller's responsibility; it cannot
/// be checked from `(sigma, rho)` alone.
pub fn vb_curve_martingale(sr: SigmaRho, r: f64) -> Result<CurveWithBound> {
    let limit = sr.rho + sr.sigma;
    if !(r >= limit && r.is_finite()) {
        return Err(Error::InvalidRate {
            what: "martingale vb arrival curve",
            rate: r,
            relation: ">=",
            limit,
        });
    }
    Ok(CurveWithBound {
        rate: r,
        bound: BoundingFunction::exponential(1.0, sr.theta),
        kind: CurveKind::VbArrival,
    })
}

/// Converts a ta curve with exponential bound into a vb curve of rate
/// `r + delta`, summing `f(x + k delta)` over `k >= 0` in closed form.
pub fn ta_to_vb(curve: &CurveWithBound, delta: f64) -> Result<CurveWithBound> {
    if curve.kind != CurveKind::TaArrival {
        return Err(Error::InvalidParameter("ta_to_vb needs a ta arrival curve".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let (a, theta) = match curve.bound {
        BoundingFunction::Exponential { prefactor, decay } => (prefactor, decay),
        BoundingFunction::Tabulated(_) => {
            return Err(Error::InvalidParameter("ta_to_vb needs an exponential bound".into()))
        }
    };
    Ok(CurveWithBound {
        rate: curve.rate + delta,
        bound: BoundingFunction::exponential(a / one_minus_exp(-theta * delta), theta),
        kind: CurveKind::VbArrival,
    })
}

/// `min(1, min_{0<=y<=x} [f(y) + g(x - y)])`.
///
/// Two exponentials are minimized analytically (both endpoints plus the
/// interior stationary point); anything tabulated falls back to integer `y`.
pub fn minplus_convolve(f: &BoundingFunction, g: &BoundingFunction, x: u64) -> f64 {
    match (f, g) {
        (
            BoundingFunction::Exponential {
                prefactor: a1,
                decay: t1,
            },
            BoundingFunction::Exponential {
                prefactor: a2,
                decay: t2,
            },
        ) => minplus_exponential(*a1, *t1, *a2, *t2, x),
        _ => minplus_integer_split(f, g, x),
    }
}

/// [`minplus_convolve`] of `a1 exp(-t1 x)` and `a2 exp(-t2 x)`.
pub fn minplus_exponential(a1: f64, t1: f64, a2: f64, t2: f64, x: u64) -> f64 {
    let xf = x as f64;
    let mut best = (a1 + a2 * (-t2 * xf).exp()).min(a1 * (-t1 * xf).exp() + a2);
    if a1 > 0.0 && a2 > 0.0 {
        let y = ((t1 * a1).ln() - (t2 * a2).ln() + t2 * xf) / (t1 + t2);
        if y > 0.0 && y < xf {
            best = best.min(a1 * (-t1 * y).exp() + a2 * (-t2 * (xf - y)).exp());
        }
    }
    best.clamp(0.0, 1.0)
}

/// Min-plus convolution restricted to integer split points.
pub fn minplus_integer_split(f: &BoundingFunction, g: &BoundingFunction, x: u64) -> f64 {
    (0..=x)
        .map(|y| f.raw(y as f64) + g.raw((x - y) as f64))
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 1.0)
}

fn complement(bound: &BoundingFunction, x: i64) -> f64 {
    if x < 0 {
        0.0
    } else {
        1.0 - bound.evaluate(x as f64)
    }
}

/// Tail of the sum of two independent integer variables with tails `f`, `g`:
/// `1 - sum_{k=0}^{x} (G(k) - G(k-1)) F(x - k)` with `F = 1 - f`, `G = 1 - g`
/// (both clamped) and `G(-1) = 0`.
pub fn independent_tail_convolve(f: &BoundingFunction, g: &BoundingFunction, x: u64) -> f64 {
    match (f, g) {
        (
            BoundingFunction::Exponential {
                prefactor: a1,
                decay: t1,
            },
            BoundingFunction::Exponential {
                prefactor: a2,
                decay: t2,
            },
        ) => independent_exponential(*a1, *t1, *a2, *t2, x),
        _ => (1.0 - stieltjes_sum(f, g, x)).clamp(0.0, 1.0),
    }
}

/// Smallest integer `n >= 0` with `a exp(-d n) <= 1`.
fn clamp_knee(a: f64, d: f64) -> u64 {
    if a <= 1.0 {
        0
    } else {
        (a.ln() / d).ceil() as u64
    }
}

/// `sum_{j=0}^{n-1} exp(-d j)` for `d >= 0`.
fn geometric(d: f64, n: u64) -> f64 {
    if d < 1e-12 {
        n as f64
    } else {
        (-d * n as f64).exp_m1() / (-d).exp_m1()
    }
}

/// [`independent_tail_convolve`] of `f = a1 exp(-t1 x)` and
/// `g = a2 exp(-t2 x)` in closed form.
///
/// Uses `g(x) + sum_{k=0}^{x} (g(k-1) - g(k)) f(x-k)` with `g(-1) = 1`,
/// which equals the complemented sum without its cancellation. The clamped
/// functions are constant one before their knees and exponential after, so
/// the sum splits into at most one boundary term and two geometric series.
pub fn independent_exponential(a1: f64, t1: f64, a2: f64, t2: f64, x: u64) -> f64 {
    let f = |n: u64| (a1 * (-t1 * n as f64).exp()).min(1.0);
    let g_x = (a2 * (-t2 * x as f64).exp()).min(1.0);
    let ng = clamp_knee(a2, t2);
    if ng > x {
        return g_x.clamp(0.0, 1.0);
    }
    let mut total = g_x + (1.0 - a2 * (-t2 * ng as f64).exp()) * f(x - ng);

    // k in (ng, x]: mass a2 (e^t2 - 1) e^(-t2 k); f(x-k) is exponential while
    // x - k >= nf and one afterwards
    let nf = clamp_knee(a1, t1);
    let k1 = ng + 1;
    let exp_end = if x >= nf { Some(x - nf) } else { None };
    if let Some(k2) = exp_end.map(|e| e.min(x)) {
        if k1 <= k2 {
            let n = k2 - k1 + 1;
            let series = if t1 >= t2 {
                (-t1 * (x - k2) as f64 - t2 * k2 as f64).exp() * geometric(t1 - t2, n)
            } else {
                (-t1 * (x - k1) as f64 - t2 * k1 as f64).exp() * geometric(t2 - t1, n)
            };
            total += a1 * a2 * t2.exp_m1() * series;
        }
    }
    let k3 = exp_end.map_or(k1, |e| (e + 1).max(k1));
    if k3 <= x {
        // telescopes: sum (e^-(t2 (k-1)) - e^-(t2 k))
        total += a2 * ((-t2 * (k3 - 1) as f64).exp() - (-t2 * x as f64).exp());
    }
    total.clamp(0.0, 1.0)
}

/// The uncomplemented sum `sum_{k=0}^{x} (G(k) - G(k-1)) F(x - k)`.
///
/// Diagnostic only: this is a CDF (it grows with `x` toward one), not a tail
/// bound. Exposed so the two forms can be compared side by side.
pub fn independent_tail_as_printed(f: &BoundingFunction, g: &BoundingFunction, x: u64) -> f64 {
    stieltjes_sum(f, g, x)
}

fn stieltjes_sum(f: &BoundingFunction, g: &BoundingFunction, x: u64) -> f64 {
    let x = x as i64;
    let mut sum = 0.0;
    let mut g_prev = 0.0;
    for k in 0..=x {
        let g_k = complement(g, k);
        let mass = g_k - g_prev;
        g_prev = g_k;
        if mass != 0.0 {
            sum += mass * complement(f, x - k);
        }
    }
    sum
}
