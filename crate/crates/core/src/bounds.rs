//! Backlog-bound variants, their grid optimization, quantiles and the
//! stability test.
//!
//! Every `(theta1, theta2, r_A)` grid point with `r_I = 1 - r_A` yields a
//! valid tail bound on its own, so a variant's value at `x` is the minimum
//! over the grid taken separately for each `x`. A refined variant is also
//! entitled to every technique of the variants it refines, and takes the
//! smaller of them at each point.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characterize::{fit_sigma_rho, poisson_sigma_rho, trace_mgf_envelope, FitOptions, TraceData};
use crate::error::{Error, Result};
use crate::mac80211::{
    average_rate_of, impairment_fit_for_channel, service_curve_from_impairment, solve_fixed_point, Params80211,
    CAPACITY,
};
use crate::netcalc::{
    independent_exponential, independent_tail_convolve, minplus_convolve, minplus_exponential, ta_curve_from_sigma_rho,
    ta_to_vb, vb_curve_from_sigma_rho, vb_curve_martingale, BoundingFunction, SigmaRho,
};
use crate::numeric::log_space;

/// Default cap on quantile searches.
pub const DEFAULT_X_MAX: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// General vb arrival curve, min-plus convolution.
    Bound1,
    /// Martingale vb arrival curve, min-plus convolution.
    Bound2,
    /// General vb arrival curve, independent-case convolution.
    Bound3,
    /// Martingale vb arrival curve, independent-case convolution.
    Bound4,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Bound1, Variant::Bound2, Variant::Bound3, Variant::Bound4];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Bound1 => "bound1",
            Variant::Bound2 => "bound2",
            Variant::Bound3 => "bound3",
            Variant::Bound4 => "bound4",
        }
    }

    pub fn uses_martingale(self) -> bool {
        matches!(self, Variant::Bound2 | Variant::Bound4)
    }

    pub fn uses_independence(self) -> bool {
        matches!(self, Variant::Bound3 | Variant::Bound4)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "bound1" => Ok(Variant::Bound1),
            "2" | "bound2" => Ok(Variant::Bound2),
            "3" | "bound3" => Ok(Variant::Bound3),
            "4" | "bound4" => Ok(Variant::Bound4),
            other => Err(Error::InvalidParameter(format!("unknown bound variant {other:?}"))),
        }
    }
}

/// Where the tagged node's arrivals come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalModel {
    /// Poisson arrivals, `lambda` packets per slot.
    Poisson { lambda: f64 },
    /// Empirical per-slot arrival counts. `independent_increments` entitles
    /// the trace to the martingale arrival bound.
    Trace {
        trace: TraceData,
        max_t: usize,
        /// Empirical envelopes are noisy; a looser band than the default
        /// is usually needed.
        fit: FitOptions,
        independent_increments: bool,
    },
}

impl ArrivalModel {
    pub fn average_rate(&self) -> f64 {
        match self {
            ArrivalModel::Poisson { lambda } => *lambda,
            ArrivalModel::Trace { trace, .. } => {
                trace.increments.iter().map(|&v| v as f64).sum::<f64>() / trace.len().max(1) as f64
            }
        }
    }

    pub fn independent_increments(&self) -> bool {
        match self {
            ArrivalModel::Poisson { .. } => true,
            ArrivalModel::Trace {
                independent_increments, ..
            } => *independent_increments,
        }
    }

    fn sigma_rho(&self, theta: f64) -> Result<SigmaRho> {
        match self {
            ArrivalModel::Poisson { lambda } => poisson_sigma_rho(*lambda, theta),
            ArrivalModel::Trace { trace, max_t, fit, .. } => {
                let env = trace_mgf_envelope(trace, theta, *max_t)?;
                fit_sigma_rho(&env, *fit).map(|f| f.sigma_rho)
            }
        }
    }
}

/// Optimizer grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub theta_min: f64,
    pub theta_max: f64,
    /// Log-spaced `theta1` values.
    pub n_theta_arrival: usize,
    /// Log-spaced `theta2` values.
    pub n_theta_impairment: usize,
    /// Interior points of the feasible `r_A` interval.
    pub n_rate: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            theta_min: 0.01,
            theta_max: 5.0,
            n_theta_arrival: 40,
            n_theta_impairment: 40,
            n_rate: 60,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_min > 0.0 && self.theta_min <= self.theta_max && self.theta_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < theta_min <= theta_max, got {} and {}",
                self.theta_min, self.theta_max
            )));
        }
        if self.n_theta_arrival == 0 || self.n_theta_impairment == 0 || self.n_rate == 0 {
            return Err(Error::InvalidParameter("grid sizes must be positive".into()));
        }
        Ok(())
    }
}

/// One grid point: the characterizations and the rate split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub variant: Variant,
    pub arrival: SigmaRho,
    pub impairment: SigmaRho,
    pub r_a: f64,
    pub r_i: f64,
}

impl BoundSpec {
    pub fn theta1(&self) -> f64 {
        self.arrival.theta
    }

    pub fn theta2(&self) -> f64 {
        self.impairment.theta
    }

    fn martingale_feasible(&self) -> bool {
        self.r_a >= self.arrival.rho + self.arrival.sigma
    }
}

/// Arrival and impairment bounding functions of one grid point.
struct PointBounds {
    arrival_vb: BoundingFunction,
    arrival_martingale: Option<BoundingFunction>,
    service: BoundingFunction,
}

fn combine(variant: Variant, b: &PointBounds, x: u64) -> f64 {
    let mut best = minplus_convolve(&b.arrival_vb, &b.service, x);
    let mart = b.arrival_martingale.as_ref().filter(|_| variant.uses_martingale());
    if let Some(m) = mart {
        best = best.min(minplus_convolve(m, &b.service, x));
    }
    if variant.uses_independence() {
        best = best.min(independent_tail_convolve(&b.arrival_vb, &b.service, x));
        if let Some(m) = mart {
            best = best.min(independent_tail_convolve(m, &b.service, x));
        }
    }
    best
}

/// A grid point's bound assembled from direct vb curves.
pub fn jiang_bound(spec: &BoundSpec, x: u64) -> Result<f64> {
    let arrival = vb_curve_from_sigma_rho(spec.arrival, spec.r_a)?;
    let service = service_curve_from_impairment(spec.impairment, spec.r_i)?;
    let arrival_martingale = if spec.martingale_feasible() {
        Some(vb_curve_martingale(spec.arrival, spec.r_a)?.bound)
    } else {
        None
    };
    Ok(combine(
        spec.variant,
        &PointBounds {
            arrival_vb: arrival.bound,
            arrival_martingale,
            service: service.bound,
        },
        x,
    ))
}

/// The same grid point's bound assembled from ta curves at the envelope
/// rates, each lifted to a vb curve by its slack `r - rho`.
pub fn ciucu_bound(spec: &BoundSpec, x: u64) -> Result<f64> {
    let ta_arrival = ta_curve_from_sigma_rho(spec.arrival, spec.arrival.rho)?;
    let arrival = ta_to_vb(&ta_arrival, spec.r_a - spec.arrival.rho)?;
    let ta_impairment = ta_curve_from_sigma_rho(spec.impairment, spec.impairment.rho)?;
    let impairment = ta_to_vb(&ta_impairment, spec.r_i - spec.impairment.rho)?;
    if !(spec.r_i < CAPACITY) {
        return Err(Error::InvalidRate {
            what: "impairment rate (service would be nonpositive)",
            rate: spec.r_i,
            relation: "<",
            limit: CAPACITY,
        });
    }
    let arrival_martingale = if spec.martingale_feasible() {
        Some(vb_curve_martingale(spec.arrival, spec.r_a)?.bound)
    } else {
        None
    };
    Ok(combine(
        spec.variant,
        &PointBounds {
            arrival_vb: arrival.bound,
            arrival_martingale,
            service: impairment.bound,
        },
        x,
    ))
}

/// Precomputed grid point in flat form for the hot loop.
#[derive(Debug, Clone, Copy)]
struct GridPoint {
    i_arrival: u32,
    i_impairment: u32,
    r_a: f64,
    theta1: f64,
    theta2: f64,
    vb_prefactor: f64,
    /// NaN when the martingale bound does not apply at this rate.
    martingale_prefactor: f64,
    service_prefactor: f64,
}

impl GridPoint {
    fn value(&self, variant: Variant, x: u64) -> f64 {
        let (t1, t2, b) = (self.theta1, self.theta2, self.service_prefactor);
        let mart = variant.uses_martingale() && !self.martingale_prefactor.is_nan();
        let mut best = minplus_exponential(self.vb_prefactor, t1, b, t2, x);
        if mart {
            best = best.min(minplus_exponential(self.martingale_prefactor, t1, b, t2, x));
        }
        if variant.uses_independence() && best > 0.0 {
            best = best.min(independent_exponential(self.vb_prefactor, t1, b, t2, x));
            if mart {
                best = best.min(independent_exponential(self.martingale_prefactor, t1, b, t2, x));
            }
        }
        best
    }
}

/// Optimized value of one variant at one `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub x: u64,
    pub value: f64,
    /// Minimizing grid point; `None` when every point gives the trivial bound.
    pub argmin: Option<BoundSpec>,
    pub grid_points: usize,
}

/// Arrival and impairment characterizations over the optimizer grid.
pub struct BoundProblem {
    arrival_table: Vec<SigmaRho>,
    impairment_table: Vec<SigmaRho>,
    points: Vec<GridPoint>,
    arrival_rate: f64,
    threshold: f64,
    martingale_allowed: bool,
    skipped_thetas: usize,
}

impl std::fmt::Debug for BoundProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundProblem")
            .field("arrival_rate", &self.arrival_rate)
            .field("threshold", &self.threshold)
            .field("grid_points", &self.points.len())
            .finish()
    }
}

impl BoundProblem {
    pub fn new(arrival: &ArrivalModel, params: &Params80211, grid: &GridConfig) -> Result<Self> {
        grid.validate()?;
        let fp = solve_fixed_point(params)?;
        let channel = fp.channel();

        let thetas_a = log_space(grid.theta_min, grid.theta_max, grid.n_theta_arrival);
        let thetas_i = log_space(grid.theta_min, grid.theta_max, grid.n_theta_impairment);

        let impairment_table = thetas_i
            .par_iter()
            .map(|&th| impairment_fit_for_channel(channel, th, FitOptions::default()).map(|f| f.sigma_rho))
            .collect::<Result<Vec<_>>>()?;

        // a trace whose envelope never settles at some theta just drops that theta
        let fitted: Vec<Result<SigmaRho>> = thetas_a.par_iter().map(|&th| arrival.sigma_rho(th)).collect();
        let mut arrival_table = Vec::with_capacity(fitted.len());
        let mut skipped_thetas = 0;
        for r in fitted {
            match r {
                Ok(sr) => arrival_table.push(sr),
                Err(Error::NonConvergence { .. }) if matches!(arrival, ArrivalModel::Trace { .. }) => {
                    skipped_thetas += 1
                }
                Err(e) => return Err(e),
            }
        }

        let mut points = Vec::new();
        for (ia, sa) in arrival_table.iter().enumerate() {
            for (ii, si) in impairment_table.iter().enumerate() {
                let (lo, hi) = (sa.rho, CAPACITY - si.rho);
                if !(lo < hi) {
                    continue;
                }
                for j in 0..grid.n_rate {
                    let r_a = lo + (hi - lo) * (j + 1) as f64 / (grid.n_rate + 1) as f64;
                    let r_i = CAPACITY - r_a;
                    if !(r_a > sa.rho && r_i > si.rho) {
                        continue;
                    }
                    let (Ok(vb), Ok(service)) = (
                        vb_curve_from_sigma_rho(*sa, r_a),
                        service_curve_from_impairment(*si, r_i),
                    ) else {
                        continue;
                    };
                    let martingale_prefactor = if r_a >= sa.rho + sa.sigma { 1.0 } else { f64::NAN };
                    points.push(GridPoint {
                        i_arrival: ia as u32,
                        i_impairment: ii as u32,
                        r_a,
                        theta1: sa.theta,
                        theta2: si.theta,
                        vb_prefactor: vb.bound.prefactor().unwrap_or(f64::INFINITY),
                        martingale_prefactor,
                        service_prefactor: service.bound.prefactor().unwrap_or(f64::INFINITY),
                    });
                }
            }
        }
        let arrival_rate = arrival.average_rate();
        if points.is_empty() {
            return Err(Error::InfeasibleGrid { arrival_rate });
        }
        Ok(Self {
            arrival_table,
            impairment_table,
            points,
            arrival_rate,
            threshold: 1.0 - average_rate_of(&fp),
            martingale_allowed: arrival.independent_increments(),
            skipped_thetas,
        })
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    /// Stability threshold in packets per slot.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Whether the average arrival rate lies below the stability threshold.
    pub fn is_derivable(&self) -> bool {
        self.arrival_rate < self.threshold
    }

    pub fn grid_points(&self) -> usize {
        self.points.len()
    }

    /// Arrival thetas dropped because the trace envelope did not settle.
    pub fn skipped_thetas(&self) -> usize {
        self.skipped_thetas
    }

    pub fn arrival_table(&self) -> &[SigmaRho] {
        &self.arrival_table
    }

    pub fn impairment_table(&self) -> &[SigmaRho] {
        &self.impairment_table
    }

    /// Human-readable caveats about the results.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.is_derivable() {
            w.push(format!(
                "arrival rate {:.4} is not below the stability threshold {:.4}; bounds are vacuous",
                self.arrival_rate, self.threshold
            ));
        }
        if self.skipped_thetas > 0 {
            w.push(format!(
                "{} arrival thetas skipped: trace envelope did not converge",
                self.skipped_thetas
            ));
        }
        w
    }

    pub fn bound(&self, variant: Variant) -> Result<BacklogBound<'_>> {
        if variant.uses_martingale() && !self.martingale_allowed {
            return Err(Error::InvalidParameter(format!(
                "{variant} needs arrivals with independent increments"
            )));
        }
        Ok(BacklogBound { problem: self, variant })
    }

    fn spec_of(&self, variant: Variant, p: &GridPoint) -> BoundSpec {
        BoundSpec {
            variant,
            arrival: self.arrival_table[p.i_arrival as usize],
            impairment: self.impairment_table[p.i_impairment as usize],
            r_a: p.r_a,
            r_i: CAPACITY - p.r_a,
        }
    }

    /// Every grid point as a [`BoundSpec`] for `variant`.
    pub fn specs(&self, variant: Variant) -> impl Iterator<Item = BoundSpec> + '_ {
        self.points.iter().map(move |p| self.spec_of(variant, p))
    }

    /// The precomputed value of one grid point, as used by the optimizer.
    pub fn point_value(&self, variant: Variant, index: usize, x: u64) -> f64 {
        self.points[index].value(variant, x)
    }
}

/// One variant over a [`BoundProblem`]: `x -> P{B > x}` bound.
#[derive(Clone, Copy)]
pub struct BacklogBound<'a> {
    problem: &'a BoundProblem,
    variant: Variant,
}

impl BacklogBound<'_> {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn evaluate(&self, x: u64) -> f64 {
        self.evaluate_with_meta(x).value
    }

    pub fn evaluate_with_meta(&self, x: u64) -> BoundValue {
        let v = self.variant;
        // ties go to the lowest index so the argmin is reproducible
        let (value, idx) = self
            .problem
            .points
            .par_iter()
            .enumerate()
            .map(|(i, p)| (p.value(v, x), i))
            .reduce(
                || (1.0, usize::MAX),
                |a, b| {
                    if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                        b
                    } else {
                        a
                    }
                },
            );
        let argmin = if value < 1.0 && idx != usize::MAX {
            Some(self.problem.spec_of(v, &self.problem.points[idx]))
        } else {
            None
        };
        BoundValue {
            x,
            value,
            argmin,
            grid_points: self.problem.points.len(),
        }
    }

    pub fn curve(&self, xs: impl IntoIterator<Item = u64>) -> Vec<f64> {
        xs.into_iter().map(|x| self.evaluate(x)).collect()
    }

    pub fn quantile(&self, p: f64, x_max: u64) -> Result<u64> {
        quantile(|x| self.evaluate(x), p, x_max)
    }

    /// Quantiles for several probabilities, sharing evaluations.
    pub fn quantiles(&self, ps: &[f64], x_max: u64) -> Result<Vec<u64>> {
        let mut cache: HashMap<u64, f64> = HashMap::new();
        ps.iter()
            .map(|&p| quantile(|x| *cache.entry(x).or_insert_with(|| self.evaluate(x)), p, x_max))
            .collect()
    }
}

/// Smallest integer `x <= x_max` with `eval(x) <= p` for a nonincreasing
/// `eval`, by doubling then bisection.
pub fn quantile(mut eval: impl FnMut(u64) -> f64, p: f64, x_max: u64) -> Result<u64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile level must be in (0, 1), got {p}"
        )));
    }
    if eval(0) <= p {
        return Ok(0);
    }
    // invariant: eval(lo) > p
    let mut lo = 0u64;
    let mut hi = 1u64;
    loop {
        if hi > x_max {
            if lo < x_max && eval(x_max) <= p {
                hi = x_max;
                break;
            }
            return Err(Error::QuantileCapExceeded { p, x_max });
        }
        if eval(hi) <= p {
            break;
        }
        lo = hi;
        hi = hi.saturating_mul(2);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eval(mid) <= p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Single-point convenience: build the grid and evaluate one variant at `x`.
pub fn compute_bound(
    variant: Variant,
    arrival: &ArrivalModel,
    params: &Params80211,
    grid: &GridConfig,
    x: u64,
) -> Result<BoundValue> {
    let problem = BoundProblem::new(arrival, params, grid)?;
    let bound = problem.bound(variant)?;
    Ok(bound.evaluate_with_meta(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityVerdict {
    StableBoundDerivable,
    NotDerivable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub arrival_rate: f64,
    /// Packets per slot.
    pub threshold: f64,
    pub threshold_mbps: f64,
    pub verdict: StabilityVerdict,
}

/// Packets per slot to Mbps for the given payload and slot geometry.
pub fn packets_per_slot_to_mbps(rate: f64, params: &Params80211, slot_length: u32) -> f64 {
    rate * f64::from(params.payload_bytes) * 8.0 / (f64::from(slot_length) * params.idle_slot_us)
}

/// `a_A < p_s L / (p_nt + p_t L)` decides whether a stable bound exists.
pub fn stability_check(arrival_rate: f64, params: &Params80211) -> Result<StabilityReport> {
    if !(arrival_rate >= 0.0 && arrival_rate.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "arrival rate must be >= 0, got {arrival_rate}"
        )));
    }
    let fp = solve_fixed_point(params)?;
    let threshold = 1.0 - average_rate_of(&fp);
    Ok(StabilityReport {
        arrival_rate,
        threshold,
        threshold_mbps: packets_per_slot_to_mbps(threshold, params, fp.slot_length),
        verdict: if arrival_rate < threshold {
            StabilityVerdict::StableBoundDerivable
        } else {
            StabilityVerdict::NotDerivable
        },
    })
}
