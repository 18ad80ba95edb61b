//! `(sigma, rho)` characterizations of arrival and impairment processes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mac80211::{self, Params80211};
use crate::netcalc::SigmaRho;
use crate::numeric::LogSumExp;

/// `y(t) = sup_s (1/theta) log E exp(theta X(s, s+t))` for a fixed `theta`.
pub struct MgfEnvelope {
    theta: f64,
    horizon: Option<u64>,
    y: Box<dyn Fn(u64) -> f64 + Send + Sync>,
}

impl fmt::Debug for MgfEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MgfEnvelope")
            .field("theta", &self.theta)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl MgfEnvelope {
    /// Envelope defined for every `t >= 1` by `y`.
    pub fn from_fn(theta: f64, y: impl Fn(u64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            theta,
            horizon: None,
            y: Box::new(y),
        }
    }

    /// Envelope from precomputed values `values[t - 1] = y(t)`.
    pub fn from_values(theta: f64, values: Vec<f64>) -> Self {
        let horizon = values.len() as u64;
        Self {
            theta,
            horizon: Some(horizon),
            y: Box::new(move |t| values[(t - 1) as usize]),
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Largest `t` for which `y(t)` is available, if bounded.
    pub fn horizon(&self) -> Option<u64> {
        self.horizon
    }

    /// `y(t)`; `y(0) = 0`. Returns `None` past the horizon.
    pub fn y(&self, t: u64) -> Option<f64> {
        if t == 0 {
            return Some(0.0);
        }
        match self.horizon {
            Some(h) if t > h => None,
            _ => Some((self.y)(t)),
        }
    }
}

/// Convergence settings for [`fit_sigma_rho`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative band on consecutive slopes.
    pub epsilon: f64,
    /// Largest `t` examined before giving up.
    pub t_cap: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            t_cap: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub sigma_rho: SigmaRho,
    /// The `t` at which the slope converged.
    pub t_star: u64,
}

/// Fits a line `rho t + sigma` above the envelope.
///
/// Walks the slopes `s(t) = y(t) - y(t-1)` until two consecutive ones agree
/// within the relative band `epsilon` (at some `t* >= 2`), takes
/// `rho = s(t*)`, and lifts the line through `(t*, y(t*))` by the largest
/// gap `max_{t <= t*} (y(t) - l(t))` so that it dominates `y` on `[0, t*]`.
pub fn fit_sigma_rho(env: &MgfEnvelope, opts: FitOptions) -> Result<EnvelopeFit> {
    if !(opts.epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {}",
            opts.epsilon
        )));
    }
    let mut ys = vec![0.0];
    let mut t = 1u64;
    let t_star = loop {
        if t > opts.t_cap {
            return Err(Error::NonConvergence {
                what: "envelope slope",
                limit: opts.t_cap as usize,
            });
        }
        let y = env.y(t).ok_or(Error::NonConvergence {
            what: "envelope slope (trace horizon reached)",
            limit: env.horizon().unwrap_or(0) as usize,
        })?;
        if !y.is_finite() {
            return Err(Error::InvalidParameter(format!("envelope value y({t}) = {y}")));
        }
        ys.push(y);
        if t >= 2 {
            let prev = ys[t as usize - 1] - ys[t as usize - 2];
            let cur = ys[t as usize] - ys[t as usize - 1];
            let (lo, hi) = ((1.0 - opts.epsilon) * prev, (1.0 + opts.epsilon) * prev);
            if lo.min(hi) <= cur && cur <= lo.max(hi) {
                break t;
            }
        }
        t += 1;
    };

    let ts = t_star as usize;
    let rho = ys[ts] - ys[ts - 1];
    let intercept = ys[ts] - rho * t_star as f64;
    let lift = ys
        .iter()
        .enumerate()
        .map(|(u, y)| y - (intercept + rho * u as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let sigma = intercept + lift;

    for (u, y) in ys.iter().enumerate() {
        let line = rho * u as f64 + sigma;
        assert!(
            *y <= line + 1e-9 * line.abs().max(1.0),
            "fitted line {rho} t + {sigma} is below y({u}) = {y}"
        );
    }

    Ok(EnvelopeFit {
        sigma_rho: SigmaRho::new(env.theta(), sigma.max(0.0), rho.max(0.0))?,
        t_star,
    })
}

/// `(theta, 0, lambda (e^theta - 1) / theta)` for Poisson arrivals of rate
/// `lambda` packets per slot.
pub fn poisson_sigma_rho(lambda: f64, theta: f64) -> Result<SigmaRho> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    SigmaRho::new(theta, 0.0, lambda * theta.exp_m1() / theta)
}

/// Per-slot packet counts read from a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceData {
    pub increments: Vec<u64>,
    /// Free-form description of one slot's duration, e.g. `"780us"`.
    pub slot_unit: String,
}

impl TraceData {
    pub fn new(increments: Vec<u64>, slot_unit: impl Into<String>) -> Result<Self> {
        if increments.is_empty() {
            return Err(Error::EmptyTrace);
        }
        Ok(Self {
            increments,
            slot_unit: slot_unit.into(),
        })
    }

    /// Parses one nonnegative integer per line; blank lines are skipped.
    pub fn parse(text: &str, slot_unit: impl Into<String>) -> Result<Self> {
        let mut increments = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v = line.parse::<u64>().map_err(|_| {
                Error::InvalidParameter(format!(
                    "trace line {}: expected a nonnegative integer, got {line:?}",
                    lineno + 1
                ))
            })?;
            increments.push(v);
        }
        Self::new(increments, slot_unit)
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }
}

/// Empirical envelope of a trace for `t = 1..=max_t`.
///
/// For each window length the expectation is the mean of
/// `exp(theta * window_sum)` over every sliding window of the trace, which
/// treats the trace as one ergodic sample path.
pub fn trace_mgf_envelope(trace: &TraceData, theta: f64, max_t: usize) -> Result<MgfEnvelope> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    if max_t == 0 || max_t >= trace.len() {
        return Err(Error::TraceTooShort {
            max_t,
            len: trace.len(),
        });
    }
    let prefix: Vec<u64> = std::iter::once(0)
        .chain(trace.increments.iter().scan(0u64, |acc, &v| {
            *acc += v;
            Some(*acc)
        }))
        .collect();
    let n = trace.len();
    let values = (1..=max_t)
        .map(|t| {
            let mut acc = LogSumExp::new();
            for s in 0..=(n - t) {
                acc.add(theta * (prefix[s + t] - prefix[s]) as f64);
            }
            let windows = (n - t + 1) as f64;
            (acc.value() - windows.ln()) / theta
        })
        .collect();
    Ok(MgfEnvelope::from_values(theta, values))
}

/// Where an average rate comes from.
#[derive(Debug, Clone, Copy)]
pub enum RateSource<'a> {
    Trace(&'a TraceData),
    Poisson { lambda: f64 },
    Impairment(&'a Params80211),
}

/// Long-run average rate in packets per slot.
pub fn average_rate(source: RateSource<'_>) -> Result<f64> {
    match source {
        RateSource::Trace(trace) => {
            if trace.is_empty() {
                return Err(Error::EmptyTrace);
            }
            Ok(trace.increments.iter().sum::<u64>() as f64 / trace.len() as f64)
        }
        RateSource::Poisson { lambda } => {
            if lambda >= 0.0 {
                Ok(lambda)
            } else {
                Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")))
            }
        }
        RateSource::Impairment(params) => mac80211::impairment_average_rate(params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn poisson_examples() {
        assert_eq!(
            poisson_sigma_rho(0.0, 2.0).unwrap(),
            SigmaRho::new(2.0, 0.0, 0.0).unwrap()
        );
        let sr = poisson_sigma_rho(0.04, 1.0).unwrap();
        assert_relative_eq!(sr.rho, 0.068_731_273, max_relative = 1e-8);
        assert_eq!(sr.sigma, 0.0);
        let sr = poisson_sigma_rho(0.07, 1e-9).unwrap();
        assert_relative_eq!(sr.rho, 0.07, max_relative = 1e-8);
        assert!(poisson_sigma_rho(-1.0, 1.0).is_err());
    }

    #[test]
    fn fit_linear_envelope() {
        let env = MgfEnvelope::from_fn(0.5, |t| 0.37 * t as f64);
        let fit = fit_sigma_rho(&env, FitOptions::default()).unwrap();
        assert_eq!(fit.t_star, 2);
        assert_relative_eq!(fit.sigma_rho.rho, 0.37, max_relative = 1e-12);
        assert!(fit.sigma_rho.sigma.abs() < 1e-12);
    }

    #[test]
    fn fit_saturating_envelope() {
        // s(1) = s(2) = 1 already meets the band, before the plateau is seen
        let env = MgfEnvelope::from_fn(1.0, |t| (t as f64).min(5.0));
        let fit = fit_sigma_rho(&env, FitOptions::default()).unwrap();
        assert_eq!(fit.t_star, 2);
        assert_eq!(fit.sigma_rho.rho, 1.0);
        assert_eq!(fit.sigma_rho.sigma, 0.0);

        // starting on the plateau, the slope settles at 0 and sigma is its height
        let env = MgfEnvelope::from_fn(1.0, |t| if t == 0 { 0.0 } else { 5.0 });
        let fit = fit_sigma_rho(&env, FitOptions::default()).unwrap();
        assert_eq!(fit.t_star, 3);
        assert_eq!(fit.sigma_rho.rho, 0.0);
        assert_relative_eq!(fit.sigma_rho.sigma, 5.0);
    }

    #[test]
    fn fit_concave_envelope_dominates() {
        let env = MgfEnvelope::from_fn(1.0, |t| 2.0 * (1.0 - (-(t as f64) / 3.0).exp()) + 0.1 * t as f64);
        let fit = fit_sigma_rho(
            &env,
            FitOptions {
                epsilon: 1e-4,
                t_cap: 1000,
            },
        )
        .unwrap();
        let SigmaRho { sigma, rho, .. } = fit.sigma_rho;
        assert!((rho - 0.1).abs() < 1e-3);
        for t in 0..=fit.t_star {
            assert!(env.y(t).unwrap() <= rho * t as f64 + sigma + 1e-12);
        }
    }

    #[test]
    fn fit_non_convergence_is_reported() {
        // slopes 2t - 1 never meet a 1e-5 band before t = 50
        let env = MgfEnvelope::from_fn(1.0, |t| (t * t) as f64);
        let err = fit_sigma_rho(
            &env,
            FitOptions {
                epsilon: 1e-5,
                t_cap: 50,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonConvergence { limit: 50, .. }));
    }

    #[test]
    fn fit_recovers_poisson_envelope() {
        for (lambda, theta) in [(0.04, 1.0), (0.07, 0.3), (0.5, 2.0)] {
            let exact = poisson_sigma_rho(lambda, theta).unwrap();
            let env = MgfEnvelope::from_fn(theta, move |t| exact.rho * t as f64);
            let fit = fit_sigma_rho(&env, FitOptions::default()).unwrap();
            assert!((fit.sigma_rho.rho - exact.rho).abs() <= 1e-5 * exact.rho);
            assert!(fit.sigma_rho.sigma.abs() <= 1e-6);
        }
    }

    #[test]
    fn trace_envelope_examples() {
        let ones = TraceData::new(vec![1; 50], "slot").unwrap();
        let env = trace_mgf_envelope(&ones, 0.7, 20).unwrap();
        for t in 1..=20 {
            assert_relative_eq!(env.y(t).unwrap(), t as f64, max_relative = 1e-12);
        }
        assert_eq!(env.y(21), None);

        let zeros = TraceData::new(vec![0; 30], "slot").unwrap();
        let env = trace_mgf_envelope(&zeros, 1.0, 10).unwrap();
        assert!((1..=10).all(|t| env.y(t).unwrap().abs() < 1e-15));

        let alt = TraceData::new((0..40).map(|i| if i % 2 == 0 { 0 } else { 2 }).collect(), "slot").unwrap();
        let env = trace_mgf_envelope(&alt, 1.0, 5).unwrap();
        let expected = ((1.0 + 2f64.exp()) / 2.0).ln();
        assert_relative_eq!(env.y(1).unwrap(), expected, max_relative = 1e-12);

        assert!(matches!(
            trace_mgf_envelope(&zeros, 1.0, 30),
            Err(Error::TraceTooShort { .. })
        ));
    }

    #[test]
    fn trace_parsing() {
        let t = TraceData::parse("1\n0\n\n3\n", "780us").unwrap();
        assert_eq!(t.increments, vec![1, 0, 3]);
        assert!(TraceData::parse("1\n-2\n", "x").is_err());
        assert_eq!(TraceData::parse("\n\n", "x").unwrap_err(), Error::EmptyTrace);
    }

    #[test]
    fn average_rates() {
        assert_eq!(average_rate(RateSource::Poisson { lambda: 0.07 }).unwrap(), 0.07);
        let ones = TraceData::new(vec![1; 10], "slot").unwrap();
        assert_eq!(average_rate(RateSource::Trace(&ones)).unwrap(), 1.0);
        let a_i = average_rate(RateSource::Impairment(&Params80211::default())).unwrap();
        assert!((a_i - 0.921).abs() < 1e-3, "a_I = {a_i}");
    }
}
