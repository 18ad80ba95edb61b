//! Log-domain helpers shared by the MGF and bound computations.

use statrs::function::factorial::ln_binomial as statrs_ln_binomial;

/// `ln C(n, k)`; `-inf` when `k > n`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        f64::NEG_INFINITY
    } else {
        statrs_ln_binomial(n, k)
    }
}

/// `count * ln(p)` with the convention `0 * ln(0) = 0`.
pub fn ln_pow(p: f64, count: u64) -> f64 {
    if count == 0 {
        0.0
    } else {
        count as f64 * p.ln()
    }
}

/// Streaming log-sum-exp accumulator.
///
/// Keeps a running maximum and a scaled sum so that adding terms of wildly
/// different magnitudes neither overflows nor loses the small ones entirely.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    /// Adds `exp(log_term)`.
    pub fn add(&mut self, log_term: f64) {
        if log_term == f64::NEG_INFINITY {
            return;
        }
        if log_term <= self.max {
            self.scaled += (log_term - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - log_term).exp() + 1.0;
            self.max = log_term;
        }
    }

    /// `ln` of the accumulated sum (`-inf` when empty).
    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// `n` logarithmically spaced points covering `[lo, hi]` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let terms = [-3.0_f64, 0.5, 2.0, -40.0];
        let mut acc = LogSumExp::new();
        for t in terms {
            acc.add(t);
        }
        let direct: f64 = terms.iter().map(|t| t.exp()).sum();
        assert_relative_eq!(acc.value(), direct.ln(), max_relative = 1e-14);
    }

    #[test]
    fn log_sum_exp_survives_huge_terms() {
        let mut acc = LogSumExp::new();
        acc.add(1000.0);
        acc.add(1000.0);
        assert_relative_eq!(acc.value(), 1000.0 + 2f64.ln(), max_relative = 1e-14);
        assert_eq!(LogSumExp::new().value(), f64::NEG_INFINITY);
    }

    #[test]
    fn binomial_edges() {
        assert_eq!(ln_binomial(5, 0), 0.0);
        assert_relative_eq!(ln_binomial(10, 3).exp(), 120.0, max_relative = 1e-12);
        assert_eq!(ln_binomial(2, 3), f64::NEG_INFINITY);
        assert_eq!(ln_pow(0.0, 0), 0.0);
        assert_eq!(ln_pow(0.0, 2), f64::NEG_INFINITY);
    }

    #[test]
    fn log_space_endpoints() {
        let g = log_space(0.01, 5.0, 40);
        assert_eq!(g.len(), 40);
        assert_relative_eq!(g[0], 0.01, max_relative = 1e-12);
        assert_relative_eq!(g[39], 5.0, max_relative = 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
