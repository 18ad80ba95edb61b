use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A curve rate violates the bound's validity condition.
    #[error("{what}: rate {rate} must be {relation} {limit}")]
    InvalidRate {
        what: &'static str,
        rate: f64,
        relation: &'static str,
        limit: f64,
    },

    #[error("{what} did not converge within {limit} steps")]
    NonConvergence { what: &'static str, limit: usize },

    /// No (theta1, theta2, r_A) combination satisfies rho_A + rho_I < c.
    #[error("no feasible optimizer grid point (arrival rate {arrival_rate} too close to capacity)")]
    InfeasibleGrid { arrival_rate: f64 },

    #[error("bound never drops to p={p} for x <= {x_max}")]
    QuantileCapExceeded { p: f64, x_max: u64 },

    #[error("trace is empty")]
    EmptyTrace,

    #[error("window length {max_t} is too large for a trace of {len} slots")]
    TraceTooShort { max_t: usize, len: usize },

    #[error("enumeration over {slots} idle slots exceeds the limit of {limit}")]
    InstanceTooLarge { slots: u64, limit: u64 },

    #[error("MGF horizon t={t} exceeds the cap {cap}")]
    HorizonExceeded { t: u64, cap: u64 },
}
