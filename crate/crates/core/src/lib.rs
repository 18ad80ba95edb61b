//! Stochastic network calculus for 802.11 DCF backlog bounds.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod characterize;
pub mod error;
pub mod mac80211;
pub mod netcalc;
pub mod numeric;
pub mod sim;

pub use error::{Error, Result};
