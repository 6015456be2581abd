//! Relaxation dynamics, Fisher information and Mpemba-inversion thermometry
//! for few-level probes coupled to a thermal bath.
//!
//! Units are natural (`ħ = k_B = 1`): energies, frequencies and temperatures
//! share one unit and times are its inverse.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod certs;
pub mod error;
pub mod fisher;
pub mod mpemba;
pub mod oracle;
pub mod par;
pub mod protocol;
pub mod qubit;
pub mod spectral;

pub use error::{Error, Result};
pub use par::Execution;
