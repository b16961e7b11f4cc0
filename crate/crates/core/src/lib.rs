//! Core numerics for training noisy path-integrating RNNs and studying their replay.
//!
//! Everything here is `no_std` + `alloc`. Scalar transcendental functions go through
//! `libm` so results do not depend on the platform's math library.
//!
//! Module map:
//! - [`process`]: OU / Wiener path generators, task environments, rat random walks.
//! - [`score`]: Gaussian score oracles and the leakage matrix.
//! - [`rnn`]: network parameters, the momentum/adaptation step, rollouts, hidden-state init.
//! - [`train`]: BPTT, Adam, masked-input curricula.
//! - [`replay`]: quiescent replay sweeps, analytic OU replay, second-order residual checks.
//! - [`metrics`]: Wasserstein distances, reach time, path length, region visits.
//! - [`place`]: place-cell encoding and decoding.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod linalg;
pub mod metrics;
pub mod place;
pub mod process;
pub mod replay;
pub mod rng;
pub mod rnn;
pub mod score;
pub mod train;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
