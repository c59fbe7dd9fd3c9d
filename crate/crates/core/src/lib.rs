//! Online low-rank matrix completion bandits.
//!
//! `M` users are each recommended one of `N` items per round; the expected
//! rewards form a hidden low-rank matrix `P`. This crate holds the
//! allocation-only algorithmic core:
//!
//! * [`env`]: ground-truth reward models and the noisy observation model.
//! * [`matcomp`]: the round-based completion subroutine (masking, repeated
//!   observation, near-square partitioning, nuclear-norm regularized least
//!   squares, entrywise median boosting).
//! * [`policies`]: explore-then-commit, OCTAL phased elimination (and its
//!   small-user-count variant), per-user UCB, and a clairvoyant oracle.
//! * [`harness`]: episode driver and expected-regret accounting.
//!
//! File formats, configuration and the command line live in the `lrmc`
//! companion crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
#[macro_use]
extern crate std;

mod error;
pub mod env;
pub mod harness;
mod linalg;
pub mod math;
pub mod matcomp;
pub mod policies;
pub mod rng;

pub use error::{Error, Result};
pub use nalgebra::DMatrix;
pub use rng::RngStream;
