//! Self-consistency preference optimization on a desk-scale policy.
//!
//! The crate turns sampled responses into vote tallies ([`consistency`]),
//! tallies into weighted preference pairs ([`pairs`]), and trains a small
//! differentiable policy on those pairs across iterations ([`trainer`]).
//! [`backends`] supplies responses from a synthetic task or a served model,
//! and [`eval`] computes the accuracy and correlation statistics.

pub mod backends;
pub mod config;
pub mod consistency;
pub mod error;
pub mod eval;
pub mod io;
pub mod pairs;
pub mod policy;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
