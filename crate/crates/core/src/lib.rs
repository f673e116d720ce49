//! Data-driven cooperative output regulation for heterogeneous multi-agent
//! systems.
//!
//! The crate takes sampled trajectories of each agent, encodes them in a
//! Chebyshev basis, and synthesizes distributed feedback gains from the
//! resulting coefficient matrices without identifying a plant model.
//!
//! Modules:
//! - [`opb`]: Chebyshev fitting, evaluation, differentiation and the
//!   truncation-noise bound.
//! - [`graph`]: Laplacian construction and lower bounds on the smallest real
//!   part of the follower block, plus the coupling gain they imply.
//! - [`lmi`]: a small semidefinite feasibility solver.
//! - [`synthesis`]: data-based gain synthesis for exact and noisy data.
//! - [`sim`]: reference simulator for data generation and validation.
//! - [`harness`]: scenario files, the end-to-end pipeline and its report.

// Validation uses `!(x > 0.0)` style checks so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod lmi;
pub mod matrix_serde;
pub mod opb;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
