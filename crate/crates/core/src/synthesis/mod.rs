//! Data-driven controller synthesis.
//!
//! [`exact`] covers noise-free data: stabilizability, the feedback gain, the
//! rank test on the data pencil and the data regulator equations.
//! [`noisy`] covers data with a bounded truncation error: the quadratic
//! consistency description, a common-Lyapunov feedback gain and an
//! approximate regulator with a disturbance bound.

pub mod exact;
pub mod noisy;
pub mod types;

pub use exact::*;
pub use noisy::*;
pub use types::*;
