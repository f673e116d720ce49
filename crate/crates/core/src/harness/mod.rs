//! Scenario files, the end-to-end pipeline and trajectory file conversion.

pub mod io;
pub mod pipeline;
pub mod scenario;

pub use pipeline::*;
pub use scenario::*;
