//! Benchmarks that certify a continuous-variable channel operates in the
//! quantum domain, from coherent-state inputs and homodyne statistics.

pub mod analytic;
pub mod channel;
pub mod error;
pub mod evm;
pub mod feasibility;
pub mod sweep;

pub use error::{Error, Result};
