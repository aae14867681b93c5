//! Coupled Hopf algebra of Lions forests, iterated-integral lifts of
//! piecewise-linear paths, empirical rough paths and their metrics.

pub mod cli;
pub mod empirical;
pub mod forest;
pub mod hopf;
pub mod metrics;
pub mod partitions;
pub mod pathlift;
pub mod words;

mod error;

pub use error::{Error, Result};
