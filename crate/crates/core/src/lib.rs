//! Evolution-strategies gradient estimators for unrolled computation graphs.

pub mod config;
pub mod driver;
pub mod error;
pub mod exact;
pub mod harness;
pub mod rng;
pub mod estimators;
pub mod oracles;
pub mod output;
pub mod systems;
pub mod tasks;

pub use error::{Error, Result};
