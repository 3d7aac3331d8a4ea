//! Configuration, operator cache and experiment runner behind the
//! `thermofield` binary.

pub mod cache;
pub mod config;
pub mod run;

pub use cache::{cache_roundtrip, CacheVerification};
pub use config::{Experiment, RunConfig};
pub use run::{run, RunOutcome};
