//! Simulation and tuning of at-scale recommendation inference.
//!
//! A model ([`model`]) is priced on a CPU or accelerator ([`platform`]),
//! driven by a query trace ([`loadgen`]) through a discrete-event server
//! ([`sim`]), and the batching and offload knobs are tuned against a p95
//! latency target ([`tune`]).

pub mod config;
pub mod error;
pub mod loadgen;
pub mod model;
pub mod platform;
pub mod report;
pub mod repro;
pub mod sim;
pub mod stats;
pub mod targets;
pub mod tune;

pub use error::{Error, Result};
