//! Desk-scale trajectory prediction workbench: synthetic traffic scenes with
//! known causal structure, a small mixture-density trajectory predictor with
//! an optional conditional information bottleneck, per-agent Shapley
//! attribution, and the analysis/robustness suites built on top of it.

pub mod analysis;
pub mod attribution;
pub mod cib;
pub mod error;
pub mod rng;
pub mod jsonio;
pub mod kv;
pub mod metrics;
pub mod predictor;
pub mod robustness;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
