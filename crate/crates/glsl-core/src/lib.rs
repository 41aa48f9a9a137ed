//! Self-supervised anomaly detection for wireless sensor networks: a graph
//! neural wrapper autoencoder over sliding window tensors, trained on
//! injected anomalies, with a clustering + time-compression scaling variant.
//!
//! Everything is f64 and deterministic: one root seed, split per consumer.

pub mod adam;
pub mod dataset;
pub mod error;
pub mod gnn;
pub mod inject;
pub mod model;
pub mod params;
pub mod plus;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod topology;
pub mod train;

pub use error::{GlslError, Result};
