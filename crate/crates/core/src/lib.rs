//! Finite-time quantized average consensus over open multi-agent systems
//! with dynamic directed links.

pub mod algorithms;
pub mod batch;
pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod protocol;
pub mod topology;

pub use error::{Error, Result};
