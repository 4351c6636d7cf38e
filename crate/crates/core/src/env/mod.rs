//! Synthetic task generators.

pub mod dataset;
pub mod mmwave;
pub mod ofdm;

pub use dataset::{EnvironmentDataset, TaskKind};
