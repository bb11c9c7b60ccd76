//! Multi-task semi-conditional variational auto-encoder for reconstructing
//! incremental pressure fields from sparse monitoring wells and classifying
//! the leakage rate, plus the synthetic data generator, preprocessing,
//! posterior-predictive inference and evaluation metrics around it.

pub mod fsutil;
pub mod nn;
pub mod leaksim;
pub mod seed;
pub mod pipeline;
pub mod scvae;
pub mod posterior;
pub mod metrics;
