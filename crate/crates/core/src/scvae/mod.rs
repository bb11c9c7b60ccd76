//! Multi-task semi-conditional VAE: a convolutional encoder over (x, y), a
//! field decoder and a class decoder both conditioned on well measurements.

mod model;
mod train;

pub use model::{
    kl_closed_form, reparameterize, DecoderXCache, DecoderYCache, EncoderCache, LatentPosterior,
    Model, ModelConfig,
};
pub use train::{
    draw_eps, elbo_eval, elbo_loss, init_model, instance_terms, train, Batch, EpochRecord, HyperParams,
    LossBreakdown, StopReason, TrainOutcome,
};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ScvaeError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {term} loss in batch {batch}")]
    NonFinite { batch: usize, term: &'static str },
    #[error("training diverged at epoch {epoch}, batch {batch} ({term}); best parameters from epoch {best_epoch} kept")]
    Diverged {
        epoch: usize,
        batch: usize,
        term: String,
        best_epoch: usize,
        partial: Box<TrainOutcome>,
    },
}
