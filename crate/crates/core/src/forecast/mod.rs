//! Forecasting models and their training loops.
//!
//! [`MlpForecaster`] is a one-hidden-layer network trained on any
//! [`SeriesLoss`](crate::losses::SeriesLoss). [`StripeModel`] adds shape and
//! time latent codes: a posterior network trains it with an ELBO-style
//! objective, then proposal networks learn diverse codes from a DPP loss
//! with the rest of the model frozen.

mod checkpoint;
mod deterministic;
mod nn;
mod optim;
mod stripe;

pub use checkpoint::{Architecture, Checkpoint, CheckpointSidecar, Model, CHECKPOINT_FORMAT};
pub use deterministic::{evaluate_split_loss, train_deterministic, EpochRecord, LossKind, MlpForecaster, TrainConfig, TrainLog};
pub use nn::{flatten, unflatten_into, Activation, BoundMlp, Dense, Mlp};
pub use optim::{Adam, AdamConfig};
pub use stripe::{
    kl_standard_normal, train_stripe_predictor, train_stripe_proposals, PredictorBatch, ProposalEpoch, ProposalLog, SetScores,
    StripeConfig, StripeModel,
};
