//! Sheaf-informed dueling deep Q-learning.
//!
//! The network encodes each agent's observation into a stalk `e`, maps it
//! through the shared restriction map `M`, and scores actions with
//! `Q(a) = V(e) + A([M e, e], a) - mean_a' A([M e, e], a')`. Training
//! minimizes `L_Q + section_weight * l_sec` over joint transitions sampled
//! from a replay buffer, with a hard-synced target network.

mod config;
mod network;
mod replay;
mod train;

pub use config::{EncoderKind, NetworkConfig, Preset, TrainConfig};
pub use network::{argmax, ForwardVars, Layout, QNetwork, QParts, PARAM_MAP};
pub use replay::{ReplayBuffer, Transition};
pub use train::{
    combined_loss, eval_instances, evaluate, log_to_csv, loss_and_grad, sample_instance, td_loss, td_targets, train,
    train_with, BestSnapshot, LogRow, LossBreakdown, LossOptions, TrainEvent, TrainOutcome, LOG_HEADER,
};

use thiserror::Error;

use crate::gridworld::GridError;
use crate::mapgen::MapGenError;
use crate::nn::NnError;
use crate::observation::ObservationError;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("observation: {0}")]
    Observation(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    MapGen(#[from] MapGenError),
    #[error(transparent)]
    Bench(#[from] crate::bench::BenchError),
}

impl From<ObservationError> for DqnError {
    fn from(e: ObservationError) -> Self {
        DqnError::Observation(e.to_string())
    }
}
