//! Deterministic 4-connected grid environment for multi-agent path finding.
//!
//! Agents move simultaneously. Moves into walls or off the map, vertex
//! conflicts and swap (edge) conflicts are resolved by sending every involved
//! mover back to its previous cell, repeated until the joint configuration is
//! conflict-free. Invalid actions are never rejected, only resolved.

mod env;
mod map;
mod scenario;

pub use env::{
    conflicts_between, resolve_moves, Action, AgentState, EnvConfig, FinishRewardMode,
    JointState, Resolution, StepOutcome, REWARD_COLLISION, REWARD_FINISH, REWARD_MOVE,
    REWARD_STAY_ON_GOAL,
};
pub use map::{compute_distance_field, DistanceField, GridMap, Pos};
pub use scenario::Scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("cell {0} is an obstacle or out of bounds")]
    NotFree(Pos),
    #[error("map parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("episode already terminated")]
    Terminal,
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
