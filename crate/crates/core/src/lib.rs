//! Decentralized multi-agent path finding with sheaf-consensus deep Q-learning.
//!
//! The crate is organized bottom-up:
//!
//! * [`gridworld`]: the grid environment (collision resolution, rewards, termination)
//! * [`mapgen`]: seeded room/random maps and start/goal placement
//! * [`observation`]: 6-channel local field-of-view tensors
//! * [`agentgraph`]: the dynamic graph of mutually visible agents
//! * [`sheaf`]: restriction map, global-section loss and exact section spaces
//! * [`nn`]: a small reverse-mode autodiff engine with dense/conv layers and Adam
//! * [`dqn`]: the sheaf-informed dueling Q-network, replay and training loop
//! * [`baseline`]: prioritized space-time A* and a plan validator
//! * [`bench`]: episode metrics, benchmark suites and reports
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the two concrete instantiations.

pub mod agentgraph;
pub mod baseline;
pub mod bench;
pub mod dqn;
pub mod gridworld;
pub mod mapgen;
pub mod nn;
pub mod observation;
pub mod rng;
pub mod scalar;
pub mod selfcheck;
pub mod sheaf;

pub use scalar::{DType, Scalar};

pub type QNetworkF32 = dqn::QNetwork<f32>;
pub type QNetworkF64 = dqn::QNetwork<f64>;
pub type RestrictionMapF32 = sheaf::RestrictionMap<f32>;
pub type RestrictionMapF64 = sheaf::RestrictionMap<f64>;
pub type TensorF32 = nn::Tensor<f32>;
pub type TensorF64 = nn::Tensor<f64>;
pub type ParamSetF32 = nn::ParamSet<f32>;
pub type ParamSetF64 = nn::ParamSet<f64>;
