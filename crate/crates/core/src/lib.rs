//! Federated reinforcement distillation on cart-pole.
//!
//! Agents learn with advantage actor-critic and periodically share knowledge
//! through a server in one of four forms: proxy replay memories (FRD), proxy
//! memories augmented locally with mixup (MixFRD), raw replay memories (PD),
//! or network weights (FRL). The [`harness`] module runs multi-seed sweeps
//! and writes the results.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to
//! `f32`, which is also the unit of every payload on the wire.

pub mod agent;
pub mod codec;
pub mod env;
pub mod federation;
pub mod harness;
pub mod nn;
pub mod proxy;
pub mod scalar;

pub use scalar::Scalar;

pub type EnvState = env::EnvState<f32>;
pub type EnvConfig = env::EnvConfig<f32>;
pub type CartPole = env::CartPole<f32>;
pub type Mlp = nn::Mlp<f32>;
pub type A2cAgent = agent::A2cAgent<f32>;
pub type AgentConfig = agent::AgentConfig<f32>;
pub type ReplayMemory = agent::ReplayMemory<f32>;
pub type ClusterSpec = proxy::ClusterSpec<f32>;
pub type ProxyReplayMemory = proxy::ProxyReplayMemory<f32>;
pub type FederationConfig = federation::FederationConfig<f32>;
pub type Federation = federation::Federation<f32>;
