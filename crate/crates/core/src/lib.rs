//! Brownian-bridge data-to-data generative modeling at desk scale.
//!
//! The bridge between a source latent `x0` and a target latent `x1` with
//! noise scale `s` has states `x_t = (1 - t) x0 + t x1 + s sqrt(t (1 - t)) eps`.
//! This crate provides the closed-form bridge quantities, the three training
//! objectives (displacement, velocity, stabilized velocity), a small
//! trainable velocity network, variance-corrected Euler-Maruyama sampling,
//! shifted time grids, synthetic translation tasks, and the command-line
//! harness built on top of them.

pub mod bridge;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod sampler;
pub mod schedule;
pub mod tasks;
pub mod trainer;
pub mod verify;

pub use bridge::{BridgeSample, ConditionedPair, EndpointPair, NoiseScale};
pub use error::{BridgeError, Result};
pub use model::{ModelConfig, VelocityModel};
pub use numerics::{RngStream, Tensor};
pub use objectives::ObjectiveKind;
pub use sampler::{SamplerMode, VelocityField};
pub use schedule::Schedule;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
