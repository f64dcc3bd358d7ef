//! Critic-free interactive post-training for small autoregressive policies.
//!
//! The crate covers the whole three-stage loop: imitation pretraining,
//! few-shot supervised fine-tuning, and reinforcement post-training with
//! leave-one-out advantages, dynamic rejection of uninformative rollout
//! groups and a PPO-clipped objective, all driven by sparse binary success
//! rewards from procedurally generated environments.

pub mod diffcore;
pub mod envsuite;
pub mod error;
pub mod harness;
pub mod policy;
pub mod rloo_ppo;
pub mod rng;
pub mod supervised;

pub use error::{Error, Result};
