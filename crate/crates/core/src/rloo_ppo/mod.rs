//! Group-sampled, leave-one-out PPO post-training with dynamic rejection of
//! uninformative groups.
//!
//! Each outer step freezes a sampling snapshot, fills a rollout dataset of
//! `B` episodes in groups of `K` per context (discarding groups whose rewards
//! are all equal), then runs `N` passes of minibatched clipped-PPO updates.

mod advantage;
mod fill;
mod loss;
mod rollout;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use advantage::{rloo_advantages, AdvantagedGroup};
pub use fill::{dynamic_fill, FillStats, FillStatus, RolloutDataset, Sample};
pub use loss::{ppo_loss, ppo_surrogate, record_ppo_loss, PpoRecord, PpoSample, RatioMode, LOG_RATIO_CLAMP};
pub use rollout::{collect_episodes, collect_group, Rollout};
pub use train::{ript_train, ript_train_with, NoObserver, RiptObserver, RiptOutcome, RiptStatus, StepMetrics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiptConfig {
    /// Group size K.
    pub k: usize,
    /// Rollouts per outer step B.
    pub b: usize,
    /// Optimization passes per outer step N.
    pub n: usize,
    /// Outer steps M.
    pub m: usize,
    pub eps: f64,
    /// Rollouts per PPO minibatch.
    pub minibatch: usize,
    pub lr_trunk: f64,
    pub lr_head: f64,
    /// Group attempts per step before giving up; default `20·B/K`.
    pub max_attempts: Option<usize>,
    pub ratio_mode: RatioMode,
    /// Reject groups whose rewards are all equal.
    pub dynamic_sampling: bool,
    /// Keep the regression scale head fixed during post-training.
    pub freeze_scale_in_ript: bool,
    /// Per-member perturbation of group contexts, as a multiple of `noise_base_std`.
    pub noise_scale: f64,
    /// Base position spread for perturbation; measured from the context set when unset.
    pub noise_base_std: Option<f64>,
    pub seed: u64,
    pub log_wall_time: bool,
}

impl Default for RiptConfig {
    fn default() -> Self {
        RiptConfig {
            k: 8,
            b: 64,
            n: 1,
            m: 30,
            eps: 0.2,
            minibatch: 16,
            lr_trunk: 1e-3,
            lr_head: 1e-3,
            max_attempts: None,
            ratio_mode: RatioMode::Sequence,
            dynamic_sampling: true,
            freeze_scale_in_ript: false,
            noise_scale: 0.0,
            noise_base_std: None,
            seed: 0,
            log_wall_time: false,
        }
    }
}

impl RiptConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.k < 2 {
            return fail(format!("K must be at least 2, got {}", self.k));
        }
        if self.b == 0 || self.b % self.k != 0 {
            return fail(format!("B = {} must be a positive multiple of K = {}", self.b, self.k));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return fail(format!("clip threshold must lie in (0, 1), got {}", self.eps));
        }
        if self.minibatch == 0 {
            return fail("minibatch must be at least 1".into());
        }
        if !(self.lr_trunk >= 0.0 && self.lr_head >= 0.0) {
            return fail("learning rates must be non-negative".into());
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return fail(format!("noise scale must be >= 0, got {}", self.noise_scale));
        }
        if self.max_attempts == Some(0) {
            return fail("max_attempts must be at least 1".into());
        }
        Ok(())
    }

    pub fn attempt_cap(&self) -> usize {
        self.max_attempts.unwrap_or(20 * (self.b / self.k))
    }
}

#[cfg(test)]
mod tests;
