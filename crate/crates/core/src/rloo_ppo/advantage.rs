use super::Rollout;
use crate::envsuite::Context;
use crate::error::{Error, Result};

/// Leave-one-out baselines and advantages:
/// `b_k = Σ_{j≠k} R_j / (K − 1)`, `A_k = R_k − b_k`.
pub fn rloo_advantages(rewards: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::Config(format!("leave-one-out needs at least 2 rewards, got {k}")));
    }
    let mut baselines = Vec::with_capacity(k);
    let mut advantages = Vec::with_capacity(k);
    for (i, &r) in rewards.iter().enumerate() {
        let others: f64 = rewards
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &x)| x)
            .sum();
        let b = others / (k - 1) as f64;
        baselines.push(b);
        advantages.push(r - b);
    }
    Ok((baselines, advantages))
}

/// K rollouts from one context with their leave-one-out statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantagedGroup {
    pub context: Context,
    pub rollouts: Vec<Rollout>,
    pub baselines: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl AdvantagedGroup {
    pub fn new(context: Context, rollouts: Vec<Rollout>) -> Result<Self> {
        let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
        let (baselines, advantages) = rloo_advantages(&rewards)?;
        Ok(AdvantagedGroup {
            context,
            rollouts,
            baselines,
            advantages,
        })
    }

    /// At least one success and one failure.
    pub fn is_mixed(&self) -> bool {
        let first = self.rollouts[0].reward;
        self.rollouts.iter().any(|r| r.reward != first)
    }

    pub fn all_success(&self) -> bool {
        self.rollouts.iter().all(|r| r.reward == 1.0)
    }
}
