use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{collect_episodes, AdvantagedGroup, RiptConfig, Rollout};
use crate::envsuite::{perturb_context, Context, Suite};
use crate::error::{Error, Result};
use crate::policy::PolicySnapshot;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillStatus {
    Full,
    /// Attempt cap reached with a partial dataset.
    Underfull,
    /// Attempt cap reached with nothing accepted.
    StalledOrConverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FillStats {
    pub attempts: usize,
    pub accepted_groups: usize,
    pub rejected_success: usize,
    pub rejected_fail: usize,
    /// Every episode sampled this fill, accepted or not.
    pub episodes: usize,
    pub successes: usize,
    /// Accepted samples whose advantage is exactly zero.
    pub zero_advantage: usize,
    pub status: FillStatus,
}

impl FillStats {
    pub fn mean_reward(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rollout: Rollout,
    pub baseline: f64,
    pub advantage: f64,
    /// Index of the accepted group this sample came from.
    pub group: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutDataset {
    pub samples: Vec<Sample>,
    pub target: usize,
}

impl RolloutDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn attempt(
    snapshot: &PolicySnapshot,
    suite: &Suite,
    contexts: &[Context],
    config: &RiptConfig,
    base_std: f64,
    step_seed: u64,
    index: usize,
) -> Result<AdvantagedGroup> {
    let mut r = rng::stream(step_seed, &[0x6374_78, index as u64]);
    let base = &contexts[r.random_range(0..contexts.len())];
    let task = suite.task_for(base)?;
    let group_seed = rng::derive(step_seed, &[0x6772_6f75_70, index as u64]);
    let starts = (0..config.k)
        .map(|member| {
            if config.noise_scale == 0.0 {
                return Ok(base.clone());
            }
            let mut nr = rng::stream(group_seed, &[0x6e6f_6973_65, member as u64]);
            perturb_context(task, base, config.noise_scale, base_std, &mut nr)
        })
        .collect::<Result<Vec<_>>>()?;
    let rollouts = collect_episodes(snapshot, task, starts, group_seed)?;
    AdvantagedGroup::new(base.clone(), rollouts)
}

/// Collects groups until the dataset holds `B` rollouts or the attempt cap is
/// hit. Attempt `i` depends only on `(step_seed, i)`, so groups are collected
/// in parallel waves and consumed in attempt order.
pub fn dynamic_fill(
    snapshot: &PolicySnapshot,
    suite: &Suite,
    contexts: &[Context],
    config: &RiptConfig,
    step_seed: u64,
) -> Result<(RolloutDataset, FillStats)> {
    config.validate()?;
    if contexts.is_empty() {
        return Err(Error::Dataset("context dataset is empty".into()));
    }
    let base_std = config
        .noise_base_std
        .unwrap_or_else(|| crate::envsuite::base_position_std(contexts));
    let cap = config.attempt_cap();
    let mut data = RolloutDataset {
        samples: Vec::with_capacity(config.b),
        target: config.b,
    };
    let mut stats = FillStats {
        attempts: 0,
        accepted_groups: 0,
        rejected_success: 0,
        rejected_fail: 0,
        episodes: 0,
        successes: 0,
        zero_advantage: 0,
        status: FillStatus::Full,
    };
    while data.len() < config.b && stats.attempts < cap {
        let wave = ((config.b - data.len()) / config.k).min(cap - stats.attempts);
        let first = stats.attempts;
        let groups: Vec<Result<AdvantagedGroup>> = (first..first + wave)
            .into_par_iter()
            .map(|i| attempt(snapshot, suite, contexts, config, base_std, step_seed, i))
            .collect();
        for group in groups {
            let group = group?;
            stats.attempts += 1;
            stats.episodes += group.rollouts.len();
            stats.successes += group.rollouts.iter().filter(|r| r.reward == 1.0).count();
            if config.dynamic_sampling && !group.is_mixed() {
                if group.all_success() {
                    stats.rejected_success += 1;
                } else {
                    stats.rejected_fail += 1;
                }
                continue;
            }
            let id = stats.accepted_groups;
            stats.accepted_groups += 1;
            for ((rollout, baseline), advantage) in group.rollouts.into_iter().zip(group.baselines).zip(group.advantages) {
                if advantage == 0.0 {
                    stats.zero_advantage += 1;
                }
                data.samples.push(Sample {
                    rollout,
                    baseline,
                    advantage,
                    group: id,
                });
            }
        }
    }
    stats.status = if data.len() == config.b {
        FillStatus::Full
    } else if data.is_empty() {
        FillStatus::StalledOrConverged
    } else {
        FillStatus::Underfull
    };
    Ok((data, stats))
}
