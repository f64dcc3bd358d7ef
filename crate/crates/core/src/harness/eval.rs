use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::envsuite::{Context, EnvInstance, Suite};
use crate::error::{Error, Result};
use crate::policy::Policy;

/// One greedy evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub context_id: String,
    pub task_id: usize,
    pub episode: usize,
    pub steps: usize,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: usize,
    pub episodes: usize,
    pub successes: usize,
    pub sr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub seed: u64,
    pub per_task: Vec<TaskResult>,
    /// Unweighted mean of per-task success rates.
    pub mean_sr: f64,
    pub episodes: usize,
    pub successes: usize,
}

impl EvalReport {
    /// Rebuilds a report from raw episode records.
    pub fn from_episodes(checkpoint: &str, seed: u64, episodes: &[EpisodeRecord]) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Dataset("no evaluation episodes".into()));
        }
        let mut by_task: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for e in episodes {
            let entry = by_task.entry(e.task_id).or_default();
            entry.0 += 1;
            entry.1 += e.success as usize;
        }
        let per_task: Vec<TaskResult> = by_task
            .into_iter()
            .map(|(task_id, (episodes, successes))| TaskResult {
                task_id,
                episodes,
                successes,
                sr: successes as f64 / episodes as f64,
            })
            .collect();
        let mean_sr = per_task.iter().map(|t| t.sr).sum::<f64>() / per_task.len() as f64;
        Ok(EvalReport {
            checkpoint: checkpoint.into(),
            seed,
            mean_sr,
            episodes: episodes.len(),
            successes: episodes.iter().filter(|e| e.success).count(),
            per_task,
        })
    }
}

/// Runs one greedy episode and reports (steps, success).
pub fn greedy_episode(policy: &Policy, suite: &Suite, context: &Context) -> Result<(usize, bool)> {
    let task = suite.task_for(context)?;
    let mut env = EnvInstance::new(task);
    let mut obs = env.reset(context)?;
    let mut history = Vec::new();
    loop {
        let enc = policy.encoder().encode(&obs, context.task_id, &history)?;
        let action = policy.greedy_action(&enc)?;
        let out = env.step(&action)?;
        history.push(action);
        obs = out.observation;
        if out.done {
            return Ok((env.steps(), out.reward == 1.0));
        }
    }
}

/// Greedy success rate over `contexts`, `episodes` times each.
pub fn evaluate(
    policy: &Policy,
    suite: &Suite,
    contexts: &[Context],
    episodes: usize,
    checkpoint: &str,
    seed: u64,
) -> Result<(EvalReport, Vec<EpisodeRecord>)> {
    if episodes == 0 {
        return Err(Error::Config("episodes per context must be at least 1".into()));
    }
    let mut records = Vec::with_capacity(contexts.len() * episodes);
    for ctx in contexts {
        for episode in 0..episodes {
            let (steps, success) = greedy_episode(policy, suite, ctx)?;
            records.push(EpisodeRecord {
                context_id: ctx.id.clone(),
                task_id: ctx.task_id,
                episode,
                steps,
                success,
            });
        }
    }
    Ok((EvalReport::from_episodes(checkpoint, seed, &records)?, records))
}
