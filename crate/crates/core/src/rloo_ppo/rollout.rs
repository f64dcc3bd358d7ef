use serde::{Deserialize, Serialize};

use crate::envsuite::{Action, Context, EnvInstance, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::PolicySnapshot;
use crate::rng;

/// One finished episode sampled from a snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub context: Context,
    /// One more entry than `actions`.
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    /// Per-step log-probabilities under the sampling snapshot.
    pub log_probs: Vec<f64>,
    pub reward: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn goal(&self) -> usize {
        self.context.task_id
    }

    /// Sum of stored per-step log-probabilities, accumulated in step order.
    pub fn stored_logprob(&self) -> f64 {
        self.log_probs.iter().fold(0.0, |acc, lp| acc + lp)
    }
}

/// K episodes from the same context; member `i` draws from stream `(seed, i)`.
pub fn collect_group(
    snapshot: &PolicySnapshot,
    task: &TaskSpec,
    context: &Context,
    k: usize,
    seed: u64,
) -> Result<Vec<Rollout>> {
    if k < 2 {
        return Err(Error::Config(format!("group size must be at least 2, got {k}")));
    }
    collect_episodes(snapshot, task, vec![context.clone(); k], seed)
}

/// Runs one episode per start context in lockstep, batching the policy
/// forward pass across members that are still running. Each member has its
/// own environment and random stream, so batching does not change results.
pub fn collect_episodes(
    snapshot: &PolicySnapshot,
    task: &TaskSpec,
    starts: Vec<Context>,
    seed: u64,
) -> Result<Vec<Rollout>> {
    let mut rngs: Vec<rng::Rng> = (0..starts.len()).map(|i| rng::stream(seed, &[i as u64])).collect();
    let mut envs: Vec<EnvInstance> = Vec::with_capacity(starts.len());
    let mut rollouts: Vec<Rollout> = Vec::with_capacity(starts.len());
    for ctx in starts {
        let mut env = EnvInstance::new(task);
        let first = env.reset(&ctx)?;
        envs.push(env);
        rollouts.push(Rollout {
            context: ctx,
            observations: vec![first],
            actions: Vec::new(),
            log_probs: Vec::new(),
            reward: 0.0,
        });
    }
    let encoder = snapshot.encoder();
    loop {
        let active: Vec<usize> = (0..envs.len()).filter(|&i| !envs[i].is_done()).collect();
        if active.is_empty() {
            break;
        }
        let encodings = active
            .iter()
            .map(|&i| {
                let r = &rollouts[i];
                encoder.encode(r.observations.last().expect("non-empty"), r.goal(), &r.actions)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut streams: Vec<&mut rng::Rng> = rngs
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| !envs[*i].is_done())
            .map(|(_, r)| r)
            .collect();
        let draws = snapshot.sample_batch(&encodings, &mut streams)?;
        for (&i, (action, lp)) in active.iter().zip(draws) {
            let out = envs[i].step(&action)?;
            let r = &mut rollouts[i];
            r.observations.push(out.observation);
            r.actions.push(action);
            r.log_probs.push(lp);
            if out.done {
                r.reward = out.reward;
            }
        }
    }
    Ok(rollouts)
}
