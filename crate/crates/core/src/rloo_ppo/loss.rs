use serde::{Deserialize, Serialize};

use super::Rollout;
use crate::diffcore::{Eager, NodeId, Op, Tape, Tensor};
use crate::error::{Error, Result};
use crate::policy::Policy;

/// Bound on the log importance ratio before exponentiation.
pub const LOG_RATIO_CLAMP: f64 = 20.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// One ratio per trajectory from summed log-probabilities.
    #[default]
    Sequence,
    /// One ratio per step; the clipped objective is averaged over steps.
    PerStep,
}

/// `−min(r·A, clip(r, 1−ε, 1+ε)·A)` for a single ratio.
pub fn ppo_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    -unclipped.min(clipped)
}

/// A rollout paired with its advantage.
#[derive(Clone, Copy, Debug)]
pub struct PpoSample<'r> {
    pub rollout: &'r Rollout,
    pub advantage: f64,
}

pub struct PpoRecord {
    pub loss: NodeId,
    /// Importance ratios, one per rollout (sequence) or per step.
    pub ratios: Vec<f64>,
}

/// Records the mean clipped PPO loss over `samples` on `tape`.
pub fn record_ppo_loss<'a, T: Tape<'a>>(
    tape: &mut T,
    policy: &'a Policy,
    samples: &[PpoSample<'_>],
    eps: f64,
    mode: RatioMode,
) -> Result<PpoRecord> {
    if samples.is_empty() {
        return Err(Error::Dataset("PPO loss of an empty minibatch".into()));
    }
    let mut encodings = Vec::new();
    let mut actions = Vec::new();
    let mut lengths = Vec::with_capacity(samples.len());
    for s in samples {
        let r = s.rollout;
        if r.log_probs.len() != r.len() {
            return Err(Error::LengthMismatch(format!(
                "{} stored log-probabilities for {} actions",
                r.log_probs.len(),
                r.len()
            )));
        }
        encodings.extend(policy.encoder().episode(r.goal(), &r.observations, &r.actions)?);
        actions.extend(r.actions.iter().cloned());
        lengths.push(r.len());
    }
    let step_lp = policy.record_log_probs(tape, &encodings, &actions)?;

    let (new_lp, old_lp, adv) = match mode {
        RatioMode::Sequence => {
            let seq = tape.apply(Op::SegmentSum(lengths.clone()), &[step_lp])?;
            let old = samples.iter().map(|s| s.rollout.stored_logprob()).collect();
            let adv = samples.iter().map(|s| s.advantage).collect();
            (seq, old, adv)
        }
        RatioMode::PerStep => {
            let old = samples.iter().flat_map(|s| s.rollout.log_probs.iter().copied()).collect();
            let adv = samples
                .iter()
                .flat_map(|s| std::iter::repeat_n(s.advantage, s.rollout.len()))
                .collect();
            (step_lp, old, adv)
        }
    };
    let old = tape.input(Tensor::column(old_lp))?;
    let adv = tape.input(Tensor::column(adv))?;
    let log_ratio = tape.apply(Op::Sub, &[new_lp, old])?;
    let log_ratio = tape.apply(Op::Clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP), &[log_ratio])?;
    let ratio = tape.apply(Op::Exp, &[log_ratio])?;
    let ratios = tape.value(ratio).values().to_vec();
    if let Some(bad) = ratios.iter().find(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("importance ratio {bad}")));
    }
    let unclipped = tape.apply(Op::Mul, &[ratio, adv])?;
    let clipped = tape.apply(Op::Clamp(1.0 - eps, 1.0 + eps), &[ratio])?;
    let clipped = tape.apply(Op::Mul, &[clipped, adv])?;
    // ties go to the unclipped branch, so at r = 1 the gradient is −A∇log π
    let objective = tape.apply(Op::Minimum, &[unclipped, clipped])?;
    let per_rollout = match mode {
        RatioMode::Sequence => objective,
        RatioMode::PerStep => {
            let sums = tape.apply(Op::SegmentSum(lengths.clone()), &[objective])?;
            let inv = tape.input(Tensor::column(lengths.iter().map(|&l| 1.0 / l as f64).collect()))?;
            tape.apply(Op::Mul, &[sums, inv])?
        }
    };
    let mean = tape.apply(Op::Mean, &[per_rollout])?;
    let loss = tape.apply(Op::Neg, &[mean])?;
    Ok(PpoRecord { loss, ratios })
}

/// Value of the mean clipped PPO loss.
pub fn ppo_loss(policy: &Policy, samples: &[PpoSample<'_>], eps: f64, mode: RatioMode) -> Result<f64> {
    let mut tape = Eager::new();
    let rec = record_ppo_loss(&mut tape, policy, samples, eps, mode)?;
    tape.value(rec.loss).item()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_by_hand() {
        assert_eq!(ppo_surrogate(1.0, 0.5, 0.2), -0.5);
        assert!((ppo_surrogate(1.5, 1.0, 0.2) - (-1.2)).abs() < 1e-15);
        assert!((ppo_surrogate(0.5, -1.0, 0.2) - 0.8).abs() < 1e-15);
    }
}
