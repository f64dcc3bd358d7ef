use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{dynamic_fill, record_ppo_loss, FillStatus, PpoSample, RiptConfig};
use crate::diffcore::{Graph, OptimizerState};
use crate::envsuite::{Context, Suite};
use crate::error::{Error, Result};
use crate::policy::{ParamGroup, Policy};
use crate::rng;

/// One line of the per-step metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Group attempts this step, including rejected ones.
    pub groups_collected: usize,
    pub groups_rejected_success: usize,
    pub groups_rejected_fail: usize,
    /// Success rate over every episode sampled this step.
    pub mean_reward: f64,
    pub mean_abs_adv: f64,
    pub ratio_mean: f64,
    pub ratio_max: f64,
    pub ppo_loss: f64,
    pub eval_sr: Option<f64>,
    pub wall_ms: u64,
    pub zero_adv_samples: usize,
    pub fill_status: FillStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiptStatus {
    Completed,
    /// Stopped early: a fill found nothing to learn from and most rejected
    /// groups were all-success.
    Converged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiptOutcome {
    pub metrics: Vec<StepMetrics>,
    pub status: RiptStatus,
}

/// Hooks called once per outer step, after the update.
pub trait RiptObserver {
    fn evaluate(&mut self, _step: usize, _policy: &Policy) -> Result<Option<f64>> {
        Ok(None)
    }
    fn after_step(&mut self, _metrics: &StepMetrics, _policy: &Policy) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl RiptObserver for NoObserver {}

pub fn ript_train(policy: &mut Policy, suite: &Suite, contexts: &[Context], config: &RiptConfig) -> Result<RiptOutcome> {
    ript_train_with(policy, suite, contexts, config, &mut NoObserver)
}

/// Runs `M` outer steps. On a non-finite value the policy is restored to the
/// snapshot taken at the start of the failing step and the error returned.
pub fn ript_train_with(
    policy: &mut Policy,
    suite: &Suite,
    contexts: &[Context],
    config: &RiptConfig,
    observer: &mut dyn RiptObserver,
) -> Result<RiptOutcome> {
    config.validate()?;
    if contexts.is_empty() {
        return Err(Error::Dataset("context dataset is empty".into()));
    }
    let start = Instant::now();
    let lr_scale = (0..policy.params().len())
        .map(|i| match policy.param_group(i) {
            ParamGroup::Trunk => config.lr_trunk,
            ParamGroup::Head => config.lr_head,
            ParamGroup::Scale if config.freeze_scale_in_ript => 0.0,
            ParamGroup::Scale => config.lr_head,
        })
        .collect();
    let mut opt = OptimizerState::adam(1.0).with_lr_scale(lr_scale);
    let mut metrics = Vec::with_capacity(config.m);
    for step in 0..config.m {
        let snapshot = policy.snapshot();
        let step_seed = rng::derive(config.seed, &[0x7374_6570, step as u64]);
        let (data, stats) = dynamic_fill(&snapshot, suite, contexts, config, step_seed)?;

        let mut ratios = Vec::new();
        let mut losses = Vec::new();
        if !data.is_empty() {
            let result = (|| -> Result<()> {
                for pass in 0..config.n {
                    let mut order: Vec<usize> = (0..data.len()).collect();
                    order.shuffle(&mut rng::stream(step_seed, &[0x7061_7373, pass as u64]));
                    for chunk in order.chunks(config.minibatch) {
                        let samples: Vec<PpoSample> = chunk
                            .iter()
                            .map(|&i| PpoSample {
                                rollout: &data.samples[i].rollout,
                                advantage: data.samples[i].advantage,
                            })
                            .collect();
                        let mut g = Graph::new();
                        let rec = record_ppo_loss(&mut g, policy, &samples, config.eps, config.ratio_mode)?;
                        let loss = g.value(rec.loss).item()?;
                        if !loss.is_finite() {
                            return Err(Error::NonFinite(format!("PPO loss at step {step}")));
                        }
                        ratios.extend(rec.ratios);
                        losses.push(loss);
                        g.backward()?;
                        let params = policy.params_mut();
                        params.zero_grad();
                        params.accumulate_from(&g)?;
                        opt.apply(params)?;
                    }
                }
                Ok(())
            })();
            if let Err(e) = result {
                *policy = (*snapshot).clone();
                return Err(e);
            }
        }

        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let abs_adv: Vec<f64> = data.samples.iter().map(|s| s.advantage.abs()).collect();
        let mut record = StepMetrics {
            step,
            groups_collected: stats.attempts,
            groups_rejected_success: stats.rejected_success,
            groups_rejected_fail: stats.rejected_fail,
            mean_reward: stats.mean_reward(),
            mean_abs_adv: mean(&abs_adv),
            ratio_mean: mean(&ratios),
            ratio_max: ratios.iter().copied().fold(0.0, f64::max),
            ppo_loss: mean(&losses),
            eval_sr: None,
            wall_ms: if config.log_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
            zero_adv_samples: stats.zero_advantage,
            fill_status: stats.status,
        };
        record.eval_sr = observer.evaluate(step, policy)?;
        observer.after_step(&record, policy)?;
        metrics.push(record);

        let converged = stats.status == FillStatus::StalledOrConverged
            && stats.rejected_success > 0
            && stats.rejected_success >= stats.rejected_fail;
        if converged {
            return Ok(RiptOutcome {
                metrics,
                status: RiptStatus::Converged,
            });
        }
    }
    Ok(RiptOutcome {
        metrics,
        status: RiptStatus::Completed,
    })
}
