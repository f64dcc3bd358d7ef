//! Two-armed, one-step bandit: arm 1 wins, arm 0 loses. Starting from a
//! uniform policy, every mixed group gives the winning arm a positive
//! advantage, so its probability climbs towards 1.
//!
//! cargo run --example bandit

use posttrain::envsuite::{Split, Suite};
use posttrain::policy::{HeadOutputs, Policy, PolicyConfig};
use posttrain::rloo_ppo::{ript_train_with, RiptConfig, RiptObserver, StepMetrics};
use posttrain::Result;

struct Trace {
    encoding: Vec<f64>,
}

impl RiptObserver for Trace {
    fn after_step(&mut self, m: &StepMetrics, policy: &Policy) -> Result<()> {
        let HeadOutputs::Tokens { log_probs } = policy.head_outputs(&[self.encoding.clone()])? else {
            unreachable!("bandit policies are tokenized");
        };
        println!(
            "step {:>2}  p(win) {:.4}  batch reward {:.3}  groups tried {:>2}  loss {:+.4}",
            m.step,
            log_probs[0][1].exp(),
            m.mean_reward,
            m.groups_collected,
            m.ppo_loss
        );
        Ok(())
    }
}

fn main() -> Result<()> {
    let suite = Suite::bandit(2, 1)?;
    let contexts = suite.contexts(0, 0, Split::Train, 1)?;
    let mut policy = Policy::for_suite(
        &suite,
        &PolicyConfig {
            hidden: vec![8],
            zero_init_head: true,
            ..PolicyConfig::default()
        },
    )?;
    let obs = suite.task_for(&contexts[0])?.observe(&contexts[0].state);
    let encoding = policy.encoder().encode(&obs, 0, &[])?;

    let config = RiptConfig {
        k: 8,
        b: 32,
        n: 1,
        m: 30,
        minibatch: 8,
        lr_trunk: 0.05,
        lr_head: 0.05,
        ..RiptConfig::default()
    };
    let outcome = ript_train_with(&mut policy, &suite, &contexts, &config, &mut Trace { encoding })?;
    println!("stopped after {} steps: {:?}", outcome.metrics.len(), outcome.status);
    Ok(())
}
