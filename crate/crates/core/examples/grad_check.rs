//! Checks reverse-mode gradients of the PPO and imitation losses against
//! central finite differences on a small grid policy.
//!
//! cargo run --example grad_check

use posttrain::diffcore::{grad_check, Graph};
use posttrain::envsuite::{make_suite, Family, Split, SuiteConfig};
use posttrain::policy::{Policy, PolicyConfig};
use posttrain::rloo_ppo::{collect_group, record_ppo_loss, rloo_advantages, PpoSample, RatioMode};
use posttrain::supervised::{record_imitation_loss, LossKind, StepPairs};

fn main() -> posttrain::Result<()> {
    let suite = make_suite(&SuiteConfig {
        seed: 3,
        n_tasks: 2,
        grid_size: 5,
        horizon: 10,
        families: vec![Family::Reach],
        ..SuiteConfig::default()
    })?;
    let policy = Policy::for_suite(&suite, &PolicyConfig { hidden: vec![6], seed: 1, ..PolicyConfig::default() })?;
    let ctx = &suite.contexts(0, 0, Split::Train, 1)?[0];
    let group = collect_group(&policy.snapshot(), suite.task_for(ctx)?, ctx, 4, 7)?;
    let rewards: Vec<f64> = group.iter().map(|r| r.reward).collect();
    let (_, advantages) = rloo_advantages(&rewards)?;
    // All-equal rewards give zero advantages and a flat loss; use a fixed
    // spread instead so the check has something to measure.
    let advantages: Vec<f64> = if advantages.iter().all(|&a| a == 0.0) {
        vec![0.75, -0.25, -0.25, -0.25]
    } else {
        advantages
    };

    for mode in [RatioMode::Sequence, RatioMode::PerStep] {
        let samples: Vec<PpoSample> = group
            .iter()
            .zip(&advantages)
            .map(|(r, &a)| PpoSample { rollout: r, advantage: a })
            .collect();
        let mut g = Graph::new();
        record_ppo_loss(&mut g, &policy, &samples, 0.2, mode)?;
        let report = grad_check(&mut g, 1e-4)?;
        println!("ppo {mode:?}: max relative error {:.2e}, passed {}", report.max_rel_error(), report.passed());
    }

    let mut pairs = StepPairs::default();
    for r in &group {
        pairs.encodings.extend(policy.encoder().episode(r.goal(), &r.observations, &r.actions)?);
        pairs.actions.extend(r.actions.iter().cloned());
    }
    let mut g = Graph::new();
    record_imitation_loss(&mut g, &policy, &pairs, LossKind::Nll)?;
    let report = grad_check(&mut g, 1e-4)?;
    println!("imitation nll: max relative error {:.2e}, passed {}", report.max_rel_error(), report.passed());
    Ok(())
}
