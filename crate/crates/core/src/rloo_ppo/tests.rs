use proptest::prelude::*;

use super::*;
use crate::diffcore::{grad_check, Graph};
use crate::envsuite::{make_suite, Family, Split, Suite, SuiteConfig};
use crate::policy::{HeadOutputs, Policy, PolicyConfig};
use crate::rng;

fn bandit_policy(suite: &Suite, bias: [f64; 2]) -> Policy {
    let mut p = Policy::for_suite(
        suite,
        &PolicyConfig {
            hidden: vec![8],
            zero_init_head: true,
            ..PolicyConfig::default()
        },
    )
    .unwrap();
    let i = p.params().index_of("head.b").unwrap();
    p.params_mut().get_mut(i).values_mut().copy_from_slice(&bias);
    p
}

fn win_probability(p: &Policy, suite: &Suite) -> f64 {
    let ctx = &suite.contexts(0, 0, Split::Train, 1).unwrap()[0];
    let enc = p
        .encoder()
        .encode(&suite.task_for(ctx).unwrap().observe(&ctx.state), 0, &[])
        .unwrap();
    let HeadOutputs::Tokens { log_probs } = p.head_outputs(&[enc]).unwrap() else { panic!() };
    log_probs[0][1].exp()
}

fn small_grid() -> Suite {
    make_suite(&SuiteConfig {
        seed: 8,
        n_tasks: 2,
        grid_size: 5,
        horizon: 12,
        families: vec![Family::Reach],
        ..SuiteConfig::default()
    })
    .unwrap()
}

fn grid_policy(suite: &Suite, seed: u64) -> Policy {
    Policy::for_suite(
        suite,
        &PolicyConfig {
            hidden: vec![12],
            seed,
            ..PolicyConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn groups_are_seeded_and_log_probs_replay() {
    let suite = small_grid();
    let p = grid_policy(&suite, 1);
    let snap = p.snapshot();
    let ctx = &suite.contexts(1, 0, Split::Train, 1).unwrap()[0];
    let task = suite.task_for(ctx).unwrap();
    let a = collect_group(&snap, task, ctx, 6, 42).unwrap();
    let b = collect_group(&snap, task, ctx, 6, 42).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().any(|r| r.actions != a[0].actions));
    for r in &a {
        assert!(r.reward == 0.0 || r.reward == 1.0);
        assert!(r.len() <= task.horizon);
        assert_eq!(snap.sequence_logprob(r.goal(), &r.observations, &r.actions).unwrap(), r.stored_logprob());
    }
    assert!(collect_group(&snap, task, ctx, 1, 0).is_err());
}

#[test]
fn single_action_vocabulary_gives_identical_rollouts() {
    let suite = Suite::bandit(2, 1).unwrap();
    let p = bandit_policy(&suite, [-1e3, 0.0]);
    let snap = p.snapshot();
    let ctx = &suite.contexts(0, 0, Split::Train, 1).unwrap()[0];
    let group = collect_group(&snap, suite.task_for(ctx).unwrap(), ctx, 5, 3).unwrap();
    assert!(group.iter().all(|r| r.actions == group[0].actions && r.reward == 1.0));
}

#[test]
fn solved_contexts_stall() {
    let suite = Suite::bandit(2, 1).unwrap();
    let p = bandit_policy(&suite, [-1e3, 0.0]);
    let ctxs = suite.contexts(0, 0, Split::Train, 1).unwrap();
    let config = RiptConfig { k: 4, b: 8, ..RiptConfig::default() };
    let (data, stats) = dynamic_fill(&p.snapshot(), &suite, &ctxs, &config, 1).unwrap();
    assert!(data.is_empty());
    assert_eq!(stats.status, FillStatus::StalledOrConverged);
    assert_eq!(stats.rejected_success, config.attempt_cap());

    // rejection off admits the zero-advantage groups
    let off = RiptConfig { dynamic_sampling: false, ..config };
    let (data, stats) = dynamic_fill(&p.snapshot(), &suite, &ctxs, &off, 1).unwrap();
    assert_eq!(data.len(), 8);
    assert_eq!(stats.zero_advantage, 8);
    assert!(data.samples.iter().all(|s| s.advantage == 0.0));
}

#[test]
fn mixed_skill_fill_is_exact() {
    let suite = Suite::bandit(2, 1).unwrap();
    let p = bandit_policy(&suite, [0.0, 0.0]);
    let ctxs = suite.contexts(0, 0, Split::Train, 2).unwrap();
    let config = RiptConfig { k: 4, b: 8, ..RiptConfig::default() };
    for seed in 0..20 {
        let (data, stats) = dynamic_fill(&p.snapshot(), &suite, &ctxs, &config, seed).unwrap();
        assert_eq!(stats.status, FillStatus::Full);
        assert_eq!(data.len(), 8);
        assert_eq!(stats.accepted_groups, 2);
        for s in &data.samples {
            assert!(s.advantage.abs() >= 1.0 / 3.0 - 1e-15);
        }
        for g in 0..2 {
            let rewards: Vec<f64> = data.samples.iter().filter(|s| s.group == g).map(|s| s.rollout.reward).collect();
            assert!(rewards.contains(&0.0) && rewards.contains(&1.0));
        }
    }
}

#[test]
fn underfull_fill_is_flagged() {
    let suite = Suite::bandit(2, 1).unwrap();
    // win probability ≈ 0.9: most groups of 8 are all-success
    let p = bandit_policy(&suite, [0.0, 2.2]);
    let ctxs = suite.contexts(0, 0, Split::Train, 1).unwrap();
    let config = RiptConfig { k: 8, b: 64, max_attempts: Some(8), ..RiptConfig::default() };
    let (data, stats) = dynamic_fill(&p.snapshot(), &suite, &ctxs, &config, 5).unwrap();
    assert_eq!(stats.attempts, 8);
    assert_eq!(stats.status, FillStatus::Underfull);
    assert!(!data.is_empty() && data.len() < 64);
}

fn fresh_samples(suite: &Suite, p: &Policy, seed: u64) -> RolloutDataset {
    let ctxs = suite.contexts_for_scenario(0, Split::Train, 3).unwrap();
    let config = RiptConfig { k: 4, b: 8, max_attempts: Some(400), ..RiptConfig::default() };
    dynamic_fill(&p.snapshot(), suite, &ctxs, &config, seed).unwrap().0
}

#[test]
fn fresh_snapshot_ratios_are_one_and_gradient_is_reinforce() {
    let suite = small_grid();
    let p = grid_policy(&suite, 2);
    let data = fresh_samples(&suite, &p, 3);
    assert_eq!(data.len(), 8);
    for mode in [RatioMode::Sequence, RatioMode::PerStep] {
        let samples: Vec<PpoSample> = data
            .samples
            .iter()
            .map(|s| PpoSample { rollout: &s.rollout, advantage: s.advantage })
            .collect();
        let mut g = Graph::new();
        let rec = record_ppo_loss(&mut g, &p, &samples, 0.2, mode).unwrap();
        assert!(rec.ratios.iter().all(|&r| r == 1.0));
        g.backward().unwrap();
        let mut ppo = p.params().clone();
        ppo.zero_grad();
        ppo.accumulate_from(&g).unwrap();

        // −mean_i A_i ∇ log π(a_i | c_i), per trajectory or per step
        let mut g2 = Graph::new();
        let mut terms = Vec::new();
        for s in &samples {
            let r = s.rollout;
            let enc = p.encoder().episode(r.goal(), &r.observations, &r.actions).unwrap();
            let lp = p.record_log_probs(&mut g2, &enc, &r.actions).unwrap();
            let total = match mode {
                RatioMode::Sequence => g2.sum(lp).unwrap(),
                RatioMode::PerStep => g2.mean(lp).unwrap(),
            };
            terms.push(g2.scale(total, -s.advantage / samples.len() as f64).unwrap());
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = g2.add(acc, t).unwrap();
        }
        let _ = acc;
        g2.backward().unwrap();
        let mut pg = p.params().clone();
        pg.zero_grad();
        pg.accumulate_from(&g2).unwrap();

        let (a, b) = (ppo.flat_grads(), pg.flat_grads());
        let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        assert!(den > 0.0);
        assert!(num / den < 1e-6, "{mode:?}: {}", num / den);
    }
}

fn shifted(p: &Policy, delta: f64) -> Policy {
    let mut q = p.clone();
    let i = q.params().index_of("head.b").unwrap();
    for v in q.params_mut().get_mut(i).values_mut() {
        *v += delta;
    }
    let w = q.params().index_of("head.w").unwrap();
    for (j, v) in q.params_mut().get_mut(w).values_mut().iter_mut().enumerate() {
        *v += delta * ((j % 5) as f64 - 2.0);
    }
    q
}

#[test]
fn clip_deadzone_has_zero_gradient() {
    let suite = small_grid();
    let p = grid_policy(&suite, 4);
    let data = fresh_samples(&suite, &p, 9);
    let eps = 0.2;
    let mut checked = [false, false];
    for delta in [0.5, -0.5, 1.0, -1.0, 2.0, -2.0] {
        let q = shifted(&p, delta);
        for s in &data.samples {
            let sample = [PpoSample { rollout: &s.rollout, advantage: s.advantage }];
            let mut g = Graph::new();
            let rec = record_ppo_loss(&mut g, &q, &sample, eps, RatioMode::Sequence).unwrap();
            let r = rec.ratios[0];
            let dead = (s.advantage > 0.0 && r > 1.0 + eps) || (s.advantage < 0.0 && r < 1.0 - eps);
            if !dead {
                continue;
            }
            checked[usize::from(s.advantage < 0.0)] = true;
            g.backward().unwrap();
            let mut params = q.params().clone();
            params.zero_grad();
            params.accumulate_from(&g).unwrap();
            assert!(params.flat_grads().iter().all(|&x| x == 0.0));
        }
    }
    assert!(checked[0] && checked[1], "both clip regions exercised: {checked:?}");
}

#[test]
fn ppo_gradient_matches_finite_differences() {
    let suite = small_grid();
    for seed in 0..4 {
        let p = grid_policy(&suite, 10 + seed);
        let data = fresh_samples(&suite, &p, seed);
        let q = shifted(&p, 0.05);
        for mode in [RatioMode::Sequence, RatioMode::PerStep] {
            let samples: Vec<PpoSample> = data
                .samples
                .iter()
                .map(|s| PpoSample { rollout: &s.rollout, advantage: s.advantage })
                .collect();
            let mut g = Graph::new();
            record_ppo_loss(&mut g, &q, &samples, 0.2, mode).unwrap();
            let report = grad_check(&mut g, 1e-4).unwrap();
            assert!(report.passed(), "{mode:?}: {}", report.max_rel_error());
        }
    }
}

#[test]
fn zero_steps_leave_policy_unchanged() {
    let suite = small_grid();
    let mut p = grid_policy(&suite, 0);
    let before = p.clone();
    let ctxs = suite.contexts_for_scenario(0, Split::Train, 2).unwrap();
    let out = ript_train(&mut p, &suite, &ctxs, &RiptConfig { m: 0, ..RiptConfig::default() }).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(p, before);
}

#[test]
fn single_on_policy_update_sees_unit_ratios() {
    let suite = Suite::bandit(2, 1).unwrap();
    let mut p = bandit_policy(&suite, [0.0, 0.0]);
    let ctxs = suite.contexts(0, 0, Split::Train, 1).unwrap();
    let config = RiptConfig { k: 8, b: 32, n: 1, m: 3, minibatch: 32, lr_trunk: 0.05, lr_head: 0.05, ..RiptConfig::default() };
    let out = ript_train(&mut p, &suite, &ctxs, &config).unwrap();
    for m in &out.metrics {
        if m.fill_status != FillStatus::StalledOrConverged {
            assert_eq!(m.ratio_mean, 1.0);
            assert_eq!(m.ratio_max, 1.0);
        }
    }
}

#[test]
fn bandit_converges_within_thirty_steps() {
    let suite = Suite::bandit(2, 1).unwrap();
    let ctxs = suite.contexts(0, 0, Split::Train, 1).unwrap();
    for seed in 0..3 {
        let mut p = bandit_policy(&suite, [0.0, 0.0]);
        assert_eq!(win_probability(&p, &suite), 0.5);
        let config = RiptConfig {
            k: 8,
            b: 32,
            n: 1,
            m: 30,
            minibatch: 8,
            lr_trunk: 0.05,
            lr_head: 0.05,
            seed,
            ..RiptConfig::default()
        };
        let out = ript_train(&mut p, &suite, &ctxs, &config).unwrap();
        let won = win_probability(&p, &suite);
        assert!(won > 0.99, "seed {seed}: {won} after {} steps", out.metrics.len());
    }
}

#[test]
fn training_is_deterministic_and_parallel_safe() {
    let suite = small_grid();
    let ctxs = suite.contexts_for_scenario(0, Split::Train, 4).unwrap();
    let config = RiptConfig { k: 4, b: 16, n: 2, m: 3, minibatch: 4, seed: 5, ..RiptConfig::default() };
    let run = || {
        let mut p = grid_policy(&suite, 6);
        let out = ript_train(&mut p, &suite, &ctxs, &config).unwrap();
        (p, out)
    };
    let (pa, a) = run();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (pb, b) = single.install(run);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn config_validation() {
    assert!(RiptConfig { k: 1, b: 4, ..RiptConfig::default() }.validate().is_err());
    assert!(RiptConfig { k: 4, b: 6, ..RiptConfig::default() }.validate().is_err());
    assert!(RiptConfig { eps: 1.0, ..RiptConfig::default() }.validate().is_err());
    assert_eq!(RiptConfig { k: 8, b: 64, ..RiptConfig::default() }.attempt_cap(), 160);
}

proptest! {
    #[test]
    fn group_advantages_sum_to_zero(rewards in prop::collection::vec(prop::bool::ANY, 2..16)) {
        let r: Vec<f64> = rewards.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let (_, a) = rloo_advantages(&r).unwrap();
        prop_assert!(a.iter().sum::<f64>().abs() < 1e-12);
        let mixed = r.iter().any(|&x| x != r[0]);
        if mixed {
            let k = r.len() as f64;
            prop_assert!(a.iter().all(|x| x.abs() >= 1.0 / (k - 1.0) - 1e-15));
        } else {
            prop_assert!(a.iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn rollout_streams_differ_by_member() {
    use rand::Rng as _;
    let mut a = rng::stream(1, &[0]);
    let mut b = rng::stream(1, &[1]);
    assert_ne!(a.random::<u64>(), b.random::<u64>());
}
