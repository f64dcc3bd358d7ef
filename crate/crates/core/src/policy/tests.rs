use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::envsuite::{Context, Demonstration, EnvState};

fn linear(space: ActionSpace, head: Head, window: usize) -> Policy {
    let spec = PolicySpec {
        encoder: Encoder::new(1, 1, space, window),
        hidden: vec![],
        head,
    };
    Policy::new(
        spec,
        &PolicyConfig {
            zero_init_head: true,
            ..PolicyConfig::default()
        },
    )
    .unwrap()
}

fn tokens(vocab: usize) -> Policy {
    linear(ActionSpace::Discrete(vocab), Head::Tokenized { vocab }, 0)
}

fn regression(density: Density) -> Policy {
    linear(ActionSpace::Continuous(2), Head::Regression { dim: 2, density }, 0)
}

fn set(policy: &mut Policy, name: &str, values: &[f64]) {
    let i = policy.params().index_of(name).unwrap();
    policy.params_mut().get_mut(i).values_mut().copy_from_slice(values);
}

fn mlp(vocab: usize, seed: u64) -> Policy {
    let spec = PolicySpec {
        encoder: Encoder::new(3, 2, ActionSpace::Discrete(vocab), 1),
        hidden: vec![8, 6],
        head: Head::Tokenized { vocab },
    };
    Policy::new(
        spec,
        &PolicyConfig {
            seed,
            ..PolicyConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn tokenized_logprob_by_hand() {
    let mut p = tokens(3);
    set(&mut p, "head.b", &[2f64.ln(), 0.0, 0.0]);
    let lp = p.action_logprob(&[0.0, 1.0], &Action::Token(0)).unwrap();
    assert!((lp - (0.5f64).ln()).abs() < 1e-12);
    assert!(matches!(
        p.action_logprob(&[0.0, 1.0], &Action::Token(3)),
        Err(Error::OutOfVocabulary { token: 3, vocab: 3 })
    ));
}

#[test]
fn uniform_samples_have_log_quarter() {
    let p = tokens(4);
    let mut r = rng::stream(1, &[]);
    for _ in 0..50 {
        let (a, lp) = p.sample_action(&[0.3, 1.0], &mut r).unwrap();
        assert_eq!(lp, -(4f64).ln());
        assert_eq!(lp, p.action_logprob(&[0.3, 1.0], &a).unwrap());
    }
}

#[test]
fn gaussian_at_one_sigma() {
    let mut p = regression(Density::Gaussian);
    set(&mut p, "head.b", &[0.2, -0.4]);
    let HeadOutputs::Regression { mean, sigma } = p.head_outputs(&[vec![0.0, 1.0]]).unwrap() else {
        panic!()
    };
    let a: Vec<f64> = mean[0].iter().zip(&sigma[0]).map(|(m, s)| m + s).collect();
    let lp = p.action_logprob(&[0.0, 1.0], &Action::Continuous(a)).unwrap();
    let expected: f64 = sigma[0]
        .iter()
        .map(|s| -0.5 - 0.5 * (2.0 * std::f64::consts::PI).ln() - s.ln())
        .sum();
    assert!((lp - expected).abs() < 1e-12);
}

#[test]
fn laplace_peak_with_half_scale() {
    let mut p = regression(Density::Laplace);
    let b = inverse_softplus(0.5 - SCALE_FLOOR);
    set(&mut p, "scale.b", &[b, b]);
    let lp = p.action_logprob(&[0.0, 1.0], &Action::Continuous(vec![0.0, 0.0])).unwrap();
    assert!(lp.abs() < 1e-12, "{lp}");
}

#[test]
fn categorical_frequencies_match_probabilities() {
    let mut p = tokens(3);
    set(&mut p, "head.b", &[0.5, -0.3, 0.1]);
    let HeadOutputs::Tokens { log_probs } = p.head_outputs(&[vec![0.0, 1.0]]).unwrap() else {
        panic!()
    };
    let n = 100_000;
    let mut counts = [0usize; 3];
    let mut r = rng::stream(11, &[]);
    for _ in 0..n {
        let (a, _) = p.sample_action(&[0.0, 1.0], &mut r).unwrap();
        counts[a.token().unwrap()] += 1;
    }
    for (c, lp) in counts.iter().zip(&log_probs[0]) {
        let prob = lp.exp();
        let std = (n as f64 * prob * (1.0 - prob)).sqrt();
        assert!((*c as f64 - n as f64 * prob).abs() < 3.0 * std, "{counts:?}");
    }
}

#[test]
fn sequence_logprob_is_additive_and_replays_steps() {
    let p = mlp(4, 3);
    assert_eq!(p.sequence_logprob(1, &[vec![0.0; 3]], &[]).unwrap(), 0.0);

    let observations: Vec<Vec<f64>> = (0..6).map(|t| vec![t as f64 * 0.1, 1.0, -0.5]).collect();
    let actions: Vec<Action> = [0, 3, 1, 1, 2].iter().map(|&k| Action::Token(k)).collect();
    let total = p.sequence_logprob(1, &observations, &actions).unwrap();
    let mut replay = 0.0;
    for t in 0..actions.len() {
        let e = p.encoder().encode(&observations[t], 1, &actions[..t]).unwrap();
        replay += p.action_logprob(&e, &actions[t]).unwrap();
    }
    assert_eq!(total, replay);
    assert!(p.sequence_logprob(1, &observations[..5], &actions).is_err());
}

#[test]
fn sampled_episode_logprobs_replay_exactly() {
    let p = mlp(5, 9);
    let snap = p.snapshot();
    let mut r = rng::stream(2, &[]);
    let mut observations = vec![vec![0.2, -0.1, 0.7]];
    let mut actions = Vec::new();
    let mut stored = Vec::new();
    for t in 0..12 {
        let e = snap.encoder().encode(&observations[t], 0, &actions).unwrap();
        let (a, lp) = snap.sample_action(&e, &mut r).unwrap();
        actions.push(a);
        stored.push(lp);
        observations.push(vec![t as f64, 0.5, -(t as f64)]);
    }
    let sum = stored.iter().fold(0.0, |acc, x| acc + x);
    assert_eq!(snap.sequence_logprob(0, &observations, &actions).unwrap(), sum);
}

#[test]
fn greedy_rules() {
    let mut p = tokens(3);
    set(&mut p, "head.b", &[0.1, 0.9, 0.9]);
    assert_eq!(p.greedy_action(&[0.0, 1.0]).unwrap(), Action::Token(1));
    set(&mut p, "head.b", &[10.1, 10.9, 10.9]);
    assert_eq!(p.greedy_action(&[0.0, 1.0]).unwrap(), Action::Token(1));

    let mut g = regression(Density::Gaussian);
    set(&mut g, "head.b", &[0.25, -0.75]);
    set(&mut g, "scale.b", &[3.0, -2.0]);
    assert_eq!(g.greedy_action(&[0.0, 1.0]).unwrap(), Action::Continuous(vec![0.25, -0.75]));
}

#[test]
fn densities_integrate_to_one() {
    for density in [Density::Gaussian, Density::Laplace] {
        let mut p = linear(
            ActionSpace::Continuous(1),
            Head::Regression { dim: 1, density },
            0,
        );
        set(&mut p, "head.b", &[0.3]);
        let b = inverse_softplus(0.4 - SCALE_FLOOR);
        set(&mut p, "scale.b", &[b]);
        let (lo, hi, n) = (-12.0, 12.0, 240_000);
        let h = (hi - lo) / n as f64;
        let encodings = vec![vec![0.0, 1.0]; n + 1];
        let actions: Vec<Action> = (0..=n).map(|i| Action::Continuous(vec![lo + i as f64 * h])).collect();
        let lps = p.log_probs(&encodings, &actions).unwrap();
        // trapezoid rule
        let mut total = 0.0;
        for i in 0..n {
            total += 0.5 * h * (lps[i].exp() + lps[i + 1].exp());
        }
        assert!((total - 1.0).abs() < 1e-4, "{density:?}: {total}");
    }
}

#[test]
fn checkpoint_round_trip_keeps_head_family() {
    let p = regression(Density::Laplace);
    let ckpt = p.to_checkpoint().unwrap();
    assert_eq!(ckpt.meta["head"], "laplace");
    let text = ckpt.to_text().unwrap();
    let back = Policy::from_checkpoint(&crate::diffcore::Checkpoint::from_text(&text).unwrap()).unwrap();
    assert_eq!(back, p);
}

#[test]
fn sampling_nan_is_an_error() {
    let mut p = tokens(2);
    set(&mut p, "head.b", &[f64::NAN, 0.0]);
    let mut r = rng::stream(0, &[]);
    assert!(matches!(p.sample_action(&[0.0, 1.0], &mut r), Err(Error::NonFinite(_))));
}

fn laplace_demos(p: &Policy, b: f64, n: usize, seed: u64) -> Vec<Demonstration> {
    let mut r = rng::stream(seed, &[]);
    (0..n)
        .map(|i| {
            let mut observations = vec![vec![0.1 * i as f64 - 1.0]];
            let mut actions = Vec::new();
            for t in 0..10 {
                let e = p.encoder().encode(&observations[t], 0, &actions).unwrap();
                let Action::Continuous(mu) = p.greedy_action(&e).unwrap() else { panic!() };
                let a = mu.iter().map(|m| m + b * standard_draw(Density::Laplace, &mut r)).collect();
                actions.push(Action::Continuous(a));
                observations.push(vec![(t as f64 * 0.37 + i as f64).sin()]);
            }
            Demonstration {
                context: Context {
                    id: format!("d{i}"),
                    task_id: 0,
                    scenario_id: 0,
                    state: EnvState::Bandit,
                },
                observations,
                actions,
                success: true,
            }
        })
        .collect()
}

fn laplace_mlp() -> Policy {
    let spec = PolicySpec {
        encoder: Encoder::new(1, 1, ActionSpace::Continuous(2), 1),
        hidden: vec![16],
        head: Head::Regression {
            dim: 2,
            density: Density::Laplace,
        },
    };
    Policy::new(
        spec,
        &PolicyConfig {
            seed: 4,
            ..PolicyConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn scale_fit_recovers_laplace_scale() {
    let mut p = laplace_mlp();
    let before = p.clone();
    let demos = laplace_demos(&p, 0.2, 100, 1);

    // closed-form maximum likelihood: mean absolute residual
    let mut abs_sum = 0.0;
    let mut count = 0.0;
    for d in &demos {
        for (t, a) in d.actions.iter().enumerate() {
            let e = p.encoder().encode(&d.observations[t], 0, &d.actions[..t]).unwrap();
            let Action::Continuous(mu) = p.greedy_action(&e).unwrap() else { panic!() };
            for (x, m) in a.continuous().unwrap().iter().zip(&mu) {
                abs_sum += (x - m).abs();
                count += 1.0;
            }
        }
    }
    let b_hat = abs_sum / count;

    let fit = fit_scale_head(&mut p, &demos, 500, 0.05).unwrap();
    assert!(fit.final_nll <= fit.losses[0]);

    let encodings: Vec<Vec<f64>> = demos
        .iter()
        .flat_map(|d| p.encoder().episode(0, &d.observations, &d.actions).unwrap())
        .collect();
    let HeadOutputs::Regression { mean, sigma } = p.head_outputs(&encodings).unwrap() else {
        panic!()
    };
    let sigmas: Vec<f64> = sigma.into_iter().flatten().collect();
    let mean_sigma = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
    assert!((mean_sigma / 0.2 - 1.0).abs() < 0.10, "sigma {mean_sigma}");
    assert!((mean_sigma / b_hat - 1.0).abs() < 0.03, "sigma {mean_sigma} vs mle {b_hat}");

    // trunk and mean head untouched
    let HeadOutputs::Regression { mean: mean_before, .. } = before.head_outputs(&encodings).unwrap() else {
        panic!()
    };
    assert_eq!(mean, mean_before);
    for i in 0..p.params().len() {
        if p.param_group(i) != ParamGroup::Scale {
            assert_eq!(p.params().get(i).values(), before.params().get(i).values());
        }
    }
}

#[test]
fn scale_fit_on_exact_demos_hits_the_floor() {
    let mut p = laplace_mlp();
    let demos = laplace_demos(&p, 0.0, 5, 2);
    let fit = fit_scale_head(&mut p, &demos, 500, 0.05).unwrap();
    assert!(fit.final_nll < fit.losses[0]);
    let e = p.encoder().episode(0, &demos[0].observations, &demos[0].actions).unwrap();
    let HeadOutputs::Regression { sigma, .. } = p.head_outputs(&e).unwrap() else { panic!() };
    for s in sigma.into_iter().flatten() {
        assert!(s >= SCALE_FLOOR && s < SCALE_FLOOR * 1.01, "{s}");
    }
    assert!(fit_scale_head(&mut p, &[], 10, 0.05).is_err());
    assert!(fit_scale_head(&mut tokens(2), &demos, 10, 0.05).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_sums_to_one(seed in 0u64..1000, x in prop::collection::vec(-50.0f64..50.0, 16)) {
        let p = mlp(6, seed);
        let scaled: Vec<f64> = x[..p.encoder().dim()].iter().map(|v| v * 3.0).collect();
        let HeadOutputs::Tokens { log_probs } = p.head_outputs(&[scaled]).unwrap() else { unreachable!() };
        let total: f64 = log_probs[0].iter().map(|l| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn batched_log_probs_equal_single_rows(seed in 0u64..1000, rows in 1usize..20) {
        let p = mlp(4, seed);
        let mut r = rng::stream(seed, &[1]);
        let encodings: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..p.encoder().dim()).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let actions: Vec<Action> = (0..rows).map(|i| Action::Token(i % 4)).collect();
        let batch = p.log_probs(&encodings, &actions).unwrap();
        for i in 0..rows {
            prop_assert_eq!(batch[i], p.action_logprob(&encodings[i], &actions[i]).unwrap());
        }
    }

    #[test]
    fn greedy_is_seed_independent(seed in 0u64..1000, x in prop::collection::vec(-1.0f64..1.0, 16)) {
        let p = mlp(4, seed);
        let x = &x[..p.encoder().dim()];
        let a = p.greedy_action(x).unwrap();
        prop_assert_eq!(a, p.greedy_action(x).unwrap());
    }
}
