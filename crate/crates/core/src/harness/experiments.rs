use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifacts::{create_dir, mean, std_dev, write_csv};
use super::config::ExperimentConfig;
use super::pipeline::Run;
use crate::envsuite::{base_position_std, extract_contexts, Context, Demonstration, Pairing};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rloo_ppo::{RiptConfig, RiptOutcome};

/// A seed's policy after Stages 1 and 2, ready for post-training variants.
pub struct Prepared {
    pub run: Run,
    pub policy: Policy,
    pub demos: Vec<Demonstration>,
    pub sr_sft: f64,
}

/// Pretrain and fine-tune on `shots` demonstrations per task (the whole pool
/// when `None`), then evaluate.
pub fn prepare(config: &ExperimentConfig, seed: u64, shots: Option<usize>, dir: &Path) -> Result<Prepared> {
    let run = Run::new(config, seed, dir)?;
    let mut policy = run.init_policy()?;
    run.pretrain(&mut policy)?;
    let demos = run.sft_demos(shots)?;
    run.sft(&mut policy, &demos, "sft")?;
    let sr_sft = run.evaluate(&policy, "sft")?.mean_sr;
    Ok(Prepared {
        run,
        policy,
        demos,
        sr_sft,
    })
}

impl Prepared {
    /// Post-trains a copy of the SFT policy and evaluates it.
    pub fn ript_variant(&self, contexts: &[Context], config: &RiptConfig, tag: &str) -> Result<(f64, RiptOutcome)> {
        let mut policy = self.policy.clone();
        let outcome = self.run.ript(&mut policy, contexts, config, tag)?;
        let sr = self.run.evaluate(&policy, tag)?.mean_sr;
        Ok((sr, outcome))
    }

    pub fn default_contexts(&self) -> Result<Vec<Context>> {
        self.run.contexts(&self.demos, self.run.config.data.extra_contexts_per_task)
    }
}

/// Mean and sample std of a column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        Stat {
            mean: mean(values),
            std: std_dev(values),
        }
    }
}

/// Per-step curve point of a post-training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub variant: String,
    pub seed: u64,
    pub step: usize,
    pub mean_reward: f64,
    pub eval_sr: Option<f64>,
    pub zero_adv_samples: usize,
}

fn curve(variant: &str, seed: u64, outcome: &RiptOutcome) -> Vec<CurvePoint> {
    outcome
        .metrics
        .iter()
        .map(|m| CurvePoint {
            variant: variant.into(),
            seed,
            step: m.step,
            mean_reward: m.mean_reward,
            eval_sr: m.eval_sr,
            zero_adv_samples: m.zero_adv_samples,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotRun {
    pub shots: usize,
    pub seed: u64,
    pub sr_sft: f64,
    pub sr_ript: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotRow {
    pub shots: usize,
    pub sft_mean: f64,
    pub sft_std: f64,
    pub ript_mean: f64,
    pub ript_std: f64,
}

/// SFT and SFT + RIPT for each shot count, from the same SFT checkpoint.
/// Writes `few_shot.csv` (one row per shot count) and `few_shot_runs.csv`.
pub fn few_shot_sweep(config: &ExperimentConfig, shots: &[usize], out: &Path) -> Result<Vec<FewShotRow>> {
    if shots.is_empty() {
        return Err(Error::Config("shots list is empty".into()));
    }
    create_dir(out)?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &k in shots {
        let mut sft = Vec::new();
        let mut ript = Vec::new();
        for &seed in &config.seeds {
            let prep = prepare(config, seed, Some(k), &out.join(format!("shots{k}/seed{seed}")))?;
            let (sr, _) = prep.ript_variant(&prep.default_contexts()?, &prep.run.config.ript, "ript")?;
            runs.push(FewShotRun {
                shots: k,
                seed,
                sr_sft: prep.sr_sft,
                sr_ript: sr,
            });
            sft.push(prep.sr_sft);
            ript.push(sr);
        }
        let (s, r) = (Stat::of(&sft), Stat::of(&ript));
        rows.push(FewShotRow {
            shots: k,
            sft_mean: s.mean,
            sft_std: s.std,
            ript_mean: r.mean,
            ript_std: r.std,
        });
    }
    write_csv(&out.join("few_shot_runs.csv"), &runs)?;
    write_csv(&out.join("few_shot.csv"), &rows)?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Same goal, different layout: scenario 0 → scenario 1.
    CrossScenario,
    /// Same layout, different goal: task `2i` → task `2i + 1`.
    CrossGoal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRun {
    pub mode: TransferMode,
    pub pair: usize,
    pub source_task: usize,
    pub target_task: usize,
    pub shots: usize,
    pub seed: u64,
    pub sr_sft: f64,
    pub sr_ript: f64,
    pub ript_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub mode: TransferMode,
    pub shots: usize,
    pub sft_mean: f64,
    pub sft_std: f64,
    pub ript_mean: f64,
    pub ript_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferCurvePoint {
    pub mode: TransferMode,
    pub shots: usize,
    pub step: usize,
    /// Mean held-out SR over pairs and seeds at this step.
    pub mean_sr: f64,
    pub runs: usize,
}

/// The (source, target) pairs a suite offers for `mode`, as
/// `(source task, source scenario, target task, target scenario)`.
pub fn transfer_pairs(config: &ExperimentConfig, mode: TransferMode) -> Result<Vec<(usize, usize, usize, usize)>> {
    let suite = &config.suite;
    match mode {
        TransferMode::CrossScenario => {
            if suite.scenarios < 2 {
                return Err(Error::Config("cross-scenario transfer needs scenarios >= 2".into()));
            }
            Ok((0..suite.n_tasks).map(|t| (t, 0, t, 1)).collect())
        }
        TransferMode::CrossGoal => {
            if suite.pairing != Pairing::CrossGoal {
                return Err(Error::Config("cross-goal transfer needs pairing = \"cross_goal\"".into()));
            }
            Ok((0..suite.n_tasks / 2).map(|i| (2 * i, 0, 2 * i + 1, 0)).collect())
        }
    }
}

/// Stage 1 on the source variant, Stage 2 on `shots` target demos, Stage 3
/// on target training contexts, evaluation on held-out target contexts. Each
/// pair is trained separately. Writes `transfer_runs.csv`, `transfer.csv`
/// and `transfer_curves.csv` (the latter needs `eval.interval > 0`).
pub fn transfer_experiment(
    config: &ExperimentConfig,
    mode: TransferMode,
    shots: &[usize],
    out: &Path,
) -> Result<Vec<TransferRow>> {
    let pairs = transfer_pairs(config, mode)?;
    create_dir(out)?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &k in shots {
        let mut sft = Vec::new();
        let mut ript = Vec::new();
        let mut by_step: Vec<Vec<f64>> = Vec::new();
        for (pair, &(src, src_scen, dst, dst_scen)) in pairs.iter().enumerate() {
            let mut cfg = config.clone();
            cfg.data.pretrain_tasks = vec![src];
            cfg.data.pretrain_scenario = src_scen;
            cfg.data.target_tasks = vec![dst];
            cfg.data.target_scenario = dst_scen;
            for &seed in &config.seeds {
                let dir = out.join(format!("shots{k}/pair{pair}/seed{seed}"));
                let prep = prepare(&cfg, seed, Some(k), &dir)?;
                let (sr, outcome) = prep.ript_variant(&prep.default_contexts()?, &prep.run.config.ript, "ript")?;
                for m in &outcome.metrics {
                    if let Some(v) = m.eval_sr {
                        if by_step.len() <= m.step {
                            by_step.resize(m.step + 1, Vec::new());
                        }
                        by_step[m.step].push(v);
                    }
                }
                runs.push(TransferRun {
                    mode,
                    pair,
                    source_task: src,
                    target_task: dst,
                    shots: k,
                    seed,
                    sr_sft: prep.sr_sft,
                    sr_ript: sr,
                    ript_steps: outcome.metrics.len(),
                });
                sft.push(prep.sr_sft);
                ript.push(sr);
            }
        }
        for (step, values) in by_step.iter().enumerate().filter(|(_, v)| !v.is_empty()) {
            curves.push(TransferCurvePoint {
                mode,
                shots: k,
                step,
                mean_sr: mean(values),
                runs: values.len(),
            });
        }
        let (s, r) = (Stat::of(&sft), Stat::of(&ript));
        rows.push(TransferRow {
            mode,
            shots: k,
            sft_mean: s.mean,
            sft_std: s.std,
            ript_mean: r.mean,
            ript_std: r.std,
        });
    }
    write_csv(&out.join("transfer_runs.csv"), &runs)?;
    write_csv(&out.join("transfer.csv"), &rows)?;
    write_csv(&out.join("transfer_curves.csv"), &curves)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicSamplingRow {
    pub seed: u64,
    pub sr_sft: f64,
    pub sr_on: f64,
    pub sr_off: f64,
    /// Zero-advantage samples admitted over the whole run.
    pub zero_adv_on: usize,
    pub zero_adv_off: usize,
    pub steps_on: usize,
    pub steps_off: usize,
}

/// Rejection on vs. off from the same SFT checkpoint with identical seeds and
/// budget. Writes `dynamic_sampling.csv` and `dynamic_sampling_curves.csv`.
pub fn ablation_dynamic_sampling(config: &ExperimentConfig, out: &Path) -> Result<Vec<DynamicSamplingRow>> {
    create_dir(out)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &seed in &config.seeds {
        let prep = prepare(config, seed, config.data.sft_shots, &out.join(format!("seed{seed}")))?;
        let contexts = prep.default_contexts()?;
        let on = RiptConfig {
            dynamic_sampling: true,
            ..prep.run.config.ript.clone()
        };
        let off = RiptConfig {
            dynamic_sampling: false,
            ..on.clone()
        };
        let (sr_on, a) = prep.ript_variant(&contexts, &on, "ript_on")?;
        let (sr_off, b) = prep.ript_variant(&contexts, &off, "ript_off")?;
        let zeros = |o: &RiptOutcome| o.metrics.iter().map(|m| m.zero_adv_samples).sum();
        curves.extend(curve("on", seed, &a));
        curves.extend(curve("off", seed, &b));
        rows.push(DynamicSamplingRow {
            seed,
            sr_sft: prep.sr_sft,
            sr_on,
            sr_off,
            zero_adv_on: zeros(&a),
            zero_adv_off: zeros(&b),
            steps_on: a.metrics.len(),
            steps_off: b.metrics.len(),
        });
    }
    write_csv(&out.join("dynamic_sampling.csv"), &rows)?;
    write_csv(&out.join("dynamic_sampling_curves.csv"), &curves)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    /// Context-set size per task, or noise scale.
    pub value: f64,
    pub seed: u64,
    pub sr_sft: f64,
    pub sr_ript: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub sft_mean: f64,
    pub ript_mean: f64,
    pub ript_std: f64,
}

fn summarize(values: &[f64], runs: &[SweepRun]) -> Vec<SweepRow> {
    values
        .iter()
        .map(|&v| {
            let cell: Vec<&SweepRun> = runs.iter().filter(|r| r.value == v).collect();
            let sft: Vec<f64> = cell.iter().map(|r| r.sr_sft).collect();
            let ript: Vec<f64> = cell.iter().map(|r| r.sr_ript).collect();
            let s = Stat::of(&ript);
            SweepRow {
                value: v,
                sft_mean: mean(&sft),
                ript_mean: s.mean,
                ript_std: s.std,
            }
        })
        .collect()
}

/// Post-training from one SFT checkpoint per seed with `size` contexts per
/// task: the demo contexts topped up with action-free training states.
/// Writes `context_size.csv` and `context_size_runs.csv`.
pub fn ablation_context_size(config: &ExperimentConfig, sizes: &[usize], out: &Path) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Config("context sizes must be non-empty and positive".into()));
    }
    create_dir(out)?;
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let prep = prepare(config, seed, config.data.sft_shots, &out.join(format!("seed{seed}")))?;
        for &size in sizes {
            let contexts = prep.run.contexts_of_size(&prep.demos, size)?;
            let (sr, _) = prep.ript_variant(&contexts, &prep.run.config.ript, &format!("ript_ctx{size}"))?;
            runs.push(SweepRun {
                value: size as f64,
                seed,
                sr_sft: prep.sr_sft,
                sr_ript: sr,
            });
        }
    }
    let values: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let rows = summarize(&values, &runs);
    write_csv(&out.join("context_size_runs.csv"), &runs)?;
    write_csv(&out.join("context_size.csv"), &rows)?;
    Ok(rows)
}

/// Post-training with each group member's initial state perturbed at every
/// scale in `scales`, from one SFT checkpoint per seed. Writes `noise.csv`
/// and `noise_runs.csv`.
pub fn ablation_noise(config: &ExperimentConfig, scales: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    if scales.is_empty() {
        return Err(Error::Config("noise scale list is empty".into()));
    }
    create_dir(out)?;
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let prep = prepare(config, seed, config.data.sft_shots, &out.join(format!("seed{seed}")))?;
        let contexts = prep.default_contexts()?;
        // Base spread measured once over the whole expert pool, not the
        // (possibly tiny) post-training context set.
        let base_std = match prep.run.config.ript.noise_base_std {
            Some(s) => s,
            None => base_position_std(&extract_contexts(&prep.run.sft_demos(None)?)),
        };
        for &scale in scales {
            let ript = RiptConfig {
                noise_scale: scale,
                noise_base_std: Some(base_std),
                ..prep.run.config.ript.clone()
            };
            let (sr, _) = prep.ript_variant(&contexts, &ript, &format!("ript_noise{scale}"))?;
            runs.push(SweepRun {
                value: scale,
                seed,
                sr_sft: prep.sr_sft,
                sr_ript: sr,
            });
        }
    }
    let rows = summarize(scales, &runs);
    write_csv(&out.join("noise_runs.csv"), &runs)?;
    write_csv(&out.join("noise.csv"), &rows)?;
    Ok(rows)
}
