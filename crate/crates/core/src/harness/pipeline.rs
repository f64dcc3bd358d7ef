use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::{create_dir, write_csv, write_json, write_jsonl, JsonlWriter};
use super::config::ExperimentConfig;
use super::eval::{evaluate, EvalReport};
use crate::envsuite::{
    extract_contexts, load_suite, make_suite, save_suite, scripted_expert, write_demos, Context, Demonstration,
    Split, Suite,
};
use crate::diffcore::Checkpoint;
use crate::error::{Error, Result};
use crate::policy::{fit_scale_head, Head, Policy, ScaleFit};
use crate::rloo_ppo::{ript_train_with, RiptConfig, RiptObserver, RiptOutcome, RiptStatus, StepMetrics};
use crate::supervised::{few_shot_subset, train_supervised, DemoDataset, Provenance, TrainLog};

pub fn build_suite(config: &ExperimentConfig) -> Result<Suite> {
    match &config.suite_file {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Config(format!("suite file {} does not exist", path.display())));
            }
            load_suite(path)
        }
        None => make_suite(&config.suite),
    }
}

/// Expert demonstrations on the first `per_task` training contexts of each task.
pub fn generate_demos(
    suite: &Suite,
    scenario: usize,
    tasks: &[usize],
    per_task: usize,
    expert: &crate::envsuite::ExpertConfig,
) -> Result<Vec<Demonstration>> {
    let mut demos = Vec::with_capacity(tasks.len() * per_task);
    for &t in tasks {
        for ctx in suite.contexts(t, scenario, Split::Train, per_task)? {
            demos.push(scripted_expert(suite.task_for(&ctx)?, &ctx, expert)?);
        }
    }
    Ok(demos)
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    Policy::from_checkpoint(&Checkpoint::load(path)?)
}

fn context_key(c: &Context) -> (usize, usize, Vec<i64>) {
    (c.task_id, c.scenario_id, c.state.key())
}

/// One seed's working state: the seeded config, the suite and an output
/// directory. Every stage writes its artifacts there as it goes, so a failed
/// stage leaves the earlier ones in place.
pub struct Run {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub suite: Suite,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<Run> {
        config.validate()?;
        let suite = build_suite(config)?;
        create_dir(dir)?;
        save_suite(&dir.join("suite.toml"), &suite)?;
        let seeded = config.for_seed(seed);
        std::fs::write(dir.join("config.toml"), seeded.to_toml()?).map_err(|e| Error::io(dir, e))?;
        Ok(Run {
            config: seeded,
            seed,
            suite,
            dir: dir.to_path_buf(),
        })
    }

    fn tasks_or_all(&self, tasks: &[usize]) -> Result<Vec<usize>> {
        let all = self.suite.task_ids();
        if tasks.is_empty() {
            return Ok(all);
        }
        match tasks.iter().find(|t| !all.contains(t)) {
            Some(t) => Err(Error::Config(format!("task {t} is not in the suite"))),
            None => Ok(tasks.to_vec()),
        }
    }

    pub fn target_tasks(&self) -> Result<Vec<usize>> {
        self.tasks_or_all(&self.config.data.target_tasks)
    }

    pub fn eval_contexts(&self) -> Result<Vec<Context>> {
        let mut out = Vec::new();
        for t in self.target_tasks()? {
            out.extend(self.suite.contexts(
                t,
                self.config.data.target_scenario,
                Split::Test,
                self.config.eval.contexts_per_task,
            )?);
        }
        Ok(out)
    }

    pub fn init_policy(&self) -> Result<Policy> {
        Policy::for_suite(&self.suite, &self.config.policy)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn save_policy(&self, policy: &Policy, tag: &str) -> Result<()> {
        policy.to_checkpoint()?.save(&self.path(&format!("{tag}.ckpt")))
    }

    /// Stage 1. Returns `None` when no pretraining data is configured.
    pub fn pretrain(&self, policy: &mut Policy) -> Result<Option<TrainLog>> {
        let data = &self.config.data;
        if data.pretrain_per_task == 0 {
            return Ok(None);
        }
        let tasks = self.tasks_or_all(&data.pretrain_tasks)?;
        let demos = generate_demos(&self.suite, data.pretrain_scenario, &tasks, data.pretrain_per_task, &data.expert)?;
        write_demos(&self.path("demos_pretrain.jsonl"), &demos)?;
        let log = train_supervised(policy, &DemoDataset::new(demos, Provenance::Pretrain), &self.config.pretrain)?;
        write_jsonl(&self.path("pretrain_log.jsonl"), &log.records)?;
        self.save_policy(policy, "pretrain")?;
        Ok(Some(log))
    }

    /// The SFT pool for the target tasks, optionally cut to `shots` per task.
    pub fn sft_demos(&self, shots: Option<usize>) -> Result<Vec<Demonstration>> {
        let data = &self.config.data;
        let demos = generate_demos(
            &self.suite,
            data.target_scenario,
            &self.target_tasks()?,
            data.sft_pool_per_task,
            &data.expert,
        )?;
        let pool = DemoDataset::with_shots(demos, Provenance::Sft, data.sft_pool_per_task)?;
        Ok(match shots {
            Some(k) => few_shot_subset(&pool, k, ExperimentConfig::shots_seed(self.seed))?.demos,
            None => pool.demos,
        })
    }

    /// Stage 2 followed by the optional scale-head fit.
    pub fn sft(&self, policy: &mut Policy, demos: &[Demonstration], tag: &str) -> Result<(TrainLog, Option<ScaleFit>)> {
        write_demos(&self.path(&format!("demos_{tag}.jsonl")), demos)?;
        let dataset = DemoDataset::new(demos.to_vec(), Provenance::Sft);
        let log = train_supervised(policy, &dataset, &self.config.sft)?;
        write_jsonl(&self.path(&format!("{tag}_log.jsonl")), &log.records)?;
        let fit = match (&self.config.scale_fit, policy.head()) {
            (Some(cfg), Head::Regression { .. }) => {
                let fit = fit_scale_head(policy, demos, cfg.steps, cfg.lr)?;
                let records: Vec<ScaleFitRecord> = fit
                    .losses
                    .iter()
                    .enumerate()
                    .map(|(step, &nll)| ScaleFitRecord { step, nll })
                    .collect();
                write_jsonl(&self.path(&format!("{tag}_scale_fit.jsonl")), &records)?;
                Some(fit)
            }
            _ => None,
        };
        self.save_policy(policy, tag)?;
        Ok((log, fit))
    }

    /// Post-training context set: the demo contexts plus `extra_per_task`
    /// further action-free training initial states per task.
    pub fn contexts(&self, demos: &[Demonstration], extra_per_task: usize) -> Result<Vec<Context>> {
        let mut contexts = extract_contexts(demos);
        if extra_per_task > 0 {
            let mut seen: HashSet<_> = contexts.iter().map(context_key).collect();
            let scenario = self.config.data.target_scenario;
            for t in self.target_tasks()? {
                let pool_size = self.config.data.sft_pool_per_task + 4 * extra_per_task;
                let mut added = 0;
                for ctx in self.suite.contexts(t, scenario, Split::Train, pool_size)? {
                    if added == extra_per_task {
                        break;
                    }
                    if seen.insert(context_key(&ctx)) {
                        contexts.push(ctx);
                        added += 1;
                    }
                }
            }
        }
        Ok(contexts)
    }

    /// Context set of exactly `size` per task: the demo contexts first, then
    /// extra action-free training states.
    pub fn contexts_of_size(&self, demos: &[Demonstration], size: usize) -> Result<Vec<Context>> {
        let all = self.contexts(demos, size)?;
        let mut out = Vec::new();
        for t in self.target_tasks()? {
            let for_task: Vec<Context> = all.iter().filter(|c| c.task_id == t).take(size).cloned().collect();
            if for_task.len() < size {
                return Err(Error::Dataset(format!(
                    "task {t} has only {} distinct training contexts, {size} requested",
                    for_task.len()
                )));
            }
            out.extend(for_task);
        }
        Ok(out)
    }

    /// Errors if any evaluation context coincides with a training context.
    pub fn check_disjoint(&self, training: &[Context]) -> Result<()> {
        let train: HashSet<_> = training.iter().map(context_key).collect();
        match self.eval_contexts()?.iter().find(|c| train.contains(&context_key(c))) {
            Some(c) => Err(Error::Dataset(format!("evaluation context `{}` is also a training context", c.id))),
            None => Ok(()),
        }
    }

    /// Stage 3 with per-step metrics streamed to `{tag}_metrics.jsonl`.
    pub fn ript(&self, policy: &mut Policy, contexts: &[Context], config: &RiptConfig, tag: &str) -> Result<RiptOutcome> {
        self.check_disjoint(contexts)?;
        write_jsonl(&self.path(&format!("{tag}_contexts.jsonl")), contexts)?;
        let mut observer = HarnessObserver {
            run: self,
            tag,
            metrics: JsonlWriter::create(&self.path(&format!("{tag}_metrics.jsonl")))?,
            eval_contexts: if self.config.eval.interval > 0 {
                self.eval_contexts()?
            } else {
                Vec::new()
            },
        };
        let outcome = ript_train_with(policy, &self.suite, contexts, config, &mut observer);
        if outcome.is_err() {
            // The policy was rolled back to the last good snapshot.
            self.save_policy(policy, &format!("{tag}_last_good"))?;
        }
        let outcome = outcome?;
        self.save_policy(policy, tag)?;
        Ok(outcome)
    }

    /// Greedy evaluation on the held-out contexts; writes the report and the
    /// raw episodes.
    pub fn evaluate(&self, policy: &Policy, tag: &str) -> Result<EvalReport> {
        let contexts = self.eval_contexts()?;
        let (report, episodes) =
            evaluate(policy, &self.suite, &contexts, self.config.eval.episodes_per_context, tag, self.seed)?;
        write_json(&self.path(&format!("eval_{tag}.json")), &report)?;
        write_jsonl(&self.path(&format!("episodes_{tag}.jsonl")), &episodes)?;
        Ok(report)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleFitRecord {
    pub step: usize,
    pub nll: f64,
}

struct HarnessObserver<'r> {
    run: &'r Run,
    tag: &'r str,
    metrics: JsonlWriter,
    eval_contexts: Vec<Context>,
}

impl RiptObserver for HarnessObserver<'_> {
    fn evaluate(&mut self, step: usize, policy: &Policy) -> Result<Option<f64>> {
        let every = self.run.config.eval.interval;
        if every == 0 || (step + 1) % every != 0 {
            return Ok(None);
        }
        let episodes = self.run.config.eval.episodes_per_context;
        let (report, _) = evaluate(policy, &self.run.suite, &self.eval_contexts, episodes, self.tag, self.run.seed)?;
        Ok(Some(report.mean_sr))
    }

    fn after_step(&mut self, metrics: &StepMetrics, policy: &Policy) -> Result<()> {
        self.metrics.write(metrics)?;
        let every = self.run.config.checkpoint_interval;
        if every > 0 && (metrics.step + 1) % every == 0 {
            self.run.save_policy(policy, &format!("{}_step{}", self.tag, metrics.step + 1))?;
        }
        Ok(())
    }
}

/// Per-seed summary of a full three-stage run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub sr_pretrain: f64,
    pub sr_sft: f64,
    pub sr_ript: f64,
    pub sft_demos: usize,
    pub contexts: usize,
    pub ript_steps: usize,
    pub ript_status: RiptStatus,
}

/// Pretrain → SFT (→ scale fit) → RIPT for one seed, evaluating at every
/// stage boundary. Without pretraining data, `sr_pretrain` is the SR of the
/// freshly initialized policy.
pub fn run_pipeline(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<(RunSummary, Policy)> {
    let run = Run::new(config, seed, dir)?;
    let mut policy = run.init_policy()?;
    run.pretrain(&mut policy)?;
    let sr_pretrain = run.evaluate(&policy, "pretrain")?.mean_sr;
    let demos = run.sft_demos(run.config.data.sft_shots)?;
    run.sft(&mut policy, &demos, "sft")?;
    let sr_sft = run.evaluate(&policy, "sft")?.mean_sr;
    let contexts = run.contexts(&demos, run.config.data.extra_contexts_per_task)?;
    let outcome = run.ript(&mut policy, &contexts, &run.config.ript, "ript")?;
    let sr_ript = run.evaluate(&policy, "ript")?.mean_sr;
    let summary = RunSummary {
        seed,
        sr_pretrain,
        sr_sft,
        sr_ript,
        sft_demos: demos.len(),
        contexts: contexts.len(),
        ript_steps: outcome.metrics.len(),
        ript_status: outcome.status,
    };
    write_json(&run.path("summary.json"), &summary)?;
    Ok((summary, policy))
}

/// [`run_pipeline`] for every configured seed, in `out/seed{n}`; writes
/// `summary.jsonl` and `summary.csv` at the top level.
pub fn run_all_seeds(config: &ExperimentConfig, out: &Path) -> Result<Vec<RunSummary>> {
    create_dir(out)?;
    let mut rows = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        rows.push(run_pipeline(config, seed, &out.join(format!("seed{seed}")))?.0);
    }
    write_jsonl(&out.join("summary.jsonl"), &rows)?;
    write_csv(&out.join("summary.csv"), &rows)?;
    Ok(rows)
}
