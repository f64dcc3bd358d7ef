//! Imitation learning on demonstrations (pretraining and fine-tuning), and
//! few-shot subsetting of demo datasets.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, NodeId, Op, OptimizerState, Tape};
use crate::envsuite::{Action, Demonstration};
use crate::error::{Error, Result};
use crate::policy::{Head, Policy};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Pretrain,
    Sft,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub demos: Vec<Demonstration>,
    pub provenance: Provenance,
    pub shots_per_task: Option<usize>,
}

impl DemoDataset {
    pub fn new(demos: Vec<Demonstration>, provenance: Provenance) -> Self {
        DemoDataset {
            demos,
            provenance,
            shots_per_task: None,
        }
    }

    /// Like [`DemoDataset::new`] but checks every task has exactly `shots` demos.
    pub fn with_shots(demos: Vec<Demonstration>, provenance: Provenance, shots: usize) -> Result<Self> {
        for (task, count) in count_by_task(&demos) {
            if count != shots {
                return Err(Error::Dataset(format!("task {task} has {count} demos, expected {shots}")));
            }
        }
        Ok(DemoDataset {
            demos,
            provenance,
            shots_per_task: Some(shots),
        })
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }
}

fn count_by_task(demos: &[Demonstration]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for d in demos {
        *counts.entry(d.context.task_id).or_insert(0) += 1;
    }
    counts
}

/// Uniformly samples `shots` demos per task without replacement. Selected
/// demos keep their original relative order.
pub fn few_shot_subset(dataset: &DemoDataset, shots: usize, seed: u64) -> Result<DemoDataset> {
    if shots == 0 {
        return Err(Error::Config("shots must be at least 1".into()));
    }
    let mut by_task: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, d) in dataset.demos.iter().enumerate() {
        by_task.entry(d.context.task_id).or_default().push(i);
    }
    let mut keep = Vec::new();
    for (task, members) in &by_task {
        if members.len() < shots {
            return Err(Error::Dataset(format!(
                "task {task} has {} demos, fewer than {shots} shots",
                members.len()
            )));
        }
        let mut r = rng::stream(seed, &[0x73_686f_7473, *task as u64]);
        keep.extend(index::sample(&mut r, members.len(), shots).into_iter().map(|j| members[j]));
    }
    keep.sort_unstable();
    DemoDataset::with_shots(
        keep.into_iter().map(|i| dataset.demos[i].clone()).collect(),
        dataset.provenance,
        shots,
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Nll,
    L1,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Record elapsed milliseconds in the log; off keeps logs reproducible.
    pub log_wall_time: bool,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            steps: 2000,
            batch_size: 64,
            lr: 1e-3,
            loss: LossKind::Nll,
            seed: 0,
            log_wall_time: false,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self, head: Head) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        check_loss(self.loss, head)
    }
}

fn check_loss(loss: LossKind, head: Head) -> Result<()> {
    match (loss, head) {
        (LossKind::Nll, _) | (LossKind::L1 | LossKind::Mse, Head::Regression { .. }) => Ok(()),
        (kind, head) => Err(Error::Config(format!(
            "{kind:?} loss needs a regression head, policy is {}",
            head.family_name()
        ))),
    }
}

/// Flattened per-step training pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepPairs {
    pub encodings: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
}

impl StepPairs {
    pub fn from_demos(policy: &Policy, demos: &[Demonstration]) -> Result<Self> {
        let mut pairs = StepPairs::default();
        for d in demos {
            pairs
                .encodings
                .extend(policy.encoder().episode(d.context.task_id, &d.observations, &d.actions)?);
            pairs.actions.extend(d.actions.iter().cloned());
        }
        Ok(pairs)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn select(&self, rows: &[usize]) -> StepPairs {
        StepPairs {
            encodings: rows.iter().map(|&i| self.encodings[i].clone()).collect(),
            actions: rows.iter().map(|&i| self.actions[i].clone()).collect(),
        }
    }
}

/// Records the mean imitation loss of a batch on `tape`.
pub fn record_imitation_loss<'a, T: Tape<'a>>(
    tape: &mut T,
    policy: &'a Policy,
    batch: &StepPairs,
    kind: LossKind,
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::Dataset("imitation loss of an empty batch".into()));
    }
    check_loss(kind, policy.head())?;
    match kind {
        LossKind::Nll => {
            let lp = policy.record_log_probs(tape, &batch.encodings, &batch.actions)?;
            let mean = tape.apply(Op::Mean, &[lp])?;
            tape.apply(Op::Neg, &[mean])
        }
        LossKind::L1 | LossKind::Mse => {
            let Head::Regression { dim, .. } = policy.head() else { unreachable!() };
            let mean = policy.record_mean(tape, &batch.encodings)?;
            let mut values = Vec::with_capacity(batch.len() * dim);
            for a in &batch.actions {
                match a.continuous() {
                    Some(v) if v.len() == dim => values.extend_from_slice(v),
                    _ => return Err(Error::ActionMismatch(format!("{a:?} for a {dim}-d head"))),
                }
            }
            let target = tape.input(crate::diffcore::Tensor::matrix(batch.len(), dim, values)?)?;
            let diff = tape.apply(Op::Sub, &[target, mean])?;
            let err = tape.apply(if kind == LossKind::L1 { Op::Abs } else { Op::Square }, &[diff])?;
            tape.apply(Op::Mean, &[err])
        }
    }
}

/// Value of the mean imitation loss.
pub fn imitation_loss(policy: &Policy, batch: &StepPairs, kind: LossKind) -> Result<f64> {
    let mut tape = crate::diffcore::Eager::new();
    let out = record_imitation_loss(&mut tape, policy, batch, kind)?;
    tape.value(out).item()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: u64,
}

/// Per-step training log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

/// Minibatch Adam on the imitation loss for `config.steps` steps. Pairs are
/// reshuffled whenever a pass over them completes.
pub fn train_supervised(policy: &mut Policy, dataset: &DemoDataset, config: &SupervisedConfig) -> Result<TrainLog> {
    config.validate(policy.head())?;
    if dataset.is_empty() {
        return Err(Error::Dataset("no demonstrations to train on".into()));
    }
    let pairs = StepPairs::from_demos(policy, &dataset.demos)?;
    if pairs.is_empty() {
        return Err(Error::Dataset("demonstrations contain no steps".into()));
    }
    let start = Instant::now();
    let mut r = rng::stream(config.seed, &[0x7375_7076]);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let mut opt = OptimizerState::adam(config.lr);
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let mut rows = Vec::with_capacity(config.batch_size);
        while rows.len() < config.batch_size.min(pairs.len()) {
            if cursor == order.len() {
                order.shuffle(&mut r);
                cursor = 0;
            }
            rows.push(order[cursor]);
            cursor += 1;
        }
        let batch = pairs.select(&rows);
        let loss = {
            let mut g = Graph::new();
            let out = record_imitation_loss(&mut g, policy, &batch, config.loss)?;
            let loss = g.value(out).item()?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("supervised loss at step {step}")));
            }
            g.backward()?;
            let params = policy.params_mut();
            params.zero_grad();
            params.accumulate_from(&g)?;
            loss
        };
        opt.apply(policy.params_mut())?;
        log.records.push(LogRecord {
            step,
            loss,
            wall_ms: if config.log_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        });
    }
    Ok(log)
}
