//! Stochastic policies with a tokenized (categorical) or regression
//! (Gaussian / Laplace) action head over a tanh MLP trunk.

mod encoding;
pub(crate) mod net;
mod scale;

use std::ops::Deref;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Checkpoint, Eager, NodeId, Op, ParamSet, Tape, Tensor};
use crate::envsuite::{Action, ActionSpace, Suite};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub use encoding::Encoder;
pub use scale::{fit_scale_head, ScaleFit};

/// Lower bound added to the softplus scale output.
pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    #[default]
    Gaussian,
    Laplace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Tokenized { vocab: usize },
    Regression { dim: usize, density: Density },
}

impl Head {
    pub fn family_name(self) -> &'static str {
        match self {
            Head::Tokenized { .. } => "tokenized",
            Head::Regression { density: Density::Gaussian, .. } => "gaussian",
            Head::Regression { density: Density::Laplace, .. } => "laplace",
        }
    }
}

/// Construction options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    /// Number of previous actions in the encoding.
    pub window: usize,
    /// Start the output layer at zero: uniform logits or zero mean.
    pub zero_init_head: bool,
    /// Initial σ of the regression scale head.
    pub init_scale: f64,
    pub density: Density,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: vec![64, 64],
            window: 1,
            zero_init_head: false,
            init_scale: 0.3,
            density: Density::Gaussian,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub encoder: Encoder,
    pub hidden: Vec<usize>,
    pub head: Head,
}

/// Which optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Trunk,
    Head,
    Scale,
}

/// Parameter indices of each layer as `(weight, bias)`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub trunk: Vec<(usize, usize)>,
    pub head: (usize, usize),
    pub scale: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    spec: PolicySpec,
    params: ParamSet,
    layout: Layout,
}

fn inverse_softplus(y: f64) -> f64 {
    // ln(e^y − 1), stable for large y
    y + (-(-y).exp_m1()).ln()
}

impl Policy {
    pub fn new(spec: PolicySpec, config: &PolicyConfig) -> Result<Self> {
        if spec.encoder.action_space.dim() == 0 {
            return Err(Error::Config("empty action space".into()));
        }
        match (spec.head, spec.encoder.action_space) {
            (Head::Tokenized { vocab }, ActionSpace::Discrete(v)) if vocab == v => {}
            (Head::Regression { dim, .. }, ActionSpace::Continuous(d)) if dim == d => {}
            (h, a) => return Err(Error::Config(format!("head {h:?} does not fit action space {a:?}"))),
        }
        if spec.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        if !(config.init_scale > SCALE_FLOOR) {
            return Err(Error::Config(format!("init_scale must exceed {SCALE_FLOOR}")));
        }
        let mut r = rng::stream(config.seed, &[0x706f_6c69_6379]);
        let mut params = ParamSet::new();
        let mut glorot = |name: String, fan_in: usize, fan_out: usize, zero: bool, params: &mut ParamSet| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let values = (0..fan_in * fan_out)
                .map(|_| if zero { 0.0 } else { dist.sample(&mut r) })
                .collect();
            let w = params.push(format!("{name}.w"), Tensor::matrix(fan_in, fan_out, values).expect("sized"));
            let b = params.push(format!("{name}.b"), Tensor::zeros(vec![1, fan_out]));
            (w, b)
        };
        let mut width = spec.encoder.dim();
        let mut trunk = Vec::new();
        for (i, &h) in spec.hidden.iter().enumerate() {
            trunk.push(glorot(format!("trunk.{i}"), width, h, false, &mut params));
            width = h;
        }
        let out = match spec.head {
            Head::Tokenized { vocab } => vocab,
            Head::Regression { dim, .. } => dim,
        };
        let head = glorot("head".into(), width, out, config.zero_init_head, &mut params);
        let scale = match spec.head {
            Head::Tokenized { .. } => None,
            Head::Regression { dim, .. } => {
                let (w, b) = glorot("scale".into(), width, dim, true, &mut params);
                let bias = inverse_softplus(config.init_scale - SCALE_FLOOR);
                params.get_mut(b).values_mut().fill(bias);
                Some((w, b))
            }
        };
        Ok(Policy {
            spec,
            params,
            layout: Layout { trunk, head, scale },
        })
    }

    /// A policy sized for `suite`: tokenized for discrete actions, regression
    /// with `config.density` for continuous ones.
    pub fn for_suite(suite: &Suite, config: &PolicyConfig) -> Result<Self> {
        let space = suite.action_space();
        let head = match space {
            ActionSpace::Discrete(vocab) => Head::Tokenized { vocab },
            ActionSpace::Continuous(dim) => Head::Regression {
                dim,
                density: config.density,
            },
        };
        let spec = PolicySpec {
            encoder: Encoder::new(suite.observation_dim(), suite.n_goals(), space, config.window),
            hidden: config.hidden.clone(),
            head,
        };
        Policy::new(spec, config)
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn encoder(&self) -> &Encoder {
        &self.spec.encoder
    }

    pub fn head(&self) -> Head {
        self.spec.head
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_group(&self, index: usize) -> ParamGroup {
        let is = |pair: (usize, usize)| pair.0 == index || pair.1 == index;
        if is(self.layout.head) {
            ParamGroup::Head
        } else if self.layout.scale.is_some_and(is) {
            ParamGroup::Scale
        } else {
            ParamGroup::Trunk
        }
    }

    /// Immutable shared copy used as the sampling policy.
    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot(Arc::new(self.clone()))
    }

    /// Records the per-row log-probabilities of `actions` as a `[m, 1]` node,
    /// with parameters as leaves of `tape`.
    pub fn record_log_probs<'a, T: Tape<'a>>(
        &'a self,
        tape: &mut T,
        encodings: &[Vec<f64>],
        actions: &[Action],
    ) -> Result<NodeId> {
        if encodings.len() != actions.len() {
            return Err(Error::LengthMismatch(format!(
                "{} encodings for {} actions",
                encodings.len(),
                actions.len()
            )));
        }
        let x = tape.input(net::stack(encodings, self.encoder().dim())?)?;
        let fwd = net::forward(tape, self, x)?;
        net::action_log_probs(tape, self, &fwd, actions)
    }

    /// Records the mean head output (`[m, dim]`) for regression policies.
    pub fn record_mean<'a, T: Tape<'a>>(&'a self, tape: &mut T, encodings: &[Vec<f64>]) -> Result<NodeId> {
        let x = tape.input(net::stack(encodings, self.encoder().dim())?)?;
        let fwd = net::forward(tape, self, x)?;
        match fwd.head {
            net::HeadNodes::Regression { mean, .. } => Ok(mean),
            net::HeadNodes::Tokens { .. } => Err(Error::ActionMismatch("tokenized policies have no mean head".into())),
        }
    }

    pub fn log_probs(&self, encodings: &[Vec<f64>], actions: &[Action]) -> Result<Vec<f64>> {
        let mut tape = Eager::new();
        let out = self.record_log_probs(&mut tape, encodings, actions)?;
        Ok(tape.value(out).values().to_vec())
    }

    pub fn action_logprob(&self, encoding: &[f64], action: &Action) -> Result<f64> {
        Ok(self.log_probs(&[encoding.to_vec()], std::slice::from_ref(action))?[0])
    }

    /// Head outputs for a batch of encodings.
    pub fn head_outputs(&self, encodings: &[Vec<f64>]) -> Result<HeadOutputs> {
        let mut tape = Eager::new();
        let x = tape.input(net::stack(encodings, self.encoder().dim())?)?;
        let fwd = net::forward(&mut tape, self, x)?;
        let rows = |id: NodeId| -> Result<Vec<Vec<f64>>> {
            let t = tape.value(id);
            if t.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("policy output".into()));
            }
            Ok(t.values().chunks(t.cols().max(1)).map(<[f64]>::to_vec).collect())
        };
        Ok(match fwd.head {
            net::HeadNodes::Tokens { log_probs } => HeadOutputs::Tokens {
                log_probs: rows(log_probs)?,
            },
            net::HeadNodes::Regression { mean, sigma } => HeadOutputs::Regression {
                mean: rows(mean)?,
                sigma: rows(sigma)?,
            },
        })
    }

    /// Draws one action per encoding, each from its own stream, and returns it
    /// with its exact log-probability under this policy.
    pub fn sample_batch(&self, encodings: &[Vec<f64>], rngs: &mut [&mut Rng]) -> Result<Vec<(Action, f64)>> {
        if encodings.len() != rngs.len() {
            return Err(Error::LengthMismatch(format!(
                "{} encodings for {} random streams",
                encodings.len(),
                rngs.len()
            )));
        }
        let actions: Vec<Action> = match self.head_outputs(encodings)? {
            HeadOutputs::Tokens { log_probs } => log_probs
                .iter()
                .zip(rngs.iter_mut())
                .map(|(lp, r)| Action::Token(sample_categorical(lp, r)))
                .collect(),
            HeadOutputs::Regression { mean, sigma } => {
                let density = match self.spec.head {
                    Head::Regression { density, .. } => density,
                    Head::Tokenized { .. } => unreachable!(),
                };
                mean.iter()
                    .zip(&sigma)
                    .zip(rngs.iter_mut())
                    .map(|((mu, s), r)| {
                        Action::Continuous(
                            mu.iter()
                                .zip(s)
                                .map(|(&m, &s)| m + s * standard_draw(density, r))
                                .collect(),
                        )
                    })
                    .collect()
            }
        };
        let log_probs = self.log_probs(encodings, &actions)?;
        if let Some(lp) = log_probs.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sampled log-probability {lp}")));
        }
        Ok(actions.into_iter().zip(log_probs).collect())
    }

    pub fn sample_action(&self, encoding: &[f64], r: &mut Rng) -> Result<(Action, f64)> {
        Ok(self.sample_batch(&[encoding.to_vec()], &mut [r])?.remove(0))
    }

    /// Sum of per-step log-probabilities of an episode, with encodings rebuilt
    /// from the stored observations (one more than actions).
    pub fn sequence_logprob(&self, goal: usize, observations: &[Vec<f64>], actions: &[Action]) -> Result<f64> {
        let encodings = self.encoder().episode(goal, observations, actions)?;
        if actions.is_empty() {
            return Ok(0.0);
        }
        let mut tape = Eager::new();
        let rows = self.record_log_probs(&mut tape, &encodings, actions)?;
        let total = tape.apply(Op::SegmentSum(vec![actions.len()]), &[rows])?;
        tape.value(total).item()
    }

    /// Argmax token (lowest index on ties) or the mean action.
    pub fn greedy_action(&self, encoding: &[f64]) -> Result<Action> {
        Ok(match self.head_outputs(&[encoding.to_vec()])? {
            HeadOutputs::Tokens { log_probs } => Action::Token(argmax(&log_probs[0])),
            HeadOutputs::Regression { mut mean, .. } => Action::Continuous(mean.remove(0)),
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::new(self.params.clone())
            .with_meta("head", self.spec.head.family_name())
            .with_meta("spec", serde_json::to_string(&self.spec)?))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec_text = ckpt
            .meta
            .get("spec")
            .ok_or_else(|| Error::Checkpoint("missing policy spec".into()))?;
        let spec: PolicySpec = serde_json::from_str(spec_text)?;
        if ckpt.meta.get("head").map(String::as_str) != Some(spec.head.family_name()) {
            return Err(Error::Checkpoint("head family does not match the policy spec".into()));
        }
        let mut policy = Policy::new(spec, &PolicyConfig::default())?;
        if policy.params.len() != ckpt.params.len() {
            return Err(Error::Checkpoint("parameter count does not match the policy spec".into()));
        }
        for i in 0..policy.params.len() {
            let (name, stored) = (policy.params.name(i).to_string(), ckpt.params.get(i));
            if ckpt.params.name(i) != name || stored.shape() != policy.params.get(i).shape() {
                return Err(Error::Checkpoint(format!("tensor `{name}` missing or misshapen")));
            }
            *policy.params.get_mut(i) = stored.clone();
        }
        Ok(policy)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadOutputs {
    Tokens { log_probs: Vec<Vec<f64>> },
    Regression { mean: Vec<Vec<f64>>, sigma: Vec<Vec<f64>> },
}

/// Frozen copy of a policy, cheap to share across rollout workers.
#[derive(Clone, Debug)]
pub struct PolicySnapshot(Arc<Policy>);

impl Deref for PolicySnapshot {
    type Target = Policy;
    fn deref(&self) -> &Policy {
        &self.0
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a categorical given log-probabilities.
fn sample_categorical(log_probs: &[f64], r: &mut Rng) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum; take the last likely token
    log_probs.iter().rposition(|lp| lp.exp() > 0.0).unwrap_or(log_probs.len() - 1)
}

/// Zero-mean, unit-scale draw of the given family.
fn standard_draw(density: Density, r: &mut Rng) -> f64 {
    match density {
        Density::Gaussian => StandardNormal.sample(r),
        Density::Laplace => {
            let u: f64 = r.random::<f64>() - 0.5;
            -u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
        }
    }
}

#[cfg(test)]
mod tests;
