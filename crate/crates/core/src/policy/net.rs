//! Network definition, written once against [`Tape`] so the same code runs
//! under the recording graph and the eager evaluator.

use std::f64::consts::PI;

use super::{Density, Head, Policy, SCALE_FLOOR};
use crate::diffcore::{NodeId, Op, Tape, Tensor};
use crate::envsuite::Action;
use crate::error::{Error, Result};

pub(crate) enum HeadNodes {
    /// Row-wise log-probabilities over the vocabulary.
    Tokens { log_probs: NodeId },
    Regression { mean: NodeId, sigma: NodeId },
}

pub(crate) struct Forward {
    pub features: NodeId,
    pub head: HeadNodes,
}

fn layer<'a, T: Tape<'a>>(t: &mut T, policy: &'a Policy, x: NodeId, w: usize, b: usize) -> Result<NodeId> {
    let w = t.param(w, policy.params.get(w))?;
    let b = t.param(b, policy.params.get(b))?;
    let h = t.apply(Op::MatMul, &[x, w])?;
    t.apply(Op::AddRow, &[h, b])
}

/// Trunk features of a `[m, encoding]` input node.
pub(crate) fn features<'a, T: Tape<'a>>(t: &mut T, policy: &'a Policy, x: NodeId) -> Result<NodeId> {
    let mut h = x;
    for &(w, b) in &policy.layout.trunk {
        let z = layer(t, policy, h, w, b)?;
        h = t.apply(Op::Tanh, &[z])?;
    }
    Ok(h)
}

/// Scale head on top of trunk features: `softplus(z) + floor`.
pub(crate) fn sigma<'a, T: Tape<'a>>(t: &mut T, policy: &'a Policy, features: NodeId) -> Result<NodeId> {
    let (w, b) = policy
        .layout
        .scale
        .ok_or_else(|| Error::ActionMismatch("tokenized policies have no scale head".into()))?;
    let z = layer(t, policy, features, w, b)?;
    let s = t.apply(Op::Softplus, &[z])?;
    t.apply(Op::Offset(SCALE_FLOOR), &[s])
}

pub(crate) fn forward<'a, T: Tape<'a>>(t: &mut T, policy: &'a Policy, x: NodeId) -> Result<Forward> {
    let features = features(t, policy, x)?;
    let (w, b) = policy.layout.head;
    let out = layer(t, policy, features, w, b)?;
    let head = match policy.spec.head {
        Head::Tokenized { .. } => HeadNodes::Tokens {
            log_probs: t.apply(Op::LogSoftmax, &[out])?,
        },
        Head::Regression { .. } => HeadNodes::Regression {
            mean: out,
            sigma: sigma(t, policy, features)?,
        },
    };
    Ok(Forward { features, head })
}

/// Per-row log-density summed over action dimensions, given `a − μ` and `σ`.
pub(crate) fn log_density<'a, T: Tape<'a>>(
    t: &mut T,
    density: Density,
    diff: NodeId,
    sigma: NodeId,
) -> Result<NodeId> {
    let log_sigma = t.apply(Op::Log, &[sigma])?;
    let per_dim = match density {
        Density::Gaussian => {
            let z = t.apply(Op::Div, &[diff, sigma])?;
            let sq = t.apply(Op::Square, &[z])?;
            let half = t.apply(Op::Scale(-0.5), &[sq])?;
            let centered = t.apply(Op::Sub, &[half, log_sigma])?;
            t.apply(Op::Offset(-0.5 * (2.0 * PI).ln()), &[centered])?
        }
        Density::Laplace => {
            let abs = t.apply(Op::Abs, &[diff])?;
            let q = t.apply(Op::Div, &[abs, sigma])?;
            let neg = t.apply(Op::Neg, &[q])?;
            let centered = t.apply(Op::Sub, &[neg, log_sigma])?;
            t.apply(Op::Offset(-std::f64::consts::LN_2), &[centered])?
        }
    };
    t.apply(Op::SumCols, &[per_dim])
}

/// `[m, 1]` node of per-row action log-probabilities.
pub(crate) fn action_log_probs<'a, T: Tape<'a>>(
    t: &mut T,
    policy: &'a Policy,
    forward: &Forward,
    actions: &[Action],
) -> Result<NodeId> {
    match (&forward.head, policy.spec.head) {
        (HeadNodes::Tokens { log_probs }, Head::Tokenized { vocab }) => {
            let tokens = actions
                .iter()
                .map(|a| match a {
                    Action::Token(k) if *k < vocab => Ok(*k),
                    Action::Token(k) => Err(Error::OutOfVocabulary { token: *k, vocab }),
                    other => Err(Error::ActionMismatch(format!("{other:?} for a tokenized head"))),
                })
                .collect::<Result<Vec<_>>>()?;
            t.apply(Op::Gather(tokens), &[*log_probs])
        }
        (HeadNodes::Regression { mean, sigma }, Head::Regression { dim, density }) => {
            let mut values = Vec::with_capacity(actions.len() * dim);
            for a in actions {
                match a {
                    Action::Continuous(v) if v.len() == dim => values.extend_from_slice(v),
                    other => {
                        return Err(Error::ActionMismatch(format!(
                            "{other:?} for a {dim}-dimensional regression head"
                        )))
                    }
                }
            }
            let a = t.input(Tensor::matrix(actions.len(), dim, values)?)?;
            let diff = t.apply(Op::Sub, &[a, *mean])?;
            log_density(t, density, diff, *sigma)
        }
        _ => unreachable!("head nodes always match the policy head"),
    }
}

/// Stacks encodings into a `[m, d]` tensor, checking their length.
pub(crate) fn stack(encodings: &[Vec<f64>], dim: usize) -> Result<Tensor> {
    let mut values = Vec::with_capacity(encodings.len() * dim);
    for e in encodings {
        if e.len() != dim {
            return Err(Error::LengthMismatch(format!("encoding of length {}, expected {dim}", e.len())));
        }
        values.extend_from_slice(e);
    }
    Tensor::matrix(encodings.len(), dim, values)
}
