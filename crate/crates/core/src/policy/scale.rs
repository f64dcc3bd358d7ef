use super::{net, Head, Policy};
use crate::diffcore::{Eager, Graph, OptimizerState, ParamSet, Tape};
use crate::envsuite::{Action, Demonstration};
use crate::error::{Error, Result};

/// Result of [`fit_scale_head`]: mean NLL before each step, and after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleFit {
    pub losses: Vec<f64>,
    pub final_nll: f64,
}

/// Fits only the scale head of a regression policy by maximum likelihood on
/// the demonstrations. Trunk and mean head are held fixed.
pub fn fit_scale_head(policy: &mut Policy, demos: &[Demonstration], steps: usize, lr: f64) -> Result<ScaleFit> {
    let (dim, density) = match policy.head() {
        Head::Regression { dim, density } => (dim, density),
        Head::Tokenized { .. } => {
            return Err(Error::ActionMismatch("scale fitting needs a regression head".into()))
        }
    };
    let (w_idx, b_idx) = policy.layout.scale.expect("regression policies have a scale head");
    let mut encodings = Vec::new();
    let mut actions = Vec::new();
    for d in demos {
        encodings.extend(policy.encoder().episode(d.context.task_id, &d.observations, &d.actions)?);
        actions.extend(d.actions.iter().cloned());
    }
    if encodings.is_empty() {
        return Err(Error::Dataset("scale fitting needs at least one demonstration step".into()));
    }

    // Frozen parts are evaluated once and enter the graph as constants.
    let (features, residual) = {
        let mut tape = Eager::new();
        let x = tape.input(net::stack(&encodings, policy.encoder().dim())?)?;
        let fwd = net::forward(&mut tape, policy, x)?;
        let net::HeadNodes::Regression { mean, .. } = fwd.head else { unreachable!() };
        let mut residual = tape.value(mean).clone();
        for (row, a) in residual.values_mut().chunks_mut(dim).zip(&actions) {
            let Action::Continuous(a) = a else {
                return Err(Error::ActionMismatch(format!("{a:?} in a continuous demo")));
            };
            if a.len() != dim {
                return Err(Error::ActionMismatch(format!("action of length {}", a.len())));
            }
            row.iter_mut().zip(a).for_each(|(m, x)| *m = x - *m);
        }
        (tape.value(fwd.features).clone(), residual)
    };

    let mut scale = ParamSet::new();
    scale.push("scale.w", policy.params.get(w_idx).clone());
    scale.push("scale.b", policy.params.get(b_idx).clone());

    let mut g = Graph::new();
    let h = g.input(features)?;
    let diff = g.input(residual)?;
    let w = g.param(0, scale.get(0))?;
    let b = g.param(1, scale.get(1))?;
    let z = g.matmul(h, w)?;
    let z = g.add_row(z, b)?;
    let s = g.softplus(z)?;
    let sigma = g.offset(s, super::SCALE_FLOOR)?;
    let lp = net::log_density(&mut g, density, diff, sigma)?;
    let mean_lp = g.mean(lp)?;
    g.neg(mean_lp)?;

    let mut opt = OptimizerState::adam(lr);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let loss = g.forward()?.item()?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("scale-head NLL".into()));
        }
        losses.push(loss);
        g.zero_grad();
        g.backward()?;
        scale.zero_grad();
        scale.accumulate_from(&g)?;
        opt.apply(&mut scale)?;
        g.set_leaf(w, scale.get(0).clone())?;
        g.set_leaf(b, scale.get(1).clone())?;
    }
    let final_nll = g.forward()?.item()?;
    *policy.params.get_mut(w_idx) = scale.get(0).clone();
    *policy.params.get_mut(b_idx) = scale.get(1).clone();
    policy.params.get_mut(w_idx).clear_grad();
    policy.params.get_mut(b_idx).clear_grad();
    Ok(ScaleFit { losses, final_nll })
}

