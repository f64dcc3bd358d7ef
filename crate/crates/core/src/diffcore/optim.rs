use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// SGD or Adam over a [`ParamSet`].
///
/// A parameter tensor whose gradient is entirely zero is left untouched,
/// moments included, so frozen or signal-free tensors never drift.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    lr_scale: Vec<f64>,
    step: u64,
    param_steps: Vec<u64>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerState {
            kind,
            lr,
            lr_scale: Vec::new(),
            step: 0,
            param_steps: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerState::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerState::new(OptimizerKind::adam(), lr)
    }

    /// Per-parameter multipliers on the base learning rate.
    pub fn with_lr_scale(mut self, scale: Vec<f64>) -> Self {
        self.lr_scale = scale;
        self
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn ensure_buffers(&mut self, params: &ParamSet) -> Result<()> {
        if self.first_moment.is_empty() && self.param_steps.is_empty() {
            self.param_steps = vec![0; params.len()];
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.first_moment = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
                self.second_moment = self.first_moment.clone();
            }
        }
        if self.param_steps.len() != params.len() {
            return Err(Error::shape(
                "optimizer",
                format!("state for {} tensors, got {}", self.param_steps.len(), params.len()),
            ));
        }
        if !self.lr_scale.is_empty() && self.lr_scale.len() != params.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} lr multipliers for {} tensors", self.lr_scale.len(), params.len()),
            ));
        }
        Ok(())
    }

    /// Updates every parameter from its gradient, then zeroes the gradients.
    pub fn apply(&mut self, params: &mut ParamSet) -> Result<()> {
        for (name, t) in params.iter() {
            if t.grad().is_none() {
                return Err(Error::MissingGradient(name.to_string()));
            }
        }
        self.ensure_buffers(params)?;
        self.step += 1;
        for i in 0..params.len() {
            let lr = self.lr * self.lr_scale.get(i).copied().unwrap_or(1.0);
            let tensor = params.get_mut(i);
            let grad = tensor.grad().expect("checked above").to_vec();
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
            if grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            self.param_steps[i] += 1;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in tensor.values_mut().iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let t = self.param_steps[i] as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let m = &mut self.first_moment[i];
                    let v = &mut self.second_moment[i];
                    for (j, p) in tensor.values_mut().iter_mut().enumerate() {
                        let g = grad[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        params.zero_grad();
        Ok(())
    }
}
