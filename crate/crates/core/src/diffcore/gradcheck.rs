use super::graph::{Graph, NodeId};
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so gradients that are
/// essentially zero are compared on an absolute scale instead.
const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub node: NodeId,
    pub param: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of the graph's scalar output against
/// central finite differences for every parameter leaf.
pub fn grad_check(graph: &mut Graph, tolerance: f64) -> Result<GradCheckReport> {
    let out = graph.output().ok_or(Error::EmptyGraph)?;
    let grads = graph.gradients(out)?;
    let nodes = graph.param_nodes();
    let analytic: Vec<Vec<f64>> = nodes
        .iter()
        .map(|n| {
            grads[n.index()]
                .clone()
                .unwrap_or_else(|| vec![0.0; graph.value(*n).numel()])
        })
        .collect();
    grad_check_with(graph, &analytic, tolerance)
}

/// Like [`grad_check`] but against caller-supplied gradients, one buffer per
/// parameter leaf in [`Graph::param_nodes`] order.
pub fn grad_check_with(
    graph: &mut Graph,
    analytic: &[Vec<f64>],
    tolerance: f64,
) -> Result<GradCheckReport> {
    let nodes = graph.param_nodes();
    if nodes.len() != analytic.len() {
        return Err(Error::LengthMismatch(format!(
            "{} gradient buffers for {} parameter leaves",
            analytic.len(),
            nodes.len()
        )));
    }
    let mut params = Vec::with_capacity(nodes.len());
    for (node, grad) in nodes.into_iter().zip(analytic) {
        let n = graph.value(node).numel();
        if grad.len() != n {
            return Err(Error::shape("grad_check", format!("{} vs {n} values", grad.len())));
        }
        let mut worst = 0.0f64;
        for i in 0..n {
            let original = graph.value(node).values()[i];
            graph.leaf_values_mut(node)[i] = original + FD_STEP;
            let plus = graph.forward()?.item()?;
            graph.leaf_values_mut(node)[i] = original - FD_STEP;
            let minus = graph.forward()?.item()?;
            graph.leaf_values_mut(node)[i] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grad[i], numeric));
        }
        graph.forward()?;
        let param = match graph.op(node) {
            super::graph::Op::Param(p) => *p,
            _ => unreachable!("param_nodes returns parameter leaves"),
        };
        params.push(ParamCheck {
            node,
            param,
            max_rel_error: worst,
            passed: worst < tolerance,
        });
    }
    Ok(GradCheckReport { tolerance, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn linear_nll() -> Graph {
        let mut g = Graph::new();
        let x = g
            .input(Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7]).unwrap())
            .unwrap();
        let w = g
            .param(0, &Tensor::matrix(3, 4, (0..12).map(|i| 0.1 * i as f64 - 0.5).collect()).unwrap())
            .unwrap();
        let b = g.param(1, &Tensor::row(vec![0.2, -0.1, 0.0, 0.3])).unwrap();
        let h = g.matmul(x, w).unwrap();
        let z = g.add_row(h, b).unwrap();
        let lp = g.log_softmax(z).unwrap();
        let picked = g.gather(lp, vec![1, 3]).unwrap();
        let m = g.mean(picked).unwrap();
        g.neg(m).unwrap();
        g
    }

    #[test]
    fn linear_nll_passes() {
        let mut g = linear_nll();
        let report = grad_check(&mut g, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut g = linear_nll();
        let out = g.output().unwrap();
        let grads = g.gradients(out).unwrap();
        let corrupted: Vec<Vec<f64>> = g
            .param_nodes()
            .iter()
            .map(|n| grads[n.index()].clone().unwrap().iter().map(|x| x * 1.05).collect())
            .collect();
        let report = grad_check_with(&mut g, &corrupted, 1e-4).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut g = Graph::new();
        let p = g.param(0, &Tensor::row(vec![1.0, 2.0])).unwrap();
        let zero = g.scale(p, 0.0).unwrap();
        let s = g.sum(zero).unwrap();
        g.offset(s, 3.0).unwrap();
        let report = grad_check(&mut g, 1e-4).unwrap();
        assert!(report.passed());
        g.backward().unwrap();
        assert_eq!(g.grad(p).unwrap(), &[0.0, 0.0]);
    }
}
