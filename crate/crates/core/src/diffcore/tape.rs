//! A common interface over the recording [`Graph`] and a tape-less evaluator.
//!
//! Model code written against [`Tape`] runs unchanged in both modes. Both
//! evaluate nodes with the same kernels, so values agree bit for bit.

use std::borrow::Cow;

use super::graph::{check_op, eval};
use super::{Graph, NodeId, Op, Tensor};
use crate::error::Result;

pub trait Tape<'a> {
    /// Leaf bound to parameter `index` with current value `value`.
    fn param(&mut self, index: usize, value: &'a Tensor) -> Result<NodeId>;
    fn input(&mut self, value: Tensor) -> Result<NodeId>;
    fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId>;
    fn value(&self, id: NodeId) -> &Tensor;
}

impl<'a> Tape<'a> for Graph {
    fn param(&mut self, index: usize, value: &'a Tensor) -> Result<NodeId> {
        Graph::param(self, index, value)
    }
    fn input(&mut self, value: Tensor) -> Result<NodeId> {
        Graph::input(self, value)
    }
    fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        Graph::apply(self, op, inputs)
    }
    fn value(&self, id: NodeId) -> &Tensor {
        Graph::value(self, id)
    }
}

/// Evaluates nodes without recording anything needed for gradients.
/// Parameters are borrowed rather than copied.
#[derive(Debug, Default)]
pub struct Eager<'a> {
    values: Vec<Cow<'a, Tensor>>,
}

impl<'a> Eager<'a> {
    pub fn new() -> Self {
        Eager::default()
    }

    fn push(&mut self, t: Cow<'a, Tensor>) -> NodeId {
        self.values.push(t);
        NodeId::from_index(self.values.len() - 1)
    }
}

impl<'a> Tape<'a> for Eager<'a> {
    fn param(&mut self, _index: usize, value: &'a Tensor) -> Result<NodeId> {
        Ok(self.push(Cow::Borrowed(value)))
    }
    fn input(&mut self, value: Tensor) -> Result<NodeId> {
        Ok(self.push(Cow::Owned(value)))
    }
    fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        check_op(&op, inputs.len())?;
        let args: Vec<&Tensor> = inputs.iter().map(|i| self.values[i.index()].as_ref()).collect();
        let out = eval(&op, &args)?;
        Ok(self.push(Cow::Owned(out)))
    }
    fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model<'a, T: Tape<'a>>(t: &mut T, w: &'a Tensor, x: Tensor) -> NodeId {
        let w = t.param(0, w).unwrap();
        let x = t.input(x).unwrap();
        let h = t.apply(Op::MatMul, &[x, w]).unwrap();
        let h = t.apply(Op::Tanh, &[h]).unwrap();
        t.apply(Op::LogSoftmax, &[h]).unwrap()
    }

    #[test]
    fn eager_matches_graph_bitwise() {
        let w = Tensor::matrix(3, 2, vec![0.3, -1.2, 0.7, 0.01, -0.4, 2.5]).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 0.5, -0.25, 0.0, 3.0, 1.5]).unwrap();
        let mut g = Graph::new();
        let a = model(&mut g, &w, x.clone());
        let mut e = Eager::new();
        let b = model(&mut e, &w, x);
        assert_eq!(g.value(a).values(), e.value(b).values());
    }

    #[test]
    fn arity_is_checked() {
        let mut e = Eager::new();
        let x = e.input(Tensor::scalar(1.0)).unwrap();
        assert!(e.apply(Op::Add, &[x]).is_err());
        assert!(e.apply(Op::Clamp(1.0, 0.0), &[x]).is_err());
        assert!(e.apply(Op::Input, &[]).is_err());
    }
}
