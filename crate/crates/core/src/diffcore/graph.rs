//! Tape-style computation graph with eager evaluation.
//!
//! Every builder method evaluates its node immediately, so shape errors are
//! reported at construction. [`Graph::forward`] re-evaluates all derived nodes
//! from the current leaf values, which is what finite-difference checks need.
//! All values are rank-2; a scalar is a `[1, 1]` tensor.

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a node in its graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        NodeId(i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Constant leaf; receives a gradient but is never updated.
    Input,
    /// Leaf bound to a parameter index of the owning [`super::ParamSet`].
    Param(usize),
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    /// `[m, n] + [1, n]`, the bias broadcast.
    AddRow,
    Scale(f64),
    Offset(f64),
    Neg,
    Tanh,
    Relu,
    Exp,
    Log,
    Abs,
    Square,
    Softplus,
    /// Row-wise softmax.
    Softmax,
    /// Row-wise log-softmax.
    LogSoftmax,
    Sum,
    Mean,
    /// `[m, n] -> [m, 1]`.
    SumCols,
    /// Picks one column per row: `[m, n] -> [m, 1]`.
    Gather(Vec<usize>),
    /// Sums consecutive row blocks of the given lengths: `[m, n] -> [s, n]`.
    SegmentSum(Vec<usize>),
    /// Elementwise clamp; gradient passes only inside `[lo, hi]`.
    Clamp(f64, f64),
    /// Elementwise minimum; ties route the gradient to the first input.
    Minimum,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::AddRow => "add_row",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::Neg => "neg",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Abs => "abs",
            Op::Square => "square",
            Op::Softplus => "softplus",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumCols => "sum_cols",
            Op::Gather(_) => "gather",
            Op::SegmentSum(_) => "segment_sum",
            Op::Clamp(..) => "clamp",
            Op::Minimum => "minimum",
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Input | Op::Param(_))
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// Ordered list of operations; every input id precedes its consumer.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    /// The last node added.
    pub fn output(&self) -> Option<NodeId> {
        self.nodes.len().checked_sub(1).map(NodeId)
    }

    fn check_rank2(op: &'static str, t: &Tensor) -> Result<()> {
        if t.is_rank2() {
            Ok(())
        } else {
            Err(Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape())))
        }
    }

    fn push_leaf(&mut self, op: Op, mut value: Tensor) -> Result<NodeId> {
        Graph::check_rank2(op.name(), &value)?;
        value.clear_grad();
        self.nodes.push(Node {
            op,
            inputs: Vec::new(),
            value,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push_leaf(Op::Input, value)
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push_leaf(Op::Input, Tensor::scalar(value))
            .expect("scalar is rank 2")
    }

    /// Adds a leaf holding a copy of parameter `index`.
    pub fn param(&mut self, index: usize, value: &Tensor) -> Result<NodeId> {
        self.push_leaf(Op::Param(index), value.clone())
    }

    /// Replaces a leaf's value; shape must be unchanged. Call [`Graph::forward`] afterwards.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !node.op.is_leaf() {
            return Err(Error::shape("set_leaf", format!("node {} is not a leaf", id.0)));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_leaf",
                format!("{:?} vs {:?}", node.value.shape(), value.shape()),
            ));
        }
        node.value.values_mut().copy_from_slice(value.values());
        Ok(())
    }

    pub(crate) fn leaf_values_mut(&mut self, id: NodeId) -> &mut [f64] {
        self.nodes[id.0].value.values_mut()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> Result<NodeId> {
        for i in &inputs {
            if i.0 >= self.nodes.len() {
                return Err(Error::shape(op.name(), format!("unknown input node {}", i.0)));
            }
        }
        let args: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        let value = eval(&op, &args)?;
        self.nodes.push(Node { op, inputs, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul, vec![a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add, vec![a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub, vec![a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul, vec![a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Div, vec![a, b])
    }
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.push(Op::AddRow, vec![a, row])
    }
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.push(Op::Scale(factor), vec![a])
    }
    pub fn offset(&mut self, a: NodeId, shift: f64) -> Result<NodeId> {
        self.push(Op::Offset(shift), vec![a])
    }
    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Neg, vec![a])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh, vec![a])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu, vec![a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Exp, vec![a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Log, vec![a])
    }
    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Abs, vec![a])
    }
    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Square, vec![a])
    }
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softplus, vec![a])
    }
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softmax, vec![a])
    }
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LogSoftmax, vec![a])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum, vec![a])
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean, vec![a])
    }
    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SumCols, vec![a])
    }
    pub fn gather(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.push(Op::Gather(indices), vec![a])
    }
    pub fn segment_sum(&mut self, a: NodeId, lengths: Vec<usize>) -> Result<NodeId> {
        self.push(Op::SegmentSum(lengths), vec![a])
    }
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if lo > hi {
            return Err(Error::shape("clamp", format!("empty range [{lo}, {hi}]")));
        }
        self.push(Op::Clamp(lo, hi), vec![a])
    }
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Minimum, vec![a, b])
    }

    /// Generic form of the builder methods above.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        check_op(&op, inputs.len())?;
        self.push(op, inputs.to_vec())
    }

    /// Re-evaluates every derived node from the current leaf values and
    /// returns the final node's value.
    pub fn forward(&mut self) -> Result<&Tensor> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyGraph);
        }
        for i in 0..self.nodes.len() {
            if self.nodes[i].op.is_leaf() {
                continue;
            }
            let value = {
                let node = &self.nodes[i];
                let args: Vec<&Tensor> =
                    node.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
                eval(&node.op, &args)?
            };
            self.nodes[i].value = value;
        }
        Ok(&self.nodes[self.nodes.len() - 1].value)
    }

    /// Reverse-mode sweep from the final (scalar) node.
    ///
    /// Leaf gradients accumulate across calls until [`Graph::zero_grad`];
    /// intermediate gradients are recomputed from scratch each call.
    pub fn backward(&mut self) -> Result<()> {
        let out = self.output().ok_or(Error::EmptyGraph)?;
        let grads = self.gradients(out)?;
        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            if node.op.is_leaf() {
                if let Some(g) = grad {
                    node.value.accumulate_grad(&g)?;
                }
            } else {
                node.value.clear_grad();
                if let Some(g) = grad {
                    node.value.accumulate_grad(&g)?;
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
    }

    /// `(parameter index, gradient)` for every parameter leaf that has one.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.nodes.iter().filter_map(|n| match (&n.op, n.value.grad()) {
            (Op::Param(index), Some(g)) => Some((*index, g)),
            _ => None,
        })
    }

    /// Ids of all parameter leaves, in insertion order.
    pub fn param_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Param(_)))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Gradients of `out` w.r.t. every node, without touching stored buffers.
    pub(crate) fn gradients(&self, out: NodeId) -> Result<Vec<Option<Vec<f64>>>> {
        let out_value = &self.nodes[out.0].value;
        if out_value.numel() != 1 {
            return Err(Error::NonScalarOutput(out_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.op.is_leaf() {
                let args: Vec<&Tensor> =
                    node.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
                let input_grads = vjp(&node.op, &args, &node.value, &g);
                for (input, ig) in node.inputs.iter().zip(input_grads) {
                    match &mut grads[input.0] {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.values().iter().map(|&x| f(x)).collect())
        .expect("shape preserved")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let values = a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), values).expect("shape preserved")
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise log-softmax of a `[m, n]` matrix. Shared by the graph kernel and
/// the sampling path so both produce bit-identical values.
pub fn log_softmax_rows(values: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for row in values.chunks(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &x in row {
            denom += (x - max).exp();
        }
        let log_denom = denom.ln();
        out.extend(row.iter().map(|&x| x - max - log_denom));
    }
    out
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let (av, bv) = (a.values(), b.values());
    let mut out = vec![0.0; m * n];
    // Each output element accumulates over k in ascending order regardless of m,
    // so a row computed alone matches the same row inside a batch bit for bit.
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = av[i * k + p];
            let brow = &bv[p * n..(p + 1) * n];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// Rejects leaf ops, wrong arities and empty clamp ranges.
pub(crate) fn check_op(op: &Op, n_inputs: usize) -> Result<()> {
    let arity = match op {
        Op::Input | Op::Param(_) => {
            return Err(Error::shape(op.name(), "leaves cannot be applied"));
        }
        Op::MatMul | Op::Add | Op::Sub | Op::Mul | Op::Div | Op::AddRow | Op::Minimum => 2,
        Op::Clamp(lo, hi) if lo > hi => {
            return Err(Error::shape("clamp", format!("empty range [{lo}, {hi}]")));
        }
        _ => 1,
    };
    if arity != n_inputs {
        return Err(Error::shape(op.name(), format!("expected {arity} inputs, got {n_inputs}")));
    }
    Ok(())
}

pub(crate) fn eval(op: &Op, args: &[&Tensor]) -> Result<Tensor> {
    let name = op.name();
    for a in args {
        Graph::check_rank2(name, a)?;
    }
    let out = match op {
        Op::Input | Op::Param(_) => unreachable!("leaves are not evaluated"),
        Op::MatMul => matmul(args[0], args[1])?,
        Op::Add => {
            same_shape(name, args[0], args[1])?;
            zip_map(args[0], args[1], |x, y| x + y)
        }
        Op::Sub => {
            same_shape(name, args[0], args[1])?;
            zip_map(args[0], args[1], |x, y| x - y)
        }
        Op::Mul => {
            same_shape(name, args[0], args[1])?;
            zip_map(args[0], args[1], |x, y| x * y)
        }
        Op::Div => {
            same_shape(name, args[0], args[1])?;
            zip_map(args[0], args[1], |x, y| x / y)
        }
        Op::AddRow => {
            let (a, r) = (args[0], args[1]);
            if r.rows() != 1 || r.cols() != a.cols() {
                return Err(Error::shape(name, format!("{:?} + row {:?}", a.shape(), r.shape())));
            }
            let n = a.cols();
            let values = a
                .values()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + r.values()[i % n])
                .collect();
            Tensor::new(a.shape().to_vec(), values)?
        }
        Op::Scale(c) => map(args[0], |x| x * c),
        Op::Offset(c) => map(args[0], |x| x + c),
        Op::Neg => map(args[0], |x| -x),
        Op::Tanh => map(args[0], f64::tanh),
        Op::Relu => map(args[0], |x| x.max(0.0)),
        Op::Exp => map(args[0], f64::exp),
        Op::Log => map(args[0], f64::ln),
        Op::Abs => map(args[0], f64::abs),
        Op::Square => map(args[0], |x| x * x),
        Op::Softplus => map(args[0], softplus),
        Op::Softmax => {
            let a = args[0];
            let logp = log_softmax_rows(a.values(), a.cols());
            Tensor::new(a.shape().to_vec(), logp.into_iter().map(f64::exp).collect())?
        }
        Op::LogSoftmax => {
            let a = args[0];
            Tensor::new(a.shape().to_vec(), log_softmax_rows(a.values(), a.cols()))?
        }
        Op::Sum => Tensor::scalar(args[0].values().iter().sum()),
        Op::Mean => {
            let a = args[0];
            if a.numel() == 0 {
                return Err(Error::shape(name, "mean of an empty tensor"));
            }
            Tensor::scalar(a.values().iter().sum::<f64>() / a.numel() as f64)
        }
        Op::SumCols => {
            let a = args[0];
            Tensor::column(a.values().chunks(a.cols().max(1)).map(|r| r.iter().sum()).collect())
        }
        Op::Gather(indices) => {
            let a = args[0];
            if indices.len() != a.rows() {
                return Err(Error::shape(
                    name,
                    format!("{} indices for {} rows", indices.len(), a.rows()),
                ));
            }
            let n = a.cols();
            let mut out = Vec::with_capacity(indices.len());
            for (r, &c) in indices.iter().enumerate() {
                if c >= n {
                    return Err(Error::shape(name, format!("index {c} in row of width {n}")));
                }
                out.push(a.values()[r * n + c]);
            }
            Tensor::column(out)
        }
        Op::SegmentSum(lengths) => {
            let a = args[0];
            let total: usize = lengths.iter().sum();
            if total != a.rows() {
                return Err(Error::shape(
                    name,
                    format!("segments cover {total} rows, input has {}", a.rows()),
                ));
            }
            let n = a.cols();
            let mut out = vec![0.0; lengths.len() * n];
            let mut row = 0;
            for (s, &len) in lengths.iter().enumerate() {
                for _ in 0..len {
                    for c in 0..n {
                        out[s * n + c] += a.values()[row * n + c];
                    }
                    row += 1;
                }
            }
            Tensor::matrix(lengths.len(), n, out)?
        }
        Op::Clamp(lo, hi) => map(args[0], |x| x.clamp(*lo, *hi)),
        Op::Minimum => {
            same_shape(name, args[0], args[1])?;
            zip_map(args[0], args[1], |x, y| if x <= y { x } else { y })
        }
    };
    Ok(out)
}

/// Vector-Jacobian products: gradient contributions to each input.
fn vjp(op: &Op, args: &[&Tensor], out: &Tensor, g: &[f64]) -> Vec<Vec<f64>> {
    let ew = |t: &Tensor, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<f64> {
        t.values()
            .iter()
            .zip(out.values())
            .zip(g)
            .map(|((&x, &y), &gi)| f(x, y, gi))
            .collect()
    };
    match op {
        Op::Input | Op::Param(_) => Vec::new(),
        Op::MatMul => {
            let (a, b) = (args[0], args[1]);
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            let (av, bv) = (a.values(), b.values());
            let mut ga = vec![0.0; m * k];
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                let grow = &g[i * n..(i + 1) * n];
                for p in 0..k {
                    let brow = &bv[p * n..(p + 1) * n];
                    let mut acc = 0.0;
                    for (gi, bi) in grow.iter().zip(brow) {
                        acc += gi * bi;
                    }
                    ga[i * k + p] = acc;
                    let x = av[i * k + p];
                    let gbrow = &mut gb[p * n..(p + 1) * n];
                    for (o, gi) in gbrow.iter_mut().zip(grow) {
                        *o += x * gi;
                    }
                }
            }
            vec![ga, gb]
        }
        Op::Add => vec![g.to_vec(), g.to_vec()],
        Op::Sub => vec![g.to_vec(), g.iter().map(|x| -x).collect()],
        Op::Mul => {
            let (a, b) = (args[0].values(), args[1].values());
            vec![
                g.iter().zip(b).map(|(gi, y)| gi * y).collect(),
                g.iter().zip(a).map(|(gi, x)| gi * x).collect(),
            ]
        }
        Op::Div => {
            let (a, b) = (args[0].values(), args[1].values());
            vec![
                g.iter().zip(b).map(|(gi, y)| gi / y).collect(),
                g.iter()
                    .zip(a.iter().zip(b))
                    .map(|(gi, (x, y))| -gi * x / (y * y))
                    .collect(),
            ]
        }
        Op::AddRow => {
            let n = args[1].cols();
            let mut gr = vec![0.0; n];
            for (i, gi) in g.iter().enumerate() {
                gr[i % n] += gi;
            }
            vec![g.to_vec(), gr]
        }
        Op::Scale(c) => vec![g.iter().map(|gi| gi * c).collect()],
        Op::Offset(_) => vec![g.to_vec()],
        Op::Neg => vec![g.iter().map(|gi| -gi).collect()],
        Op::Tanh => vec![ew(args[0], &|_, y, gi| gi * (1.0 - y * y))],
        Op::Relu => vec![ew(args[0], &|x, _, gi| if x > 0.0 { gi } else { 0.0 })],
        Op::Exp => vec![ew(args[0], &|_, y, gi| gi * y)],
        Op::Log => vec![ew(args[0], &|x, _, gi| gi / x)],
        Op::Abs => vec![ew(args[0], &|x, _, gi| {
            if x > 0.0 {
                gi
            } else if x < 0.0 {
                -gi
            } else {
                0.0
            }
        })],
        Op::Square => vec![ew(args[0], &|x, _, gi| 2.0 * x * gi)],
        Op::Softplus => vec![ew(args[0], &|x, _, gi| gi * sigmoid(x))],
        Op::Softmax => {
            let n = out.cols();
            let mut gx = vec![0.0; g.len()];
            for ((yr, gr), xr) in out.values().chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)) {
                let dot: f64 = yr.iter().zip(gr).map(|(y, gi)| y * gi).sum();
                for ((x, y), gi) in xr.iter_mut().zip(yr).zip(gr) {
                    *x = y * (gi - dot);
                }
            }
            vec![gx]
        }
        Op::LogSoftmax => {
            let n = out.cols();
            let mut gx = vec![0.0; g.len()];
            for ((yr, gr), xr) in out.values().chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)) {
                let total: f64 = gr.iter().sum();
                for ((x, y), gi) in xr.iter_mut().zip(yr).zip(gr) {
                    *x = gi - y.exp() * total;
                }
            }
            vec![gx]
        }
        Op::Sum => vec![vec![g[0]; args[0].numel()]],
        Op::Mean => {
            let n = args[0].numel();
            vec![vec![g[0] / n as f64; n]]
        }
        Op::SumCols => {
            let n = args[0].cols();
            vec![(0..args[0].numel()).map(|i| g[i / n]).collect()]
        }
        Op::Gather(indices) => {
            let n = args[0].cols();
            let mut gx = vec![0.0; args[0].numel()];
            for (r, &c) in indices.iter().enumerate() {
                gx[r * n + c] += g[r];
            }
            vec![gx]
        }
        Op::SegmentSum(lengths) => {
            let n = args[0].cols();
            let mut gx = Vec::with_capacity(args[0].numel());
            for (s, &len) in lengths.iter().enumerate() {
                for _ in 0..len {
                    gx.extend_from_slice(&g[s * n..(s + 1) * n]);
                }
            }
            vec![gx]
        }
        Op::Clamp(lo, hi) => vec![ew(args[0], &|x, _, gi| {
            if x >= *lo && x <= *hi {
                gi
            } else {
                0.0
            }
        })],
        Op::Minimum => {
            let (a, b) = (args[0].values(), args[1].values());
            let mut ga = vec![0.0; g.len()];
            let mut gb = vec![0.0; g.len()];
            for i in 0..g.len() {
                if a[i] <= b[i] {
                    ga[i] = g[i];
                } else {
                    gb[i] = g[i];
                }
            }
            vec![ga, gb]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(vec![0.0; 4])).unwrap();
        let s = g.softmax(x).unwrap();
        assert_eq!(g.value(s).values(), &[0.25; 4]);
    }

    #[test]
    fn log_softmax_uniform_pair() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(vec![0.0, 0.0])).unwrap();
        let s = g.softmax(x).unwrap();
        let l = g.log(s).unwrap();
        assert!((g.value(l).values()[0] + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn identity_matmul_returns_operand() {
        let a = Tensor::matrix(3, 2, vec![1.0, -2.0, 3.5, 0.25, -7.0, 9.0]).unwrap();
        let mut g = Graph::new();
        let i = g.input(Tensor::identity(3)).unwrap();
        let x = g.input(a.clone()).unwrap();
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y).values(), a.values());
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(vec![2, 3])).unwrap();
        let b = g.input(Tensor::zeros(vec![2, 3])).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.param(0, &Tensor::scalar(3.0)).unwrap();
        g.square(x).unwrap();
        g.backward().unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn nll_gradient_is_softmax_minus_onehot() {
        let z = vec![0.3, -1.2, 2.0, 0.5];
        let mut g = Graph::new();
        let x = g.param(0, &Tensor::row(z.clone())).unwrap();
        let lp = g.log_softmax(x).unwrap();
        let picked = g.gather(lp, vec![2]).unwrap();
        let nll = g.neg(picked).unwrap();
        g.sum(nll).unwrap();
        g.backward().unwrap();
        let probs: Vec<f64> = log_softmax_rows(&z, 4).into_iter().map(f64::exp).collect();
        for (j, (&gr, p)) in g.grad(x).unwrap().iter().zip(probs).enumerate() {
            let expected = p - if j == 2 { 1.0 } else { 0.0 };
            assert!((gr - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.param(0, &Tensor::scalar(2.0)).unwrap();
        g.scale(x, 5.0).unwrap();
        g.backward().unwrap();
        g.backward().unwrap();
        assert_eq!(g.grad(x).unwrap(), &[10.0]);
        g.zero_grad();
        g.backward().unwrap();
        assert_eq!(g.grad(x).unwrap(), &[5.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(0, &Tensor::row(vec![1.0, 2.0])).unwrap();
        g.tanh(x).unwrap();
        assert!(matches!(g.backward(), Err(Error::NonScalarOutput(_))));
    }

    #[test]
    fn forward_tracks_leaf_updates() {
        let mut g = Graph::new();
        let x = g.param(0, &Tensor::scalar(1.0)).unwrap();
        let e = g.exp(x).unwrap();
        g.sum(e).unwrap();
        g.set_leaf(x, Tensor::scalar(0.0)).unwrap();
        assert_eq!(g.forward().unwrap().values(), &[1.0]);
    }

    #[test]
    fn minimum_ties_route_to_first() {
        let mut g = Graph::new();
        let a = g.param(0, &Tensor::scalar(1.0)).unwrap();
        let b = g.param(1, &Tensor::scalar(1.0)).unwrap();
        g.minimum(a, b).unwrap();
        g.backward().unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0]);
        assert_eq!(g.grad(b).unwrap(), &[0.0]);
    }

    #[test]
    fn segment_sum_blocks() {
        let mut g = Graph::new();
        let x = g.input(Tensor::column(vec![1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        let s = g.segment_sum(x, vec![2, 0, 3]).unwrap();
        assert_eq!(g.value(s).values(), &[3.0, 0.0, 12.0]);
        assert!(g.segment_sum(x, vec![2, 2]).is_err());
    }
}
