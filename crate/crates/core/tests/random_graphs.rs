//! Reverse-mode gradients of randomly composed graphs agree with central
//! finite differences.

use posttrain::diffcore::{grad_check, Graph, NodeId, Tensor};
use proptest::prelude::*;

#[derive(Clone, Copy, Debug)]
enum Step {
    Tanh,
    Softplus,
    ExpTanh,
    Square,
    Scale(f64),
    MulParam,
    AddRow,
    Matmul,
    LogSoftmax,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        Just(Step::Tanh),
        Just(Step::Softplus),
        Just(Step::ExpTanh),
        Just(Step::Square),
        (-2.0..2.0f64).prop_map(Step::Scale),
        Just(Step::MulParam),
        Just(Step::AddRow),
        Just(Step::Matmul),
        Just(Step::LogSoftmax),
    ]
}

struct Builder<'a> {
    g: Graph,
    values: &'a [f64],
    used: usize,
    params: usize,
}

impl Builder<'_> {
    fn param(&mut self, rows: usize, cols: usize) -> NodeId {
        let values = (0..rows * cols)
            .map(|i| self.values[(self.used + i) % self.values.len()])
            .collect();
        self.used += rows * cols;
        let t = Tensor::matrix(rows, cols, values).unwrap();
        let id = self.g.param(self.params, &t).unwrap();
        self.params += 1;
        id
    }
}

fn build(rows: usize, cols: usize, steps: &[Step], values: &[f64]) -> Graph {
    let mut b = Builder { g: Graph::new(), values, used: 0, params: 0 };
    let mut x = b.param(rows, cols);
    let mut width = cols;
    for s in steps {
        let g = &mut b.g;
        x = match *s {
            Step::Tanh => g.tanh(x).unwrap(),
            Step::Softplus => g.softplus(x).unwrap(),
            Step::ExpTanh => {
                let t = g.tanh(x).unwrap();
                g.exp(t).unwrap()
            }
            Step::Square => g.square(x).unwrap(),
            Step::Scale(f) => g.scale(x, f).unwrap(),
            Step::LogSoftmax => g.log_softmax(x).unwrap(),
            Step::MulParam => {
                let p = b.param(rows, width);
                b.g.mul(x, p).unwrap()
            }
            Step::AddRow => {
                let p = b.param(1, width);
                b.g.add_row(x, p).unwrap()
            }
            Step::Matmul => {
                let next = 1 + (width % 3);
                let w = b.param(width, next);
                width = next;
                b.g.matmul(x, w).unwrap()
            }
        };
    }
    let t = b.g.tanh(x).unwrap();
    b.g.sum(t).unwrap();
    b.g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn random_compositions_pass_grad_check(
        rows in 1usize..4,
        cols in 1usize..4,
        steps in proptest::collection::vec(step(), 1..7),
        values in proptest::collection::vec(-1.5..1.5f64, 8..24),
    ) {
        let mut g = build(rows, cols, &steps, &values);
        let report = grad_check(&mut g, 1e-4).unwrap();
        prop_assert!(report.passed(), "steps {:?}: max rel error {}", steps, report.max_rel_error());
    }
}
