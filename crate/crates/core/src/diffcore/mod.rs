//! Minimal reverse-mode differentiation engine, optimizers and the
//! parameter checkpoint container.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport, ParamCheck, FD_STEP};
pub use graph::{log_softmax_rows, Graph, NodeId, Op};
pub use optim::{OptimizerKind, OptimizerState};
pub use tape::{Eager, Tape};
pub use tensor::{ParamSet, Tensor};
