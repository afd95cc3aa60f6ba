//! Reverse-mode differentiation over the kernel set used by the models.

mod check;
mod graph;
mod params;
mod tape;

pub use check::{compare_grads, eval_loss, finite_diff_grad, grad_check, loss_and_grad, GradCheckReport, Objective};
pub use graph::{eval_op, Eager, Graph, Op, LN_EPS};
pub use params::{GradStore, NamedTensors, ParamStore};
pub use tape::{NodeId, Tape};
