use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::numerics::{ops, Scalar, Tensor};

/// Epsilon added to the variance inside every layer norm.
pub const LN_EPS: f64 = 1e-5;

/// Differentiable operation kinds.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Matmul,
    CausalConv,
    Hadamard,
    Add,
    Scale(f64),
    Slice { axis: usize, start: usize, end: usize },
    Concat { axis: usize },
    Relu,
    SoftmaxRows { causal: bool },
    LayerNormRows,
    MseLoss,
    Transpose,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Matmul => "matmul",
            Op::CausalConv => "causal_conv_cols",
            Op::Hadamard => "hadamard",
            Op::Add => "add",
            Op::Scale(_) => "scale",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Relu => "relu",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::LayerNormRows => "layer_norm_rows",
            Op::MseLoss => "mse_loss",
            Op::Transpose => "transpose",
        }
    }
}

fn arity(op: &Op, got: usize) -> Result<()> {
    let want = match op {
        Op::Matmul | Op::CausalConv | Op::Hadamard | Op::Add | Op::MseLoss => Some(2),
        Op::Concat { .. } => None,
        _ => Some(1),
    };
    match want {
        Some(w) if w != got => Err(Error::Contract(format!("{} takes {w} inputs, got {got}", op.name()))),
        None if got == 0 => Err(Error::Contract("concat of nothing".into())),
        _ => Ok(()),
    }
}

/// Forward value of `op`. Shared by every graph backend so eager and taped
/// evaluation agree bit for bit.
pub fn eval_op<T: Scalar>(op: &Op, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
    arity(op, x.len())?;
    match op {
        Op::Matmul => ops::matmul(x[0], x[1]),
        Op::CausalConv => ops::causal_conv_cols(x[0], x[1]),
        Op::Hadamard => ops::hadamard_broadcast(x[0], x[1]),
        Op::Add => ops::add(x[0], x[1]),
        Op::Scale(c) => Ok(ops::scale(x[0], T::cast_from(*c))),
        Op::Slice { axis, start, end } => ops::slice(x[0], *axis, *start, *end),
        Op::Concat { axis } => ops::concat(x, *axis),
        Op::Relu => Ok(ops::relu(x[0])),
        Op::SoftmaxRows { causal } => Ok(ops::softmax_rows(x[0], *causal)),
        Op::LayerNormRows => Ok(ops::layer_norm_rows(x[0], T::cast_from(LN_EPS))),
        Op::MseLoss => Tensor::new(&[1], vec![ops::mse_loss(x[0], x[1])?]),
        Op::Transpose => ops::transpose(x[0]),
    }
}

/// A computation backend. Model forwards are written once against this trait
/// and run either eagerly or on a tape.
pub trait Graph<T: Scalar> {
    type Var: Clone;

    fn param(&mut self, name: &str) -> Result<Self::Var>;
    fn constant(&mut self, t: Tensor<T>) -> Self::Var;
    fn apply(&mut self, op: Op, inputs: &[&Self::Var]) -> Result<Self::Var>;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor<T>;

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Matmul, &[a, b])
    }
    fn conv(&mut self, h: &Self::Var, u: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::CausalConv, &[h, u])
    }
    fn hadamard(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Hadamard, &[a, b])
    }
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Add, &[a, b])
    }
    fn scale(&mut self, a: &Self::Var, c: f64) -> Result<Self::Var> {
        self.apply(Op::Scale(c), &[a])
    }
    fn slice(&mut self, a: &Self::Var, axis: usize, start: usize, end: usize) -> Result<Self::Var> {
        self.apply(Op::Slice { axis, start, end }, &[a])
    }
    fn concat(&mut self, parts: &[&Self::Var], axis: usize) -> Result<Self::Var> {
        self.apply(Op::Concat { axis }, parts)
    }
    fn relu(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Relu, &[a])
    }
    fn softmax_rows(&mut self, a: &Self::Var, causal: bool) -> Result<Self::Var> {
        self.apply(Op::SoftmaxRows { causal }, &[a])
    }
    fn layer_norm(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::LayerNormRows, &[a])
    }
    fn mse(&mut self, pred: &Self::Var, target: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::MseLoss, &[pred, target])
    }
    fn transpose(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Transpose, &[a])
    }
}

/// Plain forward evaluation over a borrowed parameter store.
pub struct Eager<'a, T> {
    params: &'a ParamStore<T>,
}

impl<'a, T: Scalar> Eager<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Self { params }
    }
}

impl<T: Scalar> Graph<T> for Eager<'_, T> {
    type Var = Tensor<T>;

    fn param(&mut self, name: &str) -> Result<Tensor<T>> {
        self.params.get(name).cloned()
    }

    fn constant(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn apply(&mut self, op: Op, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        eval_op(&op, inputs)
    }

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }
}
