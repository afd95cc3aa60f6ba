use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::models::{predict, ModelSpec};
use crate::numerics::{Scalar, Tensor};
use crate::tasks::{embed_prompt, grad_oracle, LeastSquaresInstance};

/// Anything that maps `(A, b, x)` to an update direction `Δ`.
pub trait GradientModel<T: Scalar> {
    fn gradient(&self, a: &Tensor<T>, b: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Exact `Aᵀ(Ax − b)` (divided by `N` when `normalized`).
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleGradient {
    pub normalized: bool,
}

impl<T: Scalar> GradientModel<T> for OracleGradient {
    fn gradient(&self, a: &Tensor<T>, b: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        grad_oracle(a, b, x, self.normalized)
    }
}

/// A sequence model fed explicit-gradient prompts; `Δ` is the last output row.
#[derive(Clone, Copy, Debug)]
pub struct NetworkGradient<'a, T> {
    pub spec: &'a ModelSpec,
    pub params: &'a ParamStore<T>,
}

impl<T: Scalar> GradientModel<T> for NetworkGradient<'_, T> {
    fn gradient(&self, a: &Tensor<T>, b: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = predict(self.spec, self.params, &embed_prompt(a, b, Some(x)))?;
        let (n, c) = (out.rows(), out.cols());
        if c != x.len() {
            return Err(Error::Contract(format!(
                "model emits {c} columns for a {}-dim iterate",
                x.len()
            )));
        }
        Tensor::new(&[c], out.data()[(n - 1) * c..].to_vec())
    }
}

/// Iterate norm treated as divergence.
pub const SOLVE_DIVERGENCE_NORM: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveOptions {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Keep every iterate in the trace.
    #[serde(default)]
    pub snapshots: bool,
}

fn default_tol() -> f64 {
    1e-12
}
fn default_max_iters() -> usize {
    10_000
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iters: default_max_iters(),
            snapshots: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tol,
    MaxIters,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iter: usize,
    /// `‖x_iter − x_{iter−1}‖∞`
    pub delta_inf: f64,
    pub mse: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub x: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub steps: Vec<TraceStep>,
    pub reason: Termination,
}

impl IterationTrace {
    pub fn iters(&self) -> usize {
        self.steps.last().map_or(0, |s| s.iter)
    }

    pub fn final_mse(&self) -> Option<f64> {
        self.steps.last().map(|s| s.mse)
    }
}

/// Fixed-point iteration `x ← x − η·Δ(A, b, x)` from `inst.x0`.
pub fn iterative_solve<T: Scalar, M: GradientModel<T> + ?Sized>(
    model: &M,
    inst: &LeastSquaresInstance<T>,
    eta: f64,
    opts: &SolveOptions,
) -> Result<(Tensor<T>, IterationTrace)> {
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("tol must be positive, got {}", opts.tol)));
    }
    let step = T::cast_from(eta);
    let mut x = inst.x0.clone();
    let mut steps = Vec::new();
    let mut reason = Termination::MaxIters;
    for iter in 1..=opts.max_iters {
        let g = model.gradient(&inst.a, &inst.b, &x)?;
        let mut delta = 0.0f64;
        for (xi, &gi) in x.data_mut().iter_mut().zip(g.data()) {
            let next = *xi - step * gi;
            delta = delta.max((next - *xi).as_f64().abs());
            *xi = next;
        }
        let norm = x.norm2();
        let diverged = !norm.is_finite() || norm > SOLVE_DIVERGENCE_NORM;
        steps.push(TraceStep {
            iter,
            delta_inf: delta,
            mse: x.mse(&inst.x_star),
            x: opts.snapshots.then(|| x.to_f64_vec()),
        });
        if diverged {
            reason = Termination::Diverged;
            break;
        }
        if delta < opts.tol {
            reason = Termination::Tol;
            break;
        }
    }
    Ok((x, IterationTrace { steps, reason }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use crate::tasks::{gd_oracle, sample_instance, DistributionSpec};

    #[test]
    fn starting_at_the_solution_stops_immediately() {
        let mut inst: LeastSquaresInstance<f64> =
            sample_instance(&DistributionSpec::shaped(20, 5), &mut SeededRng::new(3, 0)).unwrap();
        inst.x0 = inst.x_star.clone();
        let (_, trace) = iterative_solve(&OracleGradient::default(), &inst, 0.04, &SolveOptions::default()).unwrap();
        assert_eq!(trace.reason, Termination::Tol);
        assert_eq!(trace.iters(), 1);
    }

    #[test]
    fn oracle_trace_is_gradient_descent() {
        let inst: LeastSquaresInstance<f32> =
            sample_instance(&DistributionSpec::shaped(20, 5), &mut SeededRng::new(4, 0)).unwrap();
        let opts = SolveOptions {
            max_iters: 50,
            snapshots: true,
            ..SolveOptions::default()
        };
        let (x, trace) = iterative_solve(&OracleGradient::default(), &inst, 0.04, &opts).unwrap();
        assert_eq!(trace.reason, Termination::MaxIters);
        assert_eq!(x, gd_oracle(&inst.a, &inst.b, &inst.x0, 0.04, 50).unwrap());
    }

    #[test]
    fn large_steps_diverge() {
        let inst: LeastSquaresInstance<f64> =
            sample_instance(&DistributionSpec::shaped(20, 5), &mut SeededRng::new(5, 0)).unwrap();
        let (_, trace) = iterative_solve(&OracleGradient::default(), &inst, 1.0, &SolveOptions::default()).unwrap();
        assert_eq!(trace.reason, Termination::Diverged);
        assert!(iterative_solve(
            &OracleGradient::default(),
            &inst,
            1.0,
            &SolveOptions {
                tol: 0.0,
                ..Default::default()
            }
        )
        .is_err());
    }
}
