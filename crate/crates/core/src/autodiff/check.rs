use super::graph::{Eager, Graph};
use super::params::{GradStore, ParamStore};
use super::tape::Tape;
use crate::error::Result;
use crate::numerics::Scalar;

/// A scalar objective written against any graph backend.
pub trait Objective<T: Scalar> {
    fn loss<G: Graph<T>>(&self, g: &mut G) -> Result<G::Var>;
}

/// Loss value by plain forward evaluation.
pub fn eval_loss<T: Scalar, O: Objective<T>>(obj: &O, params: &ParamStore<T>) -> Result<T> {
    let mut g = Eager::new(params);
    let l = obj.loss(&mut g)?;
    Ok(g.value(&l).data()[0])
}

/// Loss value and reverse-mode gradient.
pub fn loss_and_grad<T: Scalar, O: Objective<T>>(obj: &O, params: &ParamStore<T>) -> Result<(T, GradStore<T>)> {
    let mut tape = Tape::new(params);
    let l = obj.loss(&mut tape)?;
    let value = tape.value(&l).data()[0];
    Ok((value, tape.backward(l)?))
}

/// Central differences `(f(θ+εe) − f(θ−εe)) / 2ε`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, params: &ParamStore<f64>, eps: f64) -> Result<GradStore<f64>>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut probe = params.clone();
    let mut out = params.zeros_like();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let n = params.get(name)?.len();
        for k in 0..n {
            let orig = params.get(name)?.data()[k];
            probe.get_mut(name)?.data_mut()[k] = orig + eps;
            let up = f(&probe)?;
            probe.get_mut(name)?.data_mut()[k] = orig - eps;
            let down = f(&probe)?;
            probe.get_mut(name)?.data_mut()[k] = orig;
            out.get_mut(name)?.data_mut()[k] = (up - down) / (2.0 * eps);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter attaining the maximum.
    pub worst: String,
}

/// Relative disagreement per parameter tensor,
/// `max|ad − fd| / max(max|ad|, max|fd|, 1e-12)`, maximized over tensors.
pub fn compare_grads(ad: &GradStore<f64>, fd: &GradStore<f64>) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for (name, a) in ad.iter() {
        let f = fd.get(name)?;
        let diff = a.max_abs_diff(f);
        let scale = a.max_abs().max(f.max_abs()).max(1e-12);
        let rel = diff / scale;
        if rel > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = rel.max(report.max_rel_err);
            report.worst = name.to_string();
        }
    }
    Ok(report)
}

/// Compare the taped gradient of `obj` with central differences in double precision.
pub fn grad_check<O: Objective<f64>>(obj: &O, params: &ParamStore<f64>, eps: f64) -> Result<GradCheckReport> {
    let (_, ad) = loss_and_grad(obj, params)?;
    let fd = finite_diff_grad(|p| eval_loss(obj, p), params, eps)?;
    compare_grads(&ad, &fd)
}
