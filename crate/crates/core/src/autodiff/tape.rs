use indexmap::IndexMap;

use super::graph::{eval_op, Graph, Op, LN_EPS};
use super::params::{GradStore, ParamStore};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{ops, Scalar, Tensor};

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Source {
    Param,
    Constant,
    Op(Op, Vec<NodeId>),
}

#[derive(Clone, Debug)]
struct Node<T> {
    source: Source,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only record of a forward evaluation. Every parameter of the store is
/// registered as a leaf up front, so gradients exist for unused ones too.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: IndexMap<String, NodeId>,
}

impl<T: Scalar> Tape<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let mut nodes = Vec::with_capacity(store.len() * 4);
        let mut params = IndexMap::new();
        for (name, t) in store.iter() {
            params.insert(name.to_string(), nodes.len());
            nodes.push(Node {
                source: Source::Param,
                value: t.clone(),
                requires_grad: true,
            });
        }
        Self { nodes, params }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse pass from a scalar node. Nodes are visited once each in reverse
    /// insertion order; contributions accumulate in that order.
    pub fn backward(&self, loss: NodeId) -> Result<GradStore<T>> {
        let lv = &self
            .nodes
            .get(loss)
            .ok_or_else(|| Error::Contract(format!("no node {loss}")))?
            .value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                lv.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss + 1];
        grads[loss] = Some(Tensor::ones(lv.dims()));
        for id in (0..=loss).rev() {
            let node = &self.nodes[id];
            let Source::Op(op, inputs) = &node.source else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let xs: Vec<&Tensor<T>> = inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let need: Vec<bool> = inputs.iter().map(|&i| self.nodes[i].requires_grad).collect();
            let local = vjp(op, &xs, &node.value, &g, &need)?;
            for ((&inp, gi), &want) in inputs.iter().zip(local).zip(&need) {
                if !want {
                    continue;
                }
                let Some(gi) = gi else { continue };
                match &mut grads[inp] {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(gi.data()) {
                            *a = *a + b;
                        }
                    }
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        let mut out = GradStore::new();
        for (name, &id) in &self.params {
            let g = match grads.get_mut(id).and_then(Option::take) {
                Some(g) => g,
                None => Tensor::zeros(self.nodes[id].value.dims()),
            };
            out.insert(name.clone(), g)?;
        }
        Ok(out)
    }
}

impl<T: Scalar> Graph<T> for Tape<T> {
    type Var = NodeId;

    fn param(&mut self, name: &str) -> Result<NodeId> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            source: Source::Constant,
            value: t,
            requires_grad: false,
        });
        self.nodes.len() - 1
    }

    fn apply(&mut self, op: Op, inputs: &[&NodeId]) -> Result<NodeId> {
        let ids: Vec<NodeId> = inputs.iter().map(|&&i| i).collect();
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(Error::Contract(format!("unknown node {bad}")));
        }
        let xs: Vec<&Tensor<T>> = ids.iter().map(|&i| &self.nodes[i].value).collect();
        let value = eval_op(&op, &xs)?;
        let requires_grad = ids.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            source: Source::Op(op, ids),
            value,
            requires_grad,
        });
        Ok(self.nodes.len() - 1)
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Tensor<T> {
        &self.nodes[*v].value
    }
}

/// Sum `t` over leading blocks so that it has the trailing shape `dims`.
fn reduce_to<T: Scalar>(t: &Tensor<T>, dims: &[usize]) -> Result<Tensor<T>> {
    if t.dims() == dims {
        return Ok(t.clone());
    }
    let inner: usize = dims.iter().product();
    let mut acc = vec![T::zero(); inner];
    for chunk in t.data().chunks(inner) {
        for (a, &v) in acc.iter_mut().zip(chunk) {
            *a = *a + v;
        }
    }
    Tensor::new(dims, acc)
}

/// Vector-Jacobian products for one node. Entries are `None` where the input
/// does not need a gradient.
fn vjp<T: Scalar>(
    op: &Op,
    x: &[&Tensor<T>],
    y: &Tensor<T>,
    g: &Tensor<T>,
    need: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    let out = match op {
        Op::Matmul => {
            let (a, b) = (x[0], x[1]);
            let ga = if need[0] {
                Some(ops::matmul(g, &ops::transpose(b)?)?)
            } else {
                None
            };
            let gb = if need[1] {
                Some(if a.rank() == 3 && b.rank() == 2 {
                    let flat_a = a.clone().reshape(&[a.batch() * a.rows(), a.cols()])?;
                    let flat_g = g.clone().reshape(&[g.batch() * g.rows(), g.cols()])?;
                    ops::matmul(&ops::transpose(&flat_a)?, &flat_g)?
                } else {
                    ops::matmul(&ops::transpose(a)?, g)?
                })
            } else {
                None
            };
            vec![ga, gb]
        }
        Op::CausalConv => {
            let (h, u) = (x[0], x[1]);
            let gh = if need[0] { Some(conv_filter_grad(u, g)?) } else { None };
            let gu = if need[1] { Some(conv_input_grad(h, g)?) } else { None };
            vec![gh, gu]
        }
        Op::Hadamard => {
            let (a, b) = (x[0], x[1]);
            let ga = if need[0] {
                Some(ops::hadamard_broadcast(g, b)?)
            } else {
                None
            };
            let gb = if need[1] {
                Some(reduce_to(&ops::hadamard(g, a)?, b.dims())?)
            } else {
                None
            };
            vec![ga, gb]
        }
        Op::Add => {
            let gb = if need[1] {
                Some(reduce_to(g, x[1].dims())?)
            } else {
                None
            };
            vec![need[0].then(|| g.clone()), gb]
        }
        Op::Scale(c) => vec![Some(ops::scale(g, T::cast_from(*c)))],
        Op::Slice { axis, start, end } => {
            let dims = x[0].dims();
            let mut before = dims.to_vec();
            before[*axis] = *start;
            let mut after = dims.to_vec();
            after[*axis] = dims[*axis] - end;
            let z0 = Tensor::zeros(&before);
            let z1 = Tensor::zeros(&after);
            let mut parts = Vec::with_capacity(3);
            if *start > 0 {
                parts.push(&z0);
            }
            parts.push(g);
            if *end < dims[*axis] {
                parts.push(&z1);
            }
            vec![Some(ops::concat(&parts, *axis)?)]
        }
        Op::Concat { axis } => {
            let mut off = 0;
            let mut v = Vec::with_capacity(x.len());
            for (p, &want) in x.iter().zip(need) {
                let len = p.dims()[*axis];
                v.push(if want {
                    Some(ops::slice(g, *axis, off, off + len)?)
                } else {
                    None
                });
                off += len;
            }
            v
        }
        Op::Relu => {
            let data = x[0]
                .data()
                .iter()
                .zip(g.data())
                .map(|(&xi, &gi)| if xi > T::zero() { gi } else { T::zero() })
                .collect();
            vec![Some(Tensor::new(x[0].dims(), data)?)]
        }
        Op::SoftmaxRows { .. } => {
            let n = y.cols();
            let mut out = Vec::with_capacity(y.len());
            for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                out.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dot)));
            }
            vec![Some(Tensor::new(y.dims(), out)?)]
        }
        Op::LayerNormRows => {
            let n = y.cols();
            let nf = T::cast_from(n as f64);
            let eps = T::cast_from(LN_EPS);
            let mut out = Vec::with_capacity(y.len());
            for ((xr, yr), gr) in x[0].data().chunks(n).zip(y.data().chunks(n)).zip(g.data().chunks(n)) {
                let mean = xr.iter().fold(T::zero(), |s, &v| s + v) / nf;
                let var = xr.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / nf;
                let inv = T::one() / (var + eps).sqrt();
                let gmean = gr.iter().fold(T::zero(), |s, &v| s + v) / nf;
                let gy = yr.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b) / nf;
                out.extend(yr.iter().zip(gr).map(|(&yi, &gi)| inv * (gi - gmean - yi * gy)));
            }
            vec![Some(Tensor::new(y.dims(), out)?)]
        }
        Op::MseLoss => {
            let (p, t) = (x[0], x[1]);
            let c = g.data()[0] * T::cast_from(2.0 / p.len() as f64);
            let gp = Tensor::new(
                p.dims(),
                p.data().iter().zip(t.data()).map(|(&a, &b)| c * (a - b)).collect(),
            )?;
            let gt = need[1].then(|| ops::scale(&gp, -T::one()));
            vec![need[0].then_some(gp), gt]
        }
        Op::Transpose => vec![Some(ops::transpose(g)?)],
    };
    Ok(out)
}

/// `dU[m,j] = Σ_{i≥m} H[i−m,j]·dV[i,j]`, per batch item.
fn conv_input_grad<T: Scalar>(h: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = (h.rows(), h.cols());
    if g.rank() < 2 || g.dims()[g.rank() - 2..] != *h.dims() {
        return Err(shape_err("causal_conv_cols grad", format!("{:?}", g.dims())));
    }
    let hd = h.data();
    let mut out = vec![T::zero(); g.len()];
    for (src, dst) in g.data().chunks(n * d).zip(out.chunks_mut(n * d)) {
        for m in 0..n {
            let urow = &mut dst[m * d..(m + 1) * d];
            for i in m..n {
                let hrow = &hd[(i - m) * d..(i - m + 1) * d];
                let grow = &src[i * d..(i + 1) * d];
                for ((u, &hv), &gv) in urow.iter_mut().zip(hrow).zip(grow) {
                    *u = *u + hv * gv;
                }
            }
        }
    }
    Tensor::new(g.dims(), out)
}

/// `dH[k,j] = Σ_batch Σ_{i≥k} dV[i,j]·U[i−k,j]`.
fn conv_filter_grad<T: Scalar>(u: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = (u.rows(), u.cols());
    let mut out = vec![T::zero(); n * d];
    for (us, gs) in u.data().chunks(n * d).zip(g.data().chunks(n * d)) {
        for k in 0..n {
            let hrow = &mut out[k * d..(k + 1) * d];
            for i in k..n {
                let grow = &gs[i * d..(i + 1) * d];
                let urow = &us[(i - k) * d..(i - k + 1) * d];
                for ((h, &gv), &uv) in hrow.iter_mut().zip(grow).zip(urow) {
                    *h = *h + gv * uv;
                }
            }
        }
    }
    Tensor::new(&[n, d], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian, SeededRng};

    fn store(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (k, v) in entries {
            s.insert(*k, v.clone()).unwrap();
        }
        s
    }

    #[test]
    fn add_zeros_and_mse_self() {
        let x = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let mut tape = Tape::new(&store(&[("x", x.clone())]));
        let p = tape.param("x").unwrap();
        let z = tape.constant(Tensor::zeros(&[2, 2]));
        let y = tape.add(&p, &z).unwrap();
        assert_eq!(tape.value(&y), &x);
        let l = tape.mse(&y, &p).unwrap();
        assert_eq!(tape.value(&l).data()[0], 0.0);
    }

    #[test]
    fn mse_against_constant_has_analytic_gradient() {
        let x = Tensor::<f64>::from_vec(&[1.0, -2.0, 0.5, 4.0]);
        let c = Tensor::<f64>::from_vec(&[0.0, 1.0, 1.0, 1.0]);
        let mut tape = Tape::new(&store(&[("x", x.clone())]));
        let p = tape.param("x").unwrap();
        let k = tape.constant(c.clone());
        let l = tape.mse(&p, &k).unwrap();
        let g = tape.backward(l).unwrap();
        let expect: Vec<f64> = x
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| 2.0 * (a - b) / 4.0)
            .collect();
        assert_eq!(g.get("x").unwrap().data(), &expect[..]);
    }

    #[test]
    fn hadamard_gradient_is_analytic() {
        let mut rng = SeededRng::new(1, 0);
        let a: Tensor<f64> = gaussian(&mut rng, &[3, 4], 1.0);
        let b: Tensor<f64> = gaussian(&mut rng, &[3, 4], 1.0);
        let mut tape = Tape::new(&store(&[("a", a.clone()), ("b", b.clone())]));
        let (pa, pb) = (tape.param("a").unwrap(), tape.param("b").unwrap());
        let prod = tape.hadamard(&pa, &pb).unwrap();
        let zero = tape.constant(Tensor::zeros(&[3, 4]));
        let l = tape.mse(&prod, &zero).unwrap();
        let g = tape.backward(l).unwrap();
        for i in 0..12 {
            let (ai, bi) = (a.data()[i], b.data()[i]);
            let want = 2.0 * ai * bi * bi / 12.0;
            assert!((g.get("a").unwrap().data()[i] - want).abs() <= 1e-15 * want.abs().max(1.0));
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new(&store(&[("x", Tensor::ones(&[2]))]));
        let p = tape.param("x").unwrap();
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_parameters_get_zero_gradients() {
        let mut tape = Tape::new(&store(&[("x", Tensor::ones(&[2])), ("unused", Tensor::ones(&[3]))]));
        let p = tape.param("x").unwrap();
        let c = tape.constant(Tensor::zeros(&[2]));
        let l = tape.mse(&p, &c).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get("unused").unwrap(), &Tensor::zeros(&[3]));
        assert_eq!(g.names().collect::<Vec<_>>(), vec!["x", "unused"]);
    }
}
