use super::spec::{Arch, ModelSpec, PositionalEncoding};
use crate::autodiff::{Eager, Graph, ParamStore};
use crate::error::{shape_err, Result};
use crate::numerics::{Scalar, Tensor};

/// Promote `[N, C]` to `[1, N, C]`; rank-3 input passes through.
pub(crate) fn as_batch<T: Scalar>(u: &Tensor<T>) -> Result<Tensor<T>> {
    match u.rank() {
        2 => u.clone().reshape(&[1, u.rows(), u.cols()]),
        3 => Ok(u.clone()),
        r => Err(shape_err("model input", format!("rank {r}"))),
    }
}

/// Zero-pad the raw prompt to the embedding width and append one-hot
/// positions on the right when the spec asks for them.
pub fn embed_input<T: Scalar>(spec: &ModelSpec, u: &Tensor<T>) -> Result<Tensor<T>> {
    let u = as_batch(u)?;
    let (b, n, c) = (u.dims()[0], u.dims()[1], u.dims()[2]);
    if n != spec.seq_len || c != spec.in_dim {
        return Err(shape_err(
            "model input",
            format!("got [{b}, {n}, {c}], spec wants [_, {}, {}]", spec.seq_len, spec.in_dim),
        ));
    }
    let e = spec.emb;
    let one_hot = spec.positional_encoding == PositionalEncoding::OneHot;
    let mut x = Tensor::zeros(&[b, n, e]);
    let xd = x.data_mut();
    for s in 0..b {
        for i in 0..n {
            let dst = (s * n + i) * e;
            xd[dst..dst + c].copy_from_slice(&u.data()[(s * n + i) * c..(s * n + i + 1) * c]);
            if one_hot {
                xd[dst + e - n + i] = T::one();
            }
        }
    }
    Ok(x)
}

fn affine<T: Scalar, G: Graph<T>>(g: &mut G, x: &G::Var, w: &str, b: Option<&str>) -> Result<G::Var> {
    let w = g.param(w)?;
    let y = g.matmul(x, &w)?;
    match b {
        Some(b) => {
            let b = g.param(b)?;
            g.add(&y, &b)
        }
        None => Ok(y),
    }
}

/// `((x·W_gate + b_gate) ⊙ (h ∗ (x·W_in + b_in) + b_conv))·W_out + b_out`.
/// The two-sided variant end-pads the sequence with `N-1` zero rows, runs the
/// causal kernel with a `2N-1` filter and keeps rows `[N-1, 2N-1)`, so filter
/// row `N-1+s` couples each position to the one `s` steps earlier (`s < 0`: later).
pub fn baseconv_mixer<T: Scalar, G: Graph<T>>(g: &mut G, prefix: &str, causal: bool, x: &G::Var) -> Result<G::Var> {
    let name = |s: &str| format!("{prefix}{s}");
    let gate = affine(g, x, &name("w_gate"), Some(&name("b_gate")))?;
    let inner = affine(g, x, &name("w_in"), Some(&name("b_in")))?;
    let h = g.param(&name("h"))?;
    let conv = if causal {
        g.conv(&h, &inner)?
    } else {
        let dims = g.value(&inner).dims().to_vec();
        let (r, n) = (dims.len(), dims[dims.len() - 2]);
        let mut pad_dims = dims.clone();
        pad_dims[r - 2] = n - 1;
        let pad = g.constant(Tensor::zeros(&pad_dims));
        let padded = g.concat(&[&inner, &pad], r - 2)?;
        let full = g.conv(&h, &padded)?;
        g.slice(&full, r - 2, n - 1, 2 * n - 1)?
    };
    let bc = g.param(&name("b_conv"))?;
    let conv = g.add(&conv, &bc)?;
    let y = g.hadamard(&gate, &conv)?;
    affine(g, &y, &name("w_out"), Some(&name("b_out")))
}

/// Multi-head attention. `softmax` selects `softmax(QKᵀ/√d_h + M)(V+B)`;
/// otherwise the polynomial form `(QKᵀ)(V+B)`, masked only when causal.
pub fn attention_mixer<T: Scalar, G: Graph<T>>(
    g: &mut G,
    prefix: &str,
    heads: usize,
    causal: bool,
    softmax: bool,
    x: &G::Var,
) -> Result<G::Var> {
    let name = |s: &str| format!("{prefix}{s}");
    let q = affine(g, x, &name("wq"), None)?;
    let k = affine(g, x, &name("wk"), None)?;
    let v = affine(g, x, &name("wv"), Some(&name("bv")))?;
    let dims = g.value(&q).dims().to_vec();
    let (r, n, e) = (dims.len(), dims[dims.len() - 2], dims[dims.len() - 1]);
    if heads == 0 || e % heads != 0 {
        return Err(shape_err("attention", format!("emb {e} vs heads {heads}")));
    }
    let dh = e / heads;
    let mask = (!softmax && causal).then(|| {
        g.constant(Tensor::from_fn(&[n, n], |idx| {
            if idx % n <= idx / n {
                T::one()
            } else {
                T::zero()
            }
        }))
    });
    let mut outs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q.clone(), k.clone(), v.clone())
        } else {
            let (a, b) = (hd * dh, (hd + 1) * dh);
            (
                g.slice(&q, r - 1, a, b)?,
                g.slice(&k, r - 1, a, b)?,
                g.slice(&v, r - 1, a, b)?,
            )
        };
        let kt = g.transpose(&kh)?;
        let mut s = g.matmul(&qh, &kt)?;
        if softmax {
            s = g.scale(&s, 1.0 / (dh as f64).sqrt())?;
            s = g.softmax_rows(&s, causal)?;
        } else if let Some(m) = &mask {
            s = g.hadamard(&s, m)?;
        }
        outs.push(g.matmul(&s, &vh)?);
    }
    let cat = if heads == 1 {
        outs.pop().expect("one head")
    } else {
        let refs: Vec<&G::Var> = outs.iter().collect();
        g.concat(&refs, r - 1)?
    };
    affine(g, &cat, &name("wo"), Some(&name("bo")))
}

pub fn mlp<T: Scalar, G: Graph<T>>(g: &mut G, prefix: &str, x: &G::Var) -> Result<G::Var> {
    let h = affine(g, x, &format!("{prefix}w1"), Some(&format!("{prefix}b1")))?;
    let h = g.relu(&h)?;
    affine(g, &h, &format!("{prefix}w2"), Some(&format!("{prefix}b2")))
}

pub fn layer_norm_affine<T: Scalar, G: Graph<T>>(g: &mut G, prefix: &str, x: &G::Var) -> Result<G::Var> {
    let y = g.layer_norm(x)?;
    let gain = g.param(&format!("{prefix}g"))?;
    let y = g.hadamard(&y, &gain)?;
    let bias = g.param(&format!("{prefix}b"))?;
    g.add(&y, &bias)
}

/// One residual block: `x + mixer(LN?(x))`, then `x + MLP(LN?(x))` when enabled.
pub fn block<T: Scalar, G: Graph<T>>(g: &mut G, spec: &ModelSpec, layer: usize, x: &G::Var) -> Result<G::Var> {
    let p = format!("l{layer}.");
    let pre = if spec.use_layernorm {
        layer_norm_affine(g, &format!("{p}ln1."), x)?
    } else {
        x.clone()
    };
    let mixed = match spec.arch {
        Arch::Baseconv => baseconv_mixer(g, &p, spec.causal, &pre)?,
        Arch::LinearAttention => attention_mixer(g, &format!("{p}attn."), spec.heads, spec.causal, false, &pre)?,
        Arch::Transformer => attention_mixer(g, &format!("{p}attn."), spec.heads, spec.causal, true, &pre)?,
    };
    let mut x = g.add(x, &mixed)?;
    if spec.use_mlp {
        let pre = if spec.use_layernorm {
            layer_norm_affine(g, &format!("{p}ln2."), &x)?
        } else {
            x.clone()
        };
        let m = mlp(g, &format!("{p}mlp."), &pre)?;
        x = g.add(&x, &m)?;
    }
    Ok(x)
}

/// Residual-stream states: the embedded input followed by the output of each block.
pub fn forward_states<T: Scalar, G: Graph<T>>(g: &mut G, spec: &ModelSpec, u: &Tensor<T>) -> Result<Vec<G::Var>> {
    let x0 = g.constant(embed_input(spec, u)?);
    let mut x = if spec.positional_encoding == PositionalEncoding::Learned {
        let pos = g.param("pos")?;
        g.add(&x0, &pos)?
    } else {
        x0
    };
    let mut states = Vec::with_capacity(spec.layers + 1);
    states.push(x.clone());
    for l in 0..spec.layers {
        x = block(g, spec, l, &x)?;
        states.push(x.clone());
    }
    Ok(states)
}

/// Final norm (when enabled) and the linear readout to `out_dim` channels.
pub fn project_out<T: Scalar, G: Graph<T>>(g: &mut G, spec: &ModelSpec, x: &G::Var) -> Result<G::Var> {
    let x = if spec.use_layernorm {
        layer_norm_affine(g, "ln_f.", x)?
    } else {
        x.clone()
    };
    affine(g, &x, "readout.w", None)
}

/// Full model: `[B, N, in_dim]` prompts to `[B, N, out_dim]` outputs.
pub fn forward<T: Scalar, G: Graph<T>>(g: &mut G, spec: &ModelSpec, u: &Tensor<T>) -> Result<G::Var> {
    let states = forward_states(g, spec, u)?;
    let last = states.last().expect("embedded input");
    project_out(g, spec, last)
}

/// Eager evaluation; output rank follows the input rank.
pub fn predict<T: Scalar>(spec: &ModelSpec, store: &ParamStore<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Eager::new(store);
    let y = forward(&mut g, spec, u)?;
    if u.rank() == 2 {
        y.reshape(&[spec.seq_len, spec.out_dim])
    } else {
        Ok(y)
    }
}

/// Eager residual states after each block (index 0 is the embedded input), unbatched.
pub fn residual_states<T: Scalar>(spec: &ModelSpec, store: &ParamStore<T>, u: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let mut g = Eager::new(store);
    forward_states(&mut g, spec, u)
}

/// Which prompt positions a task reads its prediction from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadRows {
    Last,
    All,
}

/// Slice the task prediction out of the model output: rows per `rows`,
/// channels `[0, cols)`.
pub fn readout<T: Scalar, G: Graph<T>>(g: &mut G, out: &G::Var, rows: ReadRows, cols: usize) -> Result<G::Var> {
    let dims = g.value(out).dims().to_vec();
    let r = dims.len();
    let n = dims[r - 2];
    if cols > dims[r - 1] {
        return Err(shape_err("readout", format!("{cols} columns of {:?}", dims)));
    }
    let y = match rows {
        ReadRows::Last => g.slice(out, r - 2, n - 1, n)?,
        ReadRows::All => out.clone(),
    };
    if cols == dims[r - 1] {
        Ok(y)
    } else {
        g.slice(&y, r - 1, 0, cols)
    }
}

/// Mean squared error of the task readout against fixed targets.
pub struct Supervised<'a, T> {
    pub spec: &'a ModelSpec,
    pub inputs: &'a Tensor<T>,
    /// `[B, 1, cols]` for `ReadRows::Last`, `[B, N, cols]` for `ReadRows::All`.
    pub targets: &'a Tensor<T>,
    pub rows: ReadRows,
    pub cols: usize,
}

impl<T: Scalar> crate::autodiff::Objective<T> for Supervised<'_, T> {
    fn loss<G: Graph<T>>(&self, g: &mut G) -> Result<G::Var> {
        let out = forward(g, self.spec, self.inputs)?;
        let pred = readout(g, &out, self.rows, self.cols)?;
        let t = g.constant(as_batch(self.targets)?);
        g.mse(&pred, &t)
    }
}
