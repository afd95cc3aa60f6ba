use serde::{Deserialize, Serialize};

use super::forward::baseconv_mixer;
use super::spec::{Arch, ModelSpec, PositionalEncoding};
use crate::autodiff::{Eager, ParamStore};
use crate::error::{shape_err, Result};
use crate::numerics::{gaussian, Scalar, SeededRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    GaussianScaled,
    Zeros,
    IdentityDebug,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Dense weight with the given fan-in.
    Weight(usize),
    Bias,
    Filter,
    Gain,
    Position,
}

/// Names, dims and roles of every parameter, in store order.
pub fn param_layout(spec: &ModelSpec) -> Vec<(String, Vec<usize>, ParamKind)> {
    use ParamKind::*;
    let (n, e) = (spec.seq_len, spec.emb);
    let mut v: Vec<(String, Vec<usize>, ParamKind)> = Vec::new();
    let mut push = |name: String, dims: Vec<usize>, kind| v.push((name, dims, kind));
    if spec.positional_encoding == PositionalEncoding::Learned {
        push("pos".into(), vec![n, e], Position);
    }
    for l in 0..spec.layers {
        let p = format!("l{l}.");
        if spec.use_layernorm {
            push(format!("{p}ln1.g"), vec![e], Gain);
            push(format!("{p}ln1.b"), vec![e], Bias);
        }
        match spec.arch {
            Arch::Baseconv => {
                push(format!("{p}w_gate"), vec![e, e], Weight(e));
                push(format!("{p}b_gate"), vec![n, e], Bias);
                push(format!("{p}w_in"), vec![e, e], Weight(e));
                push(format!("{p}b_in"), vec![n, e], Bias);
                push(format!("{p}h"), vec![spec.filter_len(), e], Filter);
                push(format!("{p}b_conv"), vec![n, e], Bias);
                push(format!("{p}w_out"), vec![e, e], Weight(e));
                push(format!("{p}b_out"), vec![n, e], Bias);
            }
            Arch::LinearAttention | Arch::Transformer => {
                for w in ["wq", "wk", "wv"] {
                    push(format!("{p}attn.{w}"), vec![e, e], Weight(e));
                }
                push(format!("{p}attn.bv"), vec![n, e], Bias);
                push(format!("{p}attn.wo"), vec![e, e], Weight(e));
                push(format!("{p}attn.bo"), vec![e], Bias);
            }
        }
        if spec.use_mlp {
            let hidden = spec.mlp_mult * e;
            if spec.use_layernorm {
                push(format!("{p}ln2.g"), vec![e], Gain);
                push(format!("{p}ln2.b"), vec![e], Bias);
            }
            push(format!("{p}mlp.w1"), vec![e, hidden], Weight(e));
            push(format!("{p}mlp.b1"), vec![hidden], Bias);
            push(format!("{p}mlp.w2"), vec![hidden, e], Weight(hidden));
            push(format!("{p}mlp.b2"), vec![e], Bias);
        }
    }
    if spec.use_layernorm {
        push("ln_f.g".into(), vec![e], Gain);
        push("ln_f.b".into(), vec![e], Bias);
    }
    push("readout.w".into(), vec![e, spec.out_dim], Weight(e));
    v
}

/// Fresh parameters for `spec`.
///
/// `GaussianScaled`: weights `N(0, 1/fan_in)`, filters `N(0, 1/N)`, biases 0,
/// gains 1, learned positions `N(0, 1/emb)`. `IdentityDebug`: every block
/// contributes zero (so the residual stream passes through) and the readout
/// selects the first `out_dim` channels.
pub fn init_params<T: Scalar>(spec: &ModelSpec, rng: &mut SeededRng, scheme: InitScheme) -> Result<ParamStore<T>> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let n = spec.seq_len;
    for (name, dims, kind) in param_layout(spec) {
        let t = match scheme {
            InitScheme::Zeros => Tensor::zeros(&dims),
            InitScheme::GaussianScaled => match kind {
                ParamKind::Weight(fan_in) => gaussian(rng, &dims, (1.0 / fan_in as f64).sqrt()),
                ParamKind::Filter => gaussian(rng, &dims, (1.0 / n as f64).sqrt()),
                ParamKind::Position => gaussian(rng, &dims, (1.0 / spec.emb as f64).sqrt()),
                ParamKind::Gain => Tensor::ones(&dims),
                ParamKind::Bias => Tensor::zeros(&dims),
            },
            InitScheme::IdentityDebug => identity_entry(spec, &name, &dims, kind),
        };
        store.insert(name, t)?;
    }
    Ok(store)
}

fn identity_entry<T: Scalar>(spec: &ModelSpec, name: &str, dims: &[usize], kind: ParamKind) -> Tensor<T> {
    if kind == ParamKind::Gain {
        return Tensor::ones(dims);
    }
    if name == "readout.w" {
        return Tensor::from_fn(dims, |k| {
            if k / dims[1] == k % dims[1] {
                T::one()
            } else {
                T::zero()
            }
        });
    }
    if spec.arch == Arch::Baseconv {
        if name.ends_with(".w_in") {
            return Tensor::eye(dims[0]);
        }
        if name.ends_with(".b_gate") {
            return Tensor::ones(dims);
        }
        if name.ends_with(".h") {
            let center = dims[0] - spec.seq_len;
            let mut h = Tensor::zeros(dims);
            for j in 0..dims[1] {
                h.set2(center, j, T::one());
            }
            return h;
        }
    }
    Tensor::zeros(dims)
}

/// Weights of a single BaseConv layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseConvLayerParams<T> {
    pub w_gate: Tensor<T>,
    pub b_gate: Tensor<T>,
    pub w_in: Tensor<T>,
    pub b_in: Tensor<T>,
    pub h: Tensor<T>,
    pub b_conv: Tensor<T>,
    pub w_out: Tensor<T>,
    pub b_out: Tensor<T>,
}

impl<T: Scalar> BaseConvLayerParams<T> {
    /// All-zero weights for sequence length `n`, width `e`; `causal` picks the filter length.
    pub fn zeros(n: usize, e: usize, causal: bool) -> Self {
        let hl = if causal { n } else { 2 * n - 1 };
        Self {
            w_gate: Tensor::zeros(&[e, e]),
            b_gate: Tensor::zeros(&[n, e]),
            w_in: Tensor::zeros(&[e, e]),
            b_in: Tensor::zeros(&[n, e]),
            h: Tensor::zeros(&[hl, e]),
            b_conv: Tensor::zeros(&[n, e]),
            w_out: Tensor::zeros(&[e, e]),
            b_out: Tensor::zeros(&[n, e]),
        }
    }

    pub fn is_causal(&self) -> bool {
        self.h.rows() == self.b_conv.rows()
    }

    /// Insert under `prefix` using the model's naming.
    pub fn insert_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        for (k, v) in self.entries() {
            store.insert(format!("{prefix}{k}"), v.clone())?;
        }
        Ok(())
    }

    /// Overwrite the entries under `prefix` in an existing store.
    pub fn write_into(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        for (k, v) in self.entries() {
            store.set(&format!("{prefix}{k}"), v.clone())?;
        }
        Ok(())
    }

    fn entries(&self) -> [(&'static str, &Tensor<T>); 8] {
        [
            ("w_gate", &self.w_gate),
            ("b_gate", &self.b_gate),
            ("w_in", &self.w_in),
            ("b_in", &self.b_in),
            ("h", &self.h),
            ("b_conv", &self.b_conv),
            ("w_out", &self.w_out),
            ("b_out", &self.b_out),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> BaseConvLayerParams<U> {
        BaseConvLayerParams {
            w_gate: self.w_gate.cast(),
            b_gate: self.b_gate.cast(),
            w_in: self.w_in.cast(),
            b_in: self.b_in.cast(),
            h: self.h.cast(),
            b_conv: self.b_conv.cast(),
            w_out: self.w_out.cast(),
            b_out: self.b_out.cast(),
        }
    }
}

/// One BaseConv layer (no residual) on `u` of shape `[N, E]` or `[B, N, E]`.
pub fn baseconv_layer_forward<T: Scalar>(p: &BaseConvLayerParams<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    let n = p.b_conv.rows();
    if u.rank() < 2 || u.rows() != n || u.cols() != p.w_in.rows() {
        return Err(shape_err("baseconv layer", format!("input {:?}", u.dims())));
    }
    let mut store = ParamStore::new();
    p.insert_into(&mut store, "")?;
    let mut g = Eager::new(&store);
    baseconv_mixer(&mut g, "", p.is_causal(), u)
}
