//! Hand-compiled BaseConv weights for the linear-algebra primitives and for
//! gradient descent on least squares, plus helpers to check them against the
//! reference oracles.
//!
//! Every builder returns a [`Construction`]: an ordinary BaseConv [`ModelSpec`]
//! (no MLP, no LayerNorm) with a double-precision [`ParamStore`] whose names
//! match trained models, so the same forward, checkpoint and harness code
//! runs them.

mod build;
mod verify;

pub use build::{
    build, build_gd_causal, build_gd_noncausal, build_gradient_model, build_linear, build_multiply, build_read,
};
pub use verify::{verify_batched, verify_construction, VerifyReport};

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{shape_err, Error, Result};
use crate::models::{predict, residual_states, ModelSpec, ReadRows};
use crate::numerics::{DType, Scalar, Tensor};
use crate::tasks::{embed_prompt, LeastSquaresInstance};

/// What a construction computes. Index parameters must lie in `[0, N)` or `[0, D)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstructionKind {
    /// Copy columns `[a, b)` of row `i` into row `j`. `a, b` default to `0, D`.
    Read {
        n: usize,
        d: usize,
        i: usize,
        j: usize,
        #[serde(default)]
        a: Option<usize>,
        #[serde(default)]
        b: Option<usize>,
    },
    /// `u·H` with `H` given row by row (`D` rows of `d_out` entries).
    Linear { n: usize, h: Vec<Vec<f64>> },
    Multiply {
        n: usize,
        d: usize,
        a: usize,
        b: usize,
        d_out: usize,
    },
    /// `k` gradient-descent iterates, three two-sided layers each.
    GdNoncausal {
        n: usize,
        d: usize,
        eta: f64,
        k: usize,
        #[serde(default)]
        normalized: bool,
    },
    /// Two causal preparation layers, then one layer per iterate.
    GdCausal {
        n: usize,
        d: usize,
        eta: f64,
        k: usize,
        #[serde(default)]
        normalized: bool,
    },
    /// Causal three-layer model whose readout is `∇L(x0)`.
    GradientModel {
        n: usize,
        d: usize,
        #[serde(default)]
        normalized: bool,
    },
}

fn default_dtype() -> DType {
    DType::Double
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionSpec {
    pub construction: ConstructionKind,
    /// Requested embedding width; the builder's minimum is used when absent.
    #[serde(default)]
    pub emb: Option<usize>,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
}

/// How raw data becomes the model input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// Primitive data `[N, D]`.
    Data,
    /// `[N+1, D+1]`: rows `aᵢ | bᵢ`, last row `x0 | 0`.
    Prompt,
    /// `[N, 2D+1]`: rows `aᵢ | bᵢ | x0`.
    Broadcast,
}

/// Named channel range of the embedding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Construction {
    pub kind: ConstructionKind,
    pub spec: ModelSpec,
    pub params: ParamStore<f64>,
    pub layout: Vec<Block>,
    pub input: InputFormat,
    pub rows: ReadRows,
    /// Layers making up one iterate, and the layers before the first.
    pub layers_per_iterate: usize,
    pub prep_layers: usize,
}

impl Construction {
    pub fn params_as<T: Scalar>(&self) -> ParamStore<T> {
        self.params.cast()
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.layout.iter().find(|b| b.name == name)
    }

    /// Plain-text table of the embedding layout.
    pub fn layout_table(&self) -> String {
        let mut s = format!("{:<10} {:>6} {:>6}\n", "block", "start", "width");
        for b in &self.layout {
            s.push_str(&format!("{:<10} {:>6} {:>6}\n", b.name, b.start, b.len));
        }
        s.push_str(&format!("{:<10} {:>6} {:>6}\n", "total", 0, self.spec.emb));
        s
    }

    /// Model input for a least-squares instance.
    pub fn prompt<T: Scalar>(&self, inst: &LeastSquaresInstance<T>) -> Result<Tensor<T>> {
        match self.input {
            InputFormat::Prompt => Ok(embed_prompt(&inst.a, &inst.b, Some(&inst.x0))),
            InputFormat::Broadcast => Ok(broadcast_prompt(&inst.a, &inst.b, &inst.x0)),
            InputFormat::Data => Err(Error::Contract("primitive constructions take raw data".into())),
        }
    }

    /// Prediction for `[N_seq, in]` or `[B, N_seq, in]` input.
    pub fn predict<T: Scalar>(&self, params: &ParamStore<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
        let out = predict(&self.spec, params, u)?;
        select_rows(&out, self.rows)
    }

    /// Output vector for one least-squares instance (final position, `[D]`).
    pub fn run<T: Scalar>(&self, params: &ParamStore<T>, inst: &LeastSquaresInstance<T>) -> Result<Tensor<T>> {
        let y = self.predict(params, &self.prompt(inst)?)?;
        let len = y.len();
        y.reshape(&[len])
    }

    /// Iterate after `t` steps read from the intermediate residual stream
    /// (last position, iterate block). Only for gradient-descent constructions.
    pub fn iterates<T: Scalar>(&self, params: &ParamStore<T>, u: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let x = self
            .block("x")
            .ok_or_else(|| Error::Contract("construction has no iterate block".into()))?
            .clone();
        if self.layers_per_iterate == 0 {
            return Err(Error::Contract("construction is not iterative".into()));
        }
        let states = residual_states(&self.spec, params, u)?;
        let mut out = Vec::new();
        let mut layer = self.prep_layers;
        while layer < states.len() {
            let s = &states[layer];
            let n = s.dims()[s.rank() - 2];
            let e = s.dims()[s.rank() - 1];
            let row = &s.data()[(n - 1) * e..n * e];
            out.push(Tensor::new(&[x.len], row[x.range()].to_vec())?);
            layer += self.layers_per_iterate;
        }
        Ok(out)
    }
}

/// `[N, 2D+1]` input with `x0` copied into every row.
pub fn broadcast_prompt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, x0: &Tensor<T>) -> Tensor<T> {
    let (n, d) = (a.rows(), a.cols());
    Tensor::from_fn(&[n, 2 * d + 1], |k| {
        let (i, c) = (k / (2 * d + 1), k % (2 * d + 1));
        if c < d {
            a.at2(i, c)
        } else if c == d {
            b.data()[i]
        } else {
            x0.data()[c - d - 1]
        }
    })
}

/// Keep only the final position when `rows` is `Last`.
fn select_rows<T: Scalar>(out: &Tensor<T>, rows: ReadRows) -> Result<Tensor<T>> {
    match rows {
        ReadRows::All => Ok(out.clone()),
        ReadRows::Last => {
            let r = out.rank();
            if r < 2 {
                return Err(shape_err("select_rows", format!("{:?}", out.dims())));
            }
            let (n, c) = (out.dims()[r - 2], out.dims()[r - 1]);
            let b = out.len() / (n * c);
            let mut v = Vec::with_capacity(b * c);
            for s in 0..b {
                let base = (s * n + n - 1) * c;
                v.extend_from_slice(&out.data()[base..base + c]);
            }
            let mut dims = out.dims().to_vec();
            dims[r - 2] = 1;
            Tensor::new(&dims, v)
        }
    }
}
