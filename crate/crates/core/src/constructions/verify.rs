use serde::{Deserialize, Serialize};

use super::Construction;
use crate::error::{shape_err, Result};
use crate::numerics::{Scalar, SeededRng, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub mse: f64,
    pub max_abs_err: f64,
    pub samples: usize,
}

/// Samples evaluated per forward call.
const CHUNK: usize = 256;

/// Compare `model` against an oracle over `n_samples` fresh draws. `sampler`
/// returns `(input, expected)` for one sample; `model` maps a stacked batch
/// `[B, ...input]` to `[B, ...expected]`. Sample `s` draws from
/// `root.derive(s)`, so the report does not depend on the batch size.
pub fn verify_batched<T: Scalar>(
    root: &SeededRng,
    n_samples: usize,
    mut sampler: impl FnMut(&mut SeededRng) -> Result<(Tensor<T>, Tensor<T>)>,
    mut model: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<VerifyReport> {
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut max_abs = 0.0f64;
    let mut s = 0usize;
    while s < n_samples {
        let b = CHUNK.min(n_samples - s);
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let (mut in_dims, mut out_dims) = (Vec::new(), Vec::new());
        for k in 0..b {
            let (u, y) = sampler(&mut root.derive((s + k) as u64))?;
            in_dims = u.dims().to_vec();
            out_dims = y.dims().to_vec();
            inputs.extend_from_slice(u.data());
            targets.extend_from_slice(y.data());
        }
        let stack = |dims: &[usize], v: Vec<T>| {
            let mut full = vec![b];
            full.extend_from_slice(dims);
            Tensor::new(&full, v)
        };
        let pred = model(&stack(&in_dims, inputs)?)?;
        let want = stack(&out_dims, targets)?;
        if pred.dims() != want.dims() {
            return Err(shape_err(
                "verify",
                format!("model {:?} vs oracle {:?}", pred.dims(), want.dims()),
            ));
        }
        for (&p, &w) in pred.data().iter().zip(want.data()) {
            let e = p.as_f64() - w.as_f64();
            sq += e * e;
            max_abs = max_abs.max(e.abs());
        }
        count += want.len();
        s += b;
    }
    Ok(VerifyReport {
        mse: if count == 0 { 0.0 } else { sq / count as f64 },
        max_abs_err: max_abs,
        samples: n_samples,
    })
}

/// [`verify_batched`] with the construction's own forward in precision `T`.
pub fn verify_construction<T: Scalar>(
    c: &Construction,
    root: &SeededRng,
    n_samples: usize,
    sampler: impl FnMut(&mut SeededRng) -> Result<(Tensor<T>, Tensor<T>)>,
) -> Result<VerifyReport> {
    let params = c.params_as::<T>();
    verify_batched(root, n_samples, sampler, |u| c.predict(&params, u))
}
