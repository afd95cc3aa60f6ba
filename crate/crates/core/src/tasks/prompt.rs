use serde::{Deserialize, Serialize};

use super::instance::{sample_instance, DistributionSpec, LeastSquaresInstance};
use super::oracles::{gd_oracle, grad_oracle};
use crate::error::{shape_err, Error, Result};
use crate::models::ReadRows;
use crate::numerics::{gaussian, Scalar, SeededRng, Tensor};

/// Task description as written in configs. Primitive parameters left unset
/// are drawn once from the task seed when the task is resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    LeastSquares {
        dist: DistributionSpec,
    },
    Gradient {
        dist: DistributionSpec,
        #[serde(default)]
        normalized: bool,
    },
    KIter {
        dist: DistributionSpec,
        k: usize,
    },
    Read {
        n: usize,
        d: usize,
        #[serde(default)]
        i: Option<usize>,
        #[serde(default)]
        j: Option<usize>,
    },
    Linear {
        n: usize,
        d: usize,
        #[serde(default = "one_col")]
        d_out: usize,
        /// Row-major `d × d_out` map; drawn from `N(0, 3)` when absent.
        #[serde(default)]
        h: Option<Vec<f64>>,
    },
    Multiply {
        n: usize,
        d: usize,
        #[serde(default)]
        a: Option<usize>,
        #[serde(default)]
        b: Option<usize>,
        #[serde(default)]
        d_out: Option<usize>,
    },
}

fn one_col() -> usize {
    1
}

/// Task with every parameter fixed.
#[derive(Clone, Debug, PartialEq)]
pub enum Task {
    LeastSquares {
        dist: DistributionSpec,
    },
    Gradient {
        dist: DistributionSpec,
        normalized: bool,
    },
    KIter {
        dist: DistributionSpec,
        k: usize,
    },
    Read {
        n: usize,
        d: usize,
        i: usize,
        j: usize,
    },
    Linear {
        n: usize,
        d: usize,
        h: Tensor<f64>,
    },
    Multiply {
        n: usize,
        d: usize,
        a: usize,
        b: usize,
        d_out: usize,
    },
}

/// Variance of each entry of a sampled Linear map.
pub const LINEAR_MAP_VARIANCE: f64 = 3.0;

impl TaskSpec {
    pub fn resolve(&self, rng: &mut SeededRng) -> Result<Task> {
        let task = match self.clone() {
            TaskSpec::LeastSquares { dist } => Task::LeastSquares { dist },
            TaskSpec::Gradient { dist, normalized } => Task::Gradient { dist, normalized },
            TaskSpec::KIter { dist, k } => Task::KIter { dist, k },
            TaskSpec::Read { n, d, i, j } => {
                if n < 2 {
                    return Err(Error::Config("read needs n >= 2".into()));
                }
                let (i, j) = match (i, j) {
                    (Some(i), Some(j)) => (i, j),
                    (None, None) => {
                        let i = rng.below(n);
                        let mut j = rng.below(n - 1);
                        if j >= i {
                            j += 1;
                        }
                        (i, j)
                    }
                    _ => return Err(Error::Config("read needs both i and j, or neither".into())),
                };
                Task::Read { n, d, i, j }
            }
            TaskSpec::Linear { n, d, d_out, h } => {
                let h = match h {
                    Some(v) => Tensor::new(&[d, d_out], v).map_err(|e| Error::Config(format!("linear map: {e}")))?,
                    None => gaussian(rng, &[d, d_out], LINEAR_MAP_VARIANCE.sqrt()),
                };
                Task::Linear { n, d, h }
            }
            TaskSpec::Multiply { n, d, a, b, d_out } => {
                let half = d / 2;
                Task::Multiply {
                    n,
                    d,
                    a: a.unwrap_or(0),
                    b: b.unwrap_or(half),
                    d_out: d_out.unwrap_or(half),
                }
            }
        };
        task.validate()?;
        Ok(task)
    }
}

/// A batch of prompts with the targets read from the model output.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptBatch<T> {
    /// `[B, N_seq, in_dim]`
    pub inputs: Tensor<T>,
    /// `[B, rows, cols]` where rows is 1 for last-position tasks.
    pub targets: Tensor<T>,
    pub rows: ReadRows,
    pub cols: usize,
    pub seed: u64,
    pub stream: u64,
    /// Sample indices covered, `[first, first + B)`.
    pub first_index: u64,
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self {
            Task::LeastSquares { dist } | Task::Gradient { dist, .. } | Task::KIter { dist, .. } => dist.validate(),
            Task::Read { n, d, i, j } => {
                if *i >= *n || *j >= *n || i == j || *d == 0 {
                    return bad(format!("read needs distinct i, j < n={n}, got ({i}, {j})"));
                }
                Ok(())
            }
            Task::Linear { n, d, h } => {
                if *n == 0 || *d == 0 || h.rank() != 2 || h.rows() != *d || !h.is_finite() {
                    return bad("linear map must be a finite d × d_out matrix".into());
                }
                Ok(())
            }
            Task::Multiply { n, d, a, b, d_out } => {
                if *n == 0 || *d_out == 0 || a + d_out > *d || b + d_out > *d {
                    return bad(format!("multiply ranges a={a}, b={b}, d_out={d_out} exceed d={d}"));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::LeastSquares { .. } => "least_squares",
            Task::Gradient { .. } => "gradient",
            Task::KIter { .. } => "k_iter",
            Task::Read { .. } => "read",
            Task::Linear { .. } => "linear",
            Task::Multiply { .. } => "multiply",
        }
    }

    /// Prompt positions.
    pub fn seq_len(&self) -> usize {
        match self {
            Task::LeastSquares { dist } | Task::Gradient { dist, .. } | Task::KIter { dist, .. } => dist.n + 1,
            Task::Read { n, .. } | Task::Linear { n, .. } | Task::Multiply { n, .. } => *n,
        }
    }

    /// Prompt channels before padding.
    pub fn in_dim(&self) -> usize {
        match self {
            Task::LeastSquares { dist } | Task::Gradient { dist, .. } | Task::KIter { dist, .. } => dist.d + 1,
            Task::Read { d, .. } | Task::Linear { d, .. } | Task::Multiply { d, .. } => *d,
        }
    }

    pub fn read_rows(&self) -> ReadRows {
        match self {
            Task::LeastSquares { .. } | Task::Gradient { .. } | Task::KIter { .. } => ReadRows::Last,
            _ => ReadRows::All,
        }
    }

    /// Channels of the prediction.
    pub fn out_cols(&self) -> usize {
        match self {
            Task::LeastSquares { dist } | Task::Gradient { dist, .. } | Task::KIter { dist, .. } => dist.d,
            Task::Read { d, .. } => *d,
            Task::Linear { h, .. } => h.cols(),
            Task::Multiply { d_out, .. } => *d_out,
        }
    }

    pub fn out_rows(&self) -> usize {
        match self.read_rows() {
            ReadRows::Last => 1,
            ReadRows::All => self.seq_len(),
        }
    }

    pub fn dist(&self) -> Option<&DistributionSpec> {
        match self {
            Task::LeastSquares { dist } | Task::Gradient { dist, .. } | Task::KIter { dist, .. } => Some(dist),
            _ => None,
        }
    }

    /// One `(prompt, target)` pair with `prompt: [N_seq, in_dim]`, `target: [rows, cols]`.
    pub fn sample<T: Scalar>(&self, rng: &mut SeededRng) -> Result<(Tensor<T>, Tensor<T>)> {
        match self {
            Task::LeastSquares { dist } | Task::Gradient { dist, .. } | Task::KIter { dist, .. } => {
                let inst: LeastSquaresInstance<T> = sample_instance(dist, rng)?;
                let prompt = self.embed_instance(&inst)?;
                let target = self.instance_target(&inst)?;
                Ok((prompt, target))
            }
            _ => {
                let data: Tensor<T> = gaussian(rng, &[self.seq_len(), self.in_dim()], 1.0);
                let target = primitive_target(self, &data)?;
                Ok((data, target))
            }
        }
    }

    /// Prompt for a least-squares instance: rows `aᵢ | bᵢ`, then `x0 | 0`
    /// (zeros for the plain least-squares task, which has no start point).
    pub fn embed_instance<T: Scalar>(&self, inst: &LeastSquaresInstance<T>) -> Result<Tensor<T>> {
        let dist = self
            .dist()
            .ok_or_else(|| Error::Contract(format!("{} prompts are not built from instances", self.name())))?;
        if inst.n() != dist.n || inst.d() != dist.d {
            return Err(shape_err(
                "embed",
                format!("instance {}x{} vs task {}x{}", inst.n(), inst.d(), dist.n, dist.d),
            ));
        }
        let with_start = !matches!(self, Task::LeastSquares { .. });
        Ok(embed_prompt(&inst.a, &inst.b, with_start.then_some(&inst.x0)))
    }

    pub fn instance_target<T: Scalar>(&self, inst: &LeastSquaresInstance<T>) -> Result<Tensor<T>> {
        let x = match self {
            Task::LeastSquares { .. } => inst.x_star.clone(),
            Task::Gradient { normalized, .. } => grad_oracle(&inst.a, &inst.b, &inst.x0, *normalized)?,
            Task::KIter { k, .. } => gd_oracle(&inst.a, &inst.b, &inst.x0, inst.eta, *k)?,
            _ => return Err(Error::Contract("not an instance task".into())),
        };
        x.reshape(&[1, inst.d()])
    }

    /// Batch of `batch` prompts; sample `s` uses the stream `root.derive(first_index + s)`.
    pub fn batch<T: Scalar>(&self, root: &SeededRng, first_index: u64, batch: usize) -> Result<PromptBatch<T>> {
        let (n, c) = (self.seq_len(), self.in_dim());
        let (r, k) = (self.out_rows(), self.out_cols());
        let mut inputs = Vec::with_capacity(batch * n * c);
        let mut targets = Vec::with_capacity(batch * r * k);
        for s in 0..batch {
            let mut rng = root.derive(first_index + s as u64);
            let (p, t) = self.sample::<T>(&mut rng)?;
            inputs.extend_from_slice(p.data());
            targets.extend_from_slice(t.data());
        }
        Ok(PromptBatch {
            inputs: Tensor::new(&[batch, n, c], inputs)?,
            targets: Tensor::new(&[batch, r, k], targets)?,
            rows: self.read_rows(),
            cols: k,
            seed: root.seed(),
            stream: root.stream(),
            first_index,
        })
    }
}

/// `[N+1, D+1]` prompt: rows `aᵢ | bᵢ`, final row `x0 | 0` (or all zeros).
pub fn embed_prompt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, x0: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, d) = (a.rows(), a.cols());
    let mut p = Tensor::zeros(&[n + 1, d + 1]);
    for i in 0..n {
        for j in 0..d {
            p.set2(i, j, a.at2(i, j));
        }
        p.set2(i, d, b.data()[i]);
    }
    if let Some(x0) = x0 {
        for j in 0..d {
            p.set2(n, j, x0.data()[j]);
        }
    }
    p
}

/// Inverse of [`embed_prompt`]: `(A, b, x0)`.
pub fn decode_prompt<T: Scalar>(p: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if p.rank() != 2 || p.rows() < 2 || p.cols() < 2 {
        return Err(shape_err("decode_prompt", format!("{:?}", p.dims())));
    }
    let (n, d) = (p.rows() - 1, p.cols() - 1);
    let a = Tensor::from_fn(&[n, d], |k| p.at2(k / d, k % d));
    let b = Tensor::from_fn(&[n], |i| p.at2(i, d));
    let x0 = Tensor::from_fn(&[d], |j| p.at2(n, j));
    Ok((a, b, x0))
}

/// Exact output of a primitive task on `data: [N, D]`.
pub fn primitive_target<T: Scalar>(task: &Task, data: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = (data.rows(), data.cols());
    if data.rank() != 2 || n != task.seq_len() || d != task.in_dim() {
        return Err(shape_err("primitive_target", format!("{:?}", data.dims())));
    }
    match task {
        Task::Read { i, j, .. } => {
            let mut out = data.clone();
            for c in 0..d {
                out.set2(*j, c, data.at2(*i, c));
            }
            Ok(out)
        }
        Task::Linear { h, .. } => crate::numerics::ops::matmul(data, &h.cast()),
        Task::Multiply { a, b, d_out, .. } => Ok(Tensor::from_fn(&[n, *d_out], |k| {
            let (r, c) = (k / d_out, k % d_out);
            data.at2(r, a + c) * data.at2(r, b + c)
        })),
        _ => Err(Error::Contract(format!("{} is not a primitive", task.name()))),
    }
}
