use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::solve::{GradientModel, NetworkGradient, OracleGradient};
use crate::autodiff::ParamStore;
use crate::constructions::{build, Construction, ConstructionKind, ConstructionSpec};
use crate::error::{Error, Result};
use crate::models::{checkpoint, predict, ModelSpec};
use crate::numerics::{DType, Scalar, Tensor};
use crate::tasks::{DistributionSpec, LeastSquaresInstance, Task};
use crate::training::TrainConfig;

/// What produced a checkpoint; stored as the manifest `source`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Provenance {
    Train(TrainConfig),
    Construction(ConstructionSpec),
}

/// Model reference inside experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    Checkpoint {
        path: PathBuf,
    },
    Construction {
        spec: ConstructionSpec,
    },
    Oracle {
        #[serde(default)]
        normalized: bool,
    },
}

/// Parameters in the checkpoint's own dtype, cast to `T`.
pub fn load_params<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = std::fs::read(path)?;
    match checkpoint::peek_dtype(&bytes)? {
        Some(DType::Double) => Ok(checkpoint::decode::<f64>(&bytes)?.cast()),
        _ => Ok(checkpoint::decode::<f32>(&bytes)?.cast()),
    }
}

/// A model that either solves least squares end to end or emits gradients.
#[derive(Clone, Debug)]
pub enum Solver<T> {
    Oracle {
        normalized: bool,
    },
    Constructed {
        c: Box<Construction>,
        params: ParamStore<T>,
    },
    Trained {
        spec: ModelSpec,
        task: Task,
        params: ParamStore<T>,
    },
}

impl<T: Scalar> Solver<T> {
    pub fn load(source: &ModelSource) -> Result<Self> {
        match source {
            ModelSource::Oracle { normalized } => Ok(Solver::Oracle {
                normalized: *normalized,
            }),
            ModelSource::Construction { spec } => {
                let c = build(spec)?;
                let params = c.params_as::<T>();
                Ok(Solver::Constructed { c: Box::new(c), params })
            }
            ModelSource::Checkpoint { path } => Self::from_checkpoint(path),
        }
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let manifest = checkpoint::load_manifest(path)?;
        let prov: Provenance = serde_json::from_value(manifest.source.clone())
            .map_err(|e| Error::Format(format!("{}: unrecognised checkpoint source: {e}", path.display())))?;
        let params = load_params::<T>(path)?;
        match prov {
            Provenance::Construction(spec) => {
                let c = build(&spec)?;
                Ok(Solver::Constructed { c: Box::new(c), params })
            }
            Provenance::Train(cfg) => {
                let task = cfg.resolve_task()?;
                let spec = manifest.model.unwrap_or(cfg.model);
                Ok(Solver::Trained { spec, task, params })
            }
        }
    }

    /// `Some(normalized)` when the model outputs `∇L(x)`.
    pub fn gradient_kind(&self) -> Option<bool> {
        match self {
            Solver::Oracle { normalized } => Some(*normalized),
            Solver::Constructed { c, .. } => match c.kind {
                ConstructionKind::GradientModel { normalized, .. } => Some(normalized),
                _ => None,
            },
            Solver::Trained { task, .. } => match task {
                Task::Gradient { normalized, .. } => Some(*normalized),
                _ => None,
            },
        }
    }

    /// Fixed number of GD steps the model imitates, if any.
    pub fn gd_steps(&self) -> Option<usize> {
        match self {
            Solver::Constructed { c, .. } => match c.kind {
                ConstructionKind::GdNoncausal { k, .. } | ConstructionKind::GdCausal { k, .. } => Some(k),
                _ => None,
            },
            Solver::Trained {
                task: Task::KIter { k, .. },
                ..
            } => Some(*k),
            _ => None,
        }
    }

    /// Step size of the imitated GD, per unnormalized gradient.
    pub fn gd_eta(&self) -> Option<f64> {
        match self {
            Solver::Constructed { c, .. } => match c.kind {
                ConstructionKind::GdNoncausal { eta, normalized, n, .. }
                | ConstructionKind::GdCausal { eta, normalized, n, .. } => {
                    Some(if normalized { eta / n as f64 } else { eta })
                }
                _ => None,
            },
            Solver::Trained {
                task: Task::KIter { dist, .. },
                ..
            } => Some(dist.eta),
            _ => None,
        }
    }

    /// Instance distribution the model was built or trained for.
    pub fn dist(&self) -> Option<DistributionSpec> {
        match self {
            Solver::Oracle { .. } => None,
            Solver::Trained { task, .. } => task.dist().cloned(),
            Solver::Constructed { c, .. } => match c.kind {
                ConstructionKind::GdNoncausal {
                    n, d, eta, normalized, ..
                }
                | ConstructionKind::GdCausal {
                    n, d, eta, normalized, ..
                } => Some(DistributionSpec {
                    eta: if normalized { eta / n as f64 } else { eta },
                    ..DistributionSpec::shaped(n, d)
                }),
                ConstructionKind::GradientModel { n, d, .. } => Some(DistributionSpec::shaped(n, d)),
                _ => None,
            },
        }
    }

    /// End-to-end estimate of the solution (or of the k-th iterate).
    pub fn estimate(&self, inst: &LeastSquaresInstance<T>) -> Result<Tensor<T>> {
        match self {
            Solver::Constructed { c, params } if self.gd_steps().is_some() => c.run(params, inst),
            Solver::Trained { spec, task, params }
                if matches!(task, Task::LeastSquares { .. } | Task::KIter { .. }) =>
            {
                let out = predict(spec, params, &task.embed_instance(inst)?)?;
                let (n, c) = (out.rows(), out.cols());
                Tensor::new(&[c], out.data()[(n - 1) * c..].to_vec())
            }
            _ => Err(Error::Contract("model does not produce solution estimates".into())),
        }
    }
}

impl<T: Scalar> GradientModel<T> for Solver<T> {
    fn gradient(&self, a: &Tensor<T>, b: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.gradient_kind().is_none() {
            return Err(Error::Contract("model is not an explicit-gradient model".into()));
        }
        match self {
            Solver::Oracle { normalized } => OracleGradient {
                normalized: *normalized,
            }
            .gradient(a, b, x),
            Solver::Constructed { c, params } => NetworkGradient { spec: &c.spec, params }.gradient(a, b, x),
            Solver::Trained { spec, params, .. } => NetworkGradient { spec, params }.gradient(a, b, x),
        }
    }
}
