//! Problem sampling, prompt layouts, targets and reference solvers.

mod dataset;
mod instance;
mod oracles;
mod prompt;

pub use dataset::dump_dataset;
pub use instance::{ood_spec, sample_indexed, sample_instance, DistMeta, DistributionSpec, LeastSquaresInstance};
pub use oracles::{
    gd_oracle, gd_trajectory, grad_oracle, gram, matvec, matvec_t, newton_oracle, ols_oracle, GD_DIVERGENCE_NORM,
};
pub use prompt::{decode_prompt, embed_prompt, primitive_target, PromptBatch, Task, TaskSpec, LINEAR_MAP_VARIANCE};
