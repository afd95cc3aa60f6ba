use std::path::Path;

use serde_json::json;

use super::prompt::{Task, TaskSpec};
use crate::autodiff::NamedTensors;
use crate::error::Result;
use crate::models::checkpoint::{self, Manifest};
use crate::numerics::{Scalar, SeededRng};

/// Write `count` samples starting at `first_index` as a PLS1 container
/// (`inputs`, `targets`) with a JSON sidecar describing the range.
pub fn dump_dataset<T: Scalar>(
    path: &Path,
    spec: &TaskSpec,
    task: &Task,
    root: &SeededRng,
    first_index: u64,
    count: usize,
    version: &str,
    config_hash: &str,
) -> Result<()> {
    let batch = task.batch::<T>(root, first_index, count)?;
    let mut tensors = NamedTensors::new();
    tensors.insert("inputs", batch.inputs)?;
    tensors.insert("targets", batch.targets)?;
    checkpoint::save(path, &tensors)?;
    let manifest = Manifest {
        version: version.to_string(),
        dtype: T::DTYPE,
        model: None,
        source: json!({
            "task": spec,
            "seed": root.seed(),
            "stream": root.stream(),
            "first_index": first_index,
            "count": count,
        }),
        config_hash: config_hash.to_string(),
        seed: Some(root.seed()),
        iter: None,
    };
    checkpoint::save_manifest(path, &manifest)
}
