//! Experiment plumbing behind the command-line tool: JSON configs, fixed-point
//! solving with gradient models, sweeps, reports and provenance.

mod commands;
mod model;
mod solve;

pub use commands::*;
pub use model::{load_params, ModelSource, Provenance, Solver};
pub use solve::{
    iterative_solve, GradientModel, IterationTrace, NetworkGradient, OracleGradient, SolveOptions, Termination,
    TraceStep, SOLVE_DIVERGENCE_NORM,
};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Package version plus `git describe` of the build tree when available.
pub fn version() -> &'static str {
    env!("PRECISE_LS_VERSION")
}

/// SHA-256 over the canonical (key-sorted, compact) JSON of `{command, config}`.
pub fn config_hash<C: Serialize>(command: &str, cfg: &C) -> Result<String> {
    let doc = serde_json::json!({ "command": command, "config": serde_json::to_value(cfg)? });
    let digest = Sha256::digest(serde_json::to_vec(&doc)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
