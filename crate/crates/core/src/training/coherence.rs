use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gradient coherence over a set of probe gradients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    /// Mean pairwise cosine; pairs touching a zero gradient count as 0.
    pub sigma_g: f64,
    pub zero_norm: usize,
    /// Every probe gradient vanished.
    pub all_zero: bool,
}

/// Average cosine similarity over all `n(n−1)/2` pairs of flattened gradients.
pub fn sigma_g(grads: &[Vec<f64>]) -> Result<Coherence> {
    let n = grads.len();
    if n < 2 {
        return Err(Error::Contract(format!("σ_g needs at least two gradients, got {n}")));
    }
    let len = grads[0].len();
    if grads.iter().any(|g| g.len() != len) {
        return Err(Error::Contract("σ_g gradients differ in length".into()));
    }
    let norms: Vec<f64> = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let dot: f64 = grads[i].iter().zip(&grads[j]).map(|(a, b)| a * b).sum();
            total += (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
        }
    }
    let zero_norm = norms.iter().filter(|&&v| v == 0.0).count();
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(Coherence {
        sigma_g: total / pairs,
        zero_norm,
        all_zero: zero_norm == n,
    })
}
