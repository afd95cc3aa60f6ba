use serde::{Deserialize, Serialize};

use crate::autodiff::{GradStore, NamedTensors, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::Scalar;

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: NamedTensors<T>,
    pub v: NamedTensors<T>,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, cfg: AdamConfig) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            cfg,
        }
    }

    /// Advance the moments with `grads` and return the update
    /// `lr·m̂/(√v̂ + eps)` without touching the parameters.
    pub fn step(&mut self, grads: &GradStore<T>, lr: f64) -> Result<NamedTensors<T>> {
        if !grads.is_finite() {
            return Err(Error::NonFinite {
                step: self.t as usize + 1,
            });
        }
        self.t += 1;
        let (b1, b2) = (T::cast_from(self.cfg.beta1), T::cast_from(self.cfg.beta2));
        let one = T::one();
        let c1 = T::cast_from(1.0 - self.cfg.beta1.powi(self.t as i32));
        let c2 = T::cast_from(1.0 - self.cfg.beta2.powi(self.t as i32));
        let (lr, eps) = (T::cast_from(lr), T::cast_from(self.cfg.eps));
        let mut update = grads.zeros_like();
        for (((name, g), (_, m)), (_, v)) in grads.iter().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            let u = update.get_mut(name)?;
            for (((&gi, mi), vi), ui) in g.data().iter().zip(m.data_mut()).zip(v.data_mut()).zip(u.data_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *ui = lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(update)
    }
}

fn default_ema_decay() -> f64 {
    0.98
}
fn default_lambda() -> f64 {
    2.0
}

/// How the moving average enters the applied update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmaMode {
    /// `u + λ·ema`
    #[default]
    Amplify,
    /// `ema` replaces `u`
    Replace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_ema_decay")]
    pub decay: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub mode: EmaMode,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            decay: default_ema_decay(),
            lambda: default_lambda(),
            mode: EmaMode::Amplify,
        }
    }
}

impl EmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.decay) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "ema decay must lie in [0, 1) and lambda be finite, got {} / {}",
                self.decay, self.lambda
            )));
        }
        Ok(())
    }
}

/// Exponential moving average over optimizer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState<T> {
    pub ema: NamedTensors<T>,
    pub cfg: EmaConfig,
}

impl<T: Scalar> EmaState<T> {
    pub fn new(params: &ParamStore<T>, cfg: EmaConfig) -> Self {
        Self {
            ema: params.zeros_like(),
            cfg,
        }
    }

    /// `ema ← d·ema + (1−d)·u`, then the applied update per [`EmaMode`].
    /// Disabled filters return `u` untouched.
    pub fn filter(&mut self, u: NamedTensors<T>) -> Result<NamedTensors<T>> {
        if !self.cfg.enabled {
            return Ok(u);
        }
        let d = T::cast_from(self.cfg.decay);
        let keep = T::one() - d;
        let lambda = T::cast_from(self.cfg.lambda);
        let mut out = u;
        for ((_, e), (_, u)) in self.ema.iter_mut().zip(out.iter_mut()) {
            for (ei, ui) in e.data_mut().iter_mut().zip(u.data_mut()) {
                *ei = d * *ei + keep * *ui;
                *ui = match self.cfg.mode {
                    EmaMode::Amplify => *ui + lambda * *ei,
                    EmaMode::Replace => *ei,
                };
            }
        }
        Ok(out)
    }
}

/// `params ← params − update`.
pub fn apply_update<T: Scalar>(params: &mut ParamStore<T>, update: &NamedTensors<T>) -> Result<()> {
    for ((_, p), (_, u)) in params.iter_mut().zip(update.iter()) {
        if p.dims() != u.dims() {
            return Err(crate::error::shape_err(
                "apply_update",
                format!("{:?} vs {:?}", p.dims(), u.dims()),
            ));
        }
        for (pi, &ui) in p.data_mut().iter_mut().zip(u.data()) {
            *pi = *pi - ui;
        }
    }
    Ok(())
}
