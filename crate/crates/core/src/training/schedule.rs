use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Constant,
    StepDecay,
    Adaptive,
}

fn default_step_rate() -> u64 {
    3000
}
fn default_decay() -> f64 {
    0.9
}
fn default_sigma_th() -> f64 {
    0.1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub kind: SchedulerKind,
    pub lr0: f64,
    #[serde(default = "default_step_rate")]
    pub step_rate: u64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Coherence threshold of the adaptive rule.
    #[serde(default = "default_sigma_th")]
    pub sigma_th: f64,
    /// Optional clamp on the adaptive learning rate.
    #[serde(default)]
    pub lr_min: Option<f64>,
    #[serde(default)]
    pub lr_max: Option<f64>,
}

impl SchedulerConfig {
    pub fn new(kind: SchedulerKind, lr0: f64) -> Self {
        Self {
            kind,
            lr0,
            step_rate: default_step_rate(),
            decay: default_decay(),
            sigma_th: default_sigma_th(),
            lr_min: None,
            lr_max: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return Err(Error::Config(format!("lr0 must be finite and >= 0, got {}", self.lr0)));
        }
        if self.step_rate == 0 || !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!(
                "need step_rate >= 1 and decay in (0, 1), got {} / {}",
                self.step_rate, self.decay
            )));
        }
        Ok(())
    }
}

/// Learning-rate state. The adaptive kind keeps its own running rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Scheduler {
    pub cfg: SchedulerConfig,
    lr: f64,
    pub history: Vec<(u64, f64)>,
}

impl Scheduler {
    pub fn new(cfg: SchedulerConfig) -> Self {
        Self {
            cfg,
            lr: cfg.lr0,
            history: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Whether the adaptive rule fires at `iter` and therefore needs σ_g.
    pub fn needs_probe(&self, iter: u64) -> bool {
        self.cfg.kind == SchedulerKind::Adaptive && iter > 0 && iter % self.cfg.step_rate == 0
    }

    /// Learning rate to use at `iter`.
    pub fn step(&mut self, iter: u64, sigma_g: Option<f64>) -> Result<f64> {
        self.lr = match self.cfg.kind {
            SchedulerKind::Constant => self.cfg.lr0,
            SchedulerKind::StepDecay => self.cfg.lr0 * self.cfg.decay.powi((iter / self.cfg.step_rate) as i32),
            SchedulerKind::Adaptive => {
                if self.needs_probe(iter) {
                    let s = sigma_g.ok_or_else(|| Error::Contract(format!("adaptive schedule needs σ_g at {iter}")))?;
                    self.history.push((iter, s));
                    let mut lr = if s > self.cfg.sigma_th {
                        self.lr * self.cfg.decay
                    } else {
                        self.lr / self.cfg.decay
                    };
                    if let Some(lo) = self.cfg.lr_min {
                        lr = lr.max(lo);
                    }
                    if let Some(hi) = self.cfg.lr_max {
                        lr = lr.min(hi);
                    }
                    lr
                } else {
                    self.lr
                }
            }
        };
        Ok(self.lr)
    }
}
