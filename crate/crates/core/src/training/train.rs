use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::coherence::{sigma_g, Coherence};
use super::optim::{apply_update, AdamConfig, AdamState, EmaConfig, EmaState};
use super::schedule::{Scheduler, SchedulerConfig};
use crate::autodiff::{loss_and_grad, GradStore, ParamStore};
use crate::error::{Error, Result};
use crate::models::{init_params, predict, InitScheme, ModelSpec, ReadRows, Supervised};
use crate::numerics::{DType, Scalar, SeededRng, Tensor};
use crate::tasks::{Task, TaskSpec};

/// RNG stream labels under the run seed.
pub const INIT_STREAM: u64 = 1;
pub const TASK_STREAM: u64 = 2;
pub const DATA_STREAM: u64 = 3;
pub const PROBE_STREAM: u64 = 4;
pub const EVAL_STREAM: u64 = 5;

fn default_batch() -> usize {
    1024
}
fn default_probe_count() -> usize {
    10
}
fn default_log_interval() -> u64 {
    100
}
fn default_divergence() -> f64 {
    1e6
}
fn default_init() -> InitScheme {
    InitScheme::GaussianScaled
}
fn default_dtype() -> DType {
    DType::Single
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    #[default]
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub task: TaskSpec,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub total_iters: u64,
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub ema: EmaConfig,
    /// Probe minibatches per σ_g measurement.
    #[serde(default = "default_probe_count")]
    pub probe_count: usize,
    /// Iterations between σ_g probes; defaults to the scheduler step rate.
    /// `0` disables probes outside the adaptive rule.
    #[serde(default)]
    pub probe_interval: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
    #[serde(default = "default_init")]
    pub init: InitScheme,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    /// Loss above which the run is aborted.
    #[serde(default = "default_divergence")]
    pub divergence_loss: f64,
    #[serde(default)]
    pub loss_reduction: LossReduction,
    /// Fill `wall_ms` in metrics; off by default so metric files are reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl TrainConfig {
    pub fn new(model: ModelSpec, task: TaskSpec, total_iters: u64, scheduler: SchedulerConfig) -> Self {
        Self {
            model,
            task,
            batch_size: default_batch(),
            total_iters,
            scheduler,
            adam: AdamConfig::default(),
            ema: EmaConfig::default(),
            probe_count: default_probe_count(),
            probe_interval: None,
            seed: 0,
            dtype: default_dtype(),
            init: default_init(),
            log_interval: default_log_interval(),
            divergence_loss: default_divergence(),
            loss_reduction: LossReduction::Mean,
            record_wall_time: false,
        }
    }

    pub fn probe_every(&self) -> u64 {
        self.probe_interval.unwrap_or(self.scheduler.step_rate)
    }

    pub fn resolve_task(&self) -> Result<Task> {
        self.task.resolve(&mut SeededRng::new(self.seed, TASK_STREAM))
    }

    /// Schema checks plus model/task compatibility.
    pub fn validate(&self) -> Result<Task> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.probe_count < 2 {
            return bad("probe_count must be >= 2".into());
        }
        if self.log_interval == 0 {
            return bad("log_interval must be >= 1".into());
        }
        self.scheduler.validate()?;
        self.ema.validate()?;
        self.model.validate()?;
        let task = self.resolve_task()?;
        if self.model.seq_len != task.seq_len() || self.model.in_dim != task.in_dim() {
            return bad(format!(
                "model takes [{}, {}] prompts but the {} task produces [{}, {}]",
                self.model.seq_len,
                self.model.in_dim,
                task.name(),
                task.seq_len(),
                task.in_dim()
            ));
        }
        if self.model.out_dim != task.out_cols() {
            return bad(format!(
                "model out_dim {} vs task output width {}",
                self.model.out_dim,
                task.out_cols()
            ));
        }
        Ok(task)
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: u64,
    pub loss: f64,
    pub lr: f64,
    pub sigma_g: Option<f64>,
    pub grad_norm: f64,
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    Diverged { iter: u64, loss: f64 },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Final parameters, or the last parameters with an acceptable loss after a divergence.
    pub params: ParamStore<T>,
    /// Lowest logged minibatch loss and its parameters.
    pub best: Option<(u64, f64, ParamStore<T>)>,
    pub stop: StopReason,
    pub records: Vec<MetricRecord>,
    /// σ_g probe results by iteration.
    pub probes: Vec<(u64, Coherence)>,
    pub final_lr: f64,
}

fn objective<'a, T: Scalar>(
    spec: &'a ModelSpec,
    task: &Task,
    inputs: &'a Tensor<T>,
    targets: &'a Tensor<T>,
) -> Supervised<'a, T> {
    Supervised {
        spec,
        inputs,
        targets,
        rows: task.read_rows(),
        cols: task.out_cols(),
    }
}

fn batch_grad<T: Scalar>(
    spec: &ModelSpec,
    task: &Task,
    params: &ParamStore<T>,
    root: &SeededRng,
    first: u64,
    size: usize,
) -> Result<(f64, GradStore<T>)> {
    let b = task.batch::<T>(root, first, size)?;
    let obj = objective(spec, task, &b.inputs, &b.targets);
    let (loss, g) = loss_and_grad(&obj, params)?;
    Ok((loss.as_f64(), g))
}

/// σ_g from `count` fresh probe minibatches at frozen `params`.
pub fn probe_coherence<T: Scalar>(
    spec: &ModelSpec,
    task: &Task,
    params: &ParamStore<T>,
    root: &SeededRng,
    first: u64,
    batch: usize,
    count: usize,
) -> Result<Coherence> {
    let mut flat = Vec::with_capacity(count);
    for k in 0..count {
        let (_, g) = batch_grad(spec, task, params, root, first + (k * batch) as u64, batch)?;
        flat.push(g.flatten().into_iter().map(|v| v.as_f64()).collect::<Vec<f64>>());
    }
    sigma_g(&flat)
}

/// Train from a fresh initialization drawn from the run seed.
pub fn train<T: Scalar>(cfg: &TrainConfig, sink: impl FnMut(&MetricRecord) -> Result<()>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let params = init_params::<T>(&cfg.model, &mut SeededRng::new(cfg.seed, INIT_STREAM), cfg.init)?;
    train_from(cfg, params, sink)
}

/// Training loop: sample → forward/backward → σ_g probe when due →
/// learning rate → Adam → EMA filter → apply. `sink` sees every record as
/// it is produced.
pub fn train_from<T: Scalar>(
    cfg: &TrainConfig,
    mut params: ParamStore<T>,
    mut sink: impl FnMut(&MetricRecord) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let task = cfg.validate()?;
    let data = SeededRng::new(cfg.seed, DATA_STREAM);
    let probe_root = SeededRng::new(cfg.seed, PROBE_STREAM);
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut ema = EmaState::new(&params, cfg.ema);
    let mut sched = Scheduler::new(cfg.scheduler);
    let probe_every = cfg.probe_every();
    let start = Instant::now();
    let b = cfg.batch_size;

    let mut records = Vec::new();
    let mut probes = Vec::new();
    let mut best: Option<(u64, f64, ParamStore<T>)> = None;
    let mut last_good = params.clone();
    let mut stop = StopReason::Completed;

    for t in 0..cfg.total_iters {
        let (loss, grads) = batch_grad(&cfg.model, &task, &params, &data, t * b as u64, b)?;
        if !loss.is_finite() || loss > cfg.divergence_loss || !grads.is_finite() {
            log::warn!("loss {loss:e} at iteration {t}; stopping with the previous parameters");
            params = last_good;
            stop = StopReason::Diverged { iter: t, loss };
            break;
        }
        last_good.clone_from(&params);

        let probe_due = sched.needs_probe(t) || (probe_every > 0 && t % probe_every == 0);
        let coh = if probe_due {
            let first = t * (cfg.probe_count * b) as u64;
            let c = probe_coherence(&cfg.model, &task, &params, &probe_root, first, b, cfg.probe_count)?;
            if c.all_zero {
                log::warn!("all probe gradients vanished at iteration {t}");
            }
            probes.push((t, c));
            Some(c)
        } else {
            None
        };
        let lr = sched.step(t, coh.map(|c| c.sigma_g))?;

        if t % cfg.log_interval == 0 || coh.is_some() {
            let rec = MetricRecord {
                iter: t,
                loss,
                lr,
                sigma_g: coh.map(|c| c.sigma_g),
                grad_norm: grads.norm2(),
                wall_ms: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64() * 1e3),
            };
            sink(&rec)?;
            records.push(rec);
            if best.as_ref().is_none_or(|(_, l, _)| loss < *l) {
                best = Some((t, loss, params.clone()));
            }
        }

        let update = adam.step(&grads, lr)?;
        let update = ema.filter(update)?;
        apply_update(&mut params, &update)?;
    }
    Ok(TrainOutcome {
        params,
        best,
        stop,
        records,
        probes,
        final_lr: sched.lr(),
    })
}

/// Mean squared error of the task readout over `n` samples starting at
/// index `first` of the stream `root`.
pub fn evaluate<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<T>,
    task: &Task,
    root: &SeededRng,
    first: u64,
    n: usize,
) -> Result<f64> {
    const CHUNK: usize = 256;
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut done = 0usize;
    while done < n {
        let size = CHUNK.min(n - done);
        let b = task.batch::<T>(root, first + done as u64, size)?;
        let out = predict(spec, params, &b.inputs)?;
        let (nn, c) = (out.dims()[1], out.dims()[2]);
        let cols = task.out_cols();
        for s in 0..size {
            let rows: Vec<usize> = match task.read_rows() {
                ReadRows::Last => vec![nn - 1],
                ReadRows::All => (0..nn).collect(),
            };
            for (ri, &r) in rows.iter().enumerate() {
                for k in 0..cols {
                    let p = out.data()[(s * nn + r) * c + k].as_f64();
                    let y = b.targets.data()[(s * rows.len() + ri) * cols + k].as_f64();
                    sq += (p - y) * (p - y);
                    count += 1;
                }
            }
        }
        done += size;
    }
    Ok(if count == 0 { 0.0 } else { sq / count as f64 })
}
