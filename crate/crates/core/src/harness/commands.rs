use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::model::{ModelSource, Provenance, Solver};
use super::solve::{iterative_solve, SolveOptions, Termination};
use super::{config_hash, version};
use crate::autodiff::{grad_check, GradCheckReport};
use crate::constructions::{
    build, verify_batched, Block, Construction, ConstructionKind, ConstructionSpec, VerifyReport,
};
use crate::error::{Error, Result};
use crate::models::{checkpoint, init_params, InitScheme, ModelSpec, ReadRows, Supervised};
use crate::numerics::{gaussian, ops, DType, Scalar, SeededRng, Tensor};
use crate::tasks::{
    gd_oracle, grad_oracle, matvec_t, newton_oracle, ols_oracle, ood_spec, primitive_target, sample_indexed,
    sample_instance, DistributionSpec, LeastSquaresInstance, Task,
};
use crate::training::{evaluate, train, StopReason, TrainConfig, EVAL_STREAM, INIT_STREAM};

/// Evaluation samples drawn after training runs.
pub const EVAL_SAMPLES: usize = 1000;

/// How a command finished when it did not fail outright.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Diverged,
    GradcheckFailed,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub status: Status,
    /// The full `report.json` document.
    pub report: Value,
}

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Spec(_)
        | Error::Capacity { .. }
        | Error::Json(_)
        | Error::UnknownParam(_)
        | Error::Contract(_)
        | Error::Shape { .. } => 2,
        Error::Divergence { .. } | Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Diverged => 3,
            Status::GradcheckFailed => 4,
        }
    }
}

/// Parse a JSON config, rejecting unknown keys.
pub fn load_config<C: for<'de> Deserialize<'de>>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_report<C: Serialize, R: Serialize>(out: &Path, command: &str, cfg: &C, result: &R) -> Result<Value> {
    std::fs::create_dir_all(out)?;
    let report = json!({
        "command": command,
        "version": version(),
        "config_hash": config_hash(command, cfg)?,
        "config": serde_json::to_value(cfg)?,
        "result": serde_json::to_value(result)?,
    });
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

fn save_checkpoint<T: Scalar>(
    path: &Path,
    params: &crate::autodiff::ParamStore<T>,
    model: &ModelSpec,
    source: &Provenance,
    hash: &str,
    seed: u64,
    iter: Option<u64>,
) -> Result<()> {
    checkpoint::save(path, params)?;
    checkpoint::save_manifest(
        path,
        &checkpoint::Manifest {
            version: version().to_string(),
            dtype: T::DTYPE,
            model: Some(model.clone()),
            source: serde_json::to_value(source)?,
            config_hash: hash.to_string(),
            seed: Some(seed),
            iter,
        },
    )
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

// ---------------------------------------------------------------- construct

fn double() -> DType {
    DType::Double
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructConfig {
    pub construction: ConstructionKind,
    #[serde(default)]
    pub emb: Option<usize>,
    #[serde(default = "double")]
    pub dtype: DType,
    /// Random inputs to check against the reference; 0 skips the check.
    #[serde(default)]
    pub verify: usize,
    #[serde(default)]
    pub seed: u64,
    /// Instances for GD verification; shaped N×D when absent.
    #[serde(default)]
    pub dist: Option<DistributionSpec>,
}

impl ConstructConfig {
    pub fn spec(&self) -> ConstructionSpec {
        ConstructionSpec {
            construction: self.construction.clone(),
            emb: self.emb,
            dtype: self.dtype,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionCheck {
    #[serde(flatten)]
    pub report: VerifyReport,
    /// Mean squared distance of the output to `x*` (GD kinds).
    pub solution_mse: Option<f64>,
}

/// Compare a construction with its reference computation on `n` fresh inputs.
pub fn check_construction<T: Scalar>(
    c: &Construction,
    params: &crate::autodiff::ParamStore<T>,
    dist: Option<&DistributionSpec>,
    root: &SeededRng,
    n: usize,
) -> Result<ConstructionCheck> {
    let run = |sampler: &mut dyn FnMut(&mut SeededRng) -> Result<(Tensor<T>, Tensor<T>)>| {
        verify_batched(root, n, sampler, |u| c.predict(params, u))
    };
    let instance_dist = |nn: usize, d: usize| dist.cloned().unwrap_or_else(|| DistributionSpec::shaped(nn, d));
    match &c.kind {
        ConstructionKind::Read { n: rows, d, i, j, a, b } => {
            let (i, j, a, b) = (*i, *j, a.unwrap_or(0), b.unwrap_or(*d));
            let report = run(&mut |rng| {
                let u: Tensor<T> = gaussian(rng, &[*rows, *d], 1.0);
                let mut y = u.clone();
                for col in a..b {
                    y.set2(j, col, u.at2(i, col));
                }
                Ok((u, y))
            })?;
            Ok(ConstructionCheck {
                report,
                solution_mse: None,
            })
        }
        ConstructionKind::Linear { n: rows, h } => {
            let h = Tensor::<T>::from_rows(h);
            let report = run(&mut |rng| {
                let u: Tensor<T> = gaussian(rng, &[*rows, h.rows()], 1.0);
                let y = ops::matmul(&u, &h)?;
                Ok((u, y))
            })?;
            Ok(ConstructionCheck {
                report,
                solution_mse: None,
            })
        }
        ConstructionKind::Multiply {
            n: rows,
            d,
            a,
            b,
            d_out,
        } => {
            let task = Task::Multiply {
                n: *rows,
                d: *d,
                a: *a,
                b: *b,
                d_out: *d_out,
            };
            let report = run(&mut |rng| {
                let u: Tensor<T> = gaussian(rng, &[*rows, *d], 1.0);
                let y = primitive_target(&task, &u)?;
                Ok((u, y))
            })?;
            Ok(ConstructionCheck {
                report,
                solution_mse: None,
            })
        }
        ConstructionKind::GdNoncausal {
            n: rows,
            d,
            eta,
            k,
            normalized,
        }
        | ConstructionKind::GdCausal {
            n: rows,
            d,
            eta,
            k,
            normalized,
        } => {
            let dist = instance_dist(*rows, *d);
            let step = if *normalized { eta / *rows as f64 } else { *eta };
            let report = run(&mut |rng| {
                let inst: LeastSquaresInstance<T> = sample_instance(&dist, rng)?;
                let y = gd_oracle(&inst.a, &inst.b, &inst.x0, step, *k)?.reshape(&[1, *d])?;
                Ok((c.prompt(&inst)?, y))
            })?;
            let solution = run(&mut |rng| {
                let inst: LeastSquaresInstance<T> = sample_instance(&dist, rng)?;
                Ok((c.prompt(&inst)?, inst.x_star.clone().reshape(&[1, *d])?))
            })?;
            Ok(ConstructionCheck {
                report,
                solution_mse: Some(solution.mse),
            })
        }
        ConstructionKind::GradientModel { n: rows, d, normalized } => {
            let dist = instance_dist(*rows, *d);
            let report = run(&mut |rng| {
                let inst: LeastSquaresInstance<T> = sample_instance(&dist, rng)?;
                let y = grad_oracle(&inst.a, &inst.b, &inst.x0, *normalized)?.reshape(&[1, *d])?;
                Ok((c.prompt(&inst)?, y))
            })?;
            Ok(ConstructionCheck {
                report,
                solution_mse: None,
            })
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct ConstructResult {
    kind: String,
    layers: usize,
    emb: usize,
    layout: Vec<Block>,
    checkpoint: PathBuf,
    verify: Option<ConstructionCheck>,
}

fn kind_name(k: &ConstructionKind) -> String {
    serde_json::to_value(k)
        .ok()
        .and_then(|v| v.get("kind").and_then(|s| s.as_str()).map(str::to_string))
        .unwrap_or_default()
}

/// Build a construction, write it as a checkpoint, optionally verify it.
pub fn cmd_construct(cfg: &ConstructConfig, out: &Path) -> Result<Outcome> {
    match cfg.dtype {
        DType::Single => construct_as::<f32>(cfg, out),
        DType::Double => construct_as::<f64>(cfg, out),
    }
}

fn construct_as<T: Scalar>(cfg: &ConstructConfig, out: &Path) -> Result<Outcome> {
    let spec = cfg.spec();
    let c = build(&spec)?;
    std::fs::create_dir_all(out)?;
    let hash = config_hash("construct", cfg)?;
    let params = c.params_as::<T>();
    let path = out.join("construction.pls1");
    save_checkpoint(
        &path,
        &params,
        &c.spec,
        &Provenance::Construction(spec),
        &hash,
        cfg.seed,
        None,
    )?;
    let verify = if cfg.verify > 0 {
        let root = SeededRng::new(cfg.seed, EVAL_STREAM);
        Some(check_construction(&c, &params, cfg.dist.as_ref(), &root, cfg.verify)?)
    } else {
        None
    };
    let result = ConstructResult {
        kind: kind_name(&c.kind),
        layers: c.spec.layers,
        emb: c.spec.emb,
        layout: c.layout.clone(),
        checkpoint: PathBuf::from("construction.pls1"),
        verify,
    };
    let report = write_report(out, "construct", cfg, &result)?;
    Ok(Outcome {
        status: Status::Ok,
        report,
    })
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug, Serialize)]
struct TrainResult {
    stop: StopReason,
    iterations: u64,
    final_lr: f64,
    eval_mse: f64,
    eval_samples: usize,
    best_iter: Option<u64>,
    best_loss: Option<f64>,
}

/// Train, streaming metrics to `metrics.jsonl`, then save `final.pls1` and
/// `best.pls1`. A diverged run keeps its last good parameters as `final.pls1`.
pub fn cmd_train(cfg: &TrainConfig, out: &Path) -> Result<Outcome> {
    match cfg.dtype {
        DType::Single => train_as::<f32>(cfg, out),
        DType::Double => train_as::<f64>(cfg, out),
    }
}

fn train_as<T: Scalar>(cfg: &TrainConfig, out: &Path) -> Result<Outcome> {
    let task = cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let hash = config_hash("train", cfg)?;
    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
    let outcome = train::<T>(cfg, |rec| {
        serde_json::to_writer(&mut metrics, rec)?;
        metrics.write_all(b"\n")?;
        Ok(())
    })?;
    metrics.flush()?;

    let prov = Provenance::Train(cfg.clone());
    let iterations = match outcome.stop {
        StopReason::Completed => cfg.total_iters,
        StopReason::Diverged { iter, .. } => iter,
    };
    save_checkpoint(
        &out.join("final.pls1"),
        &outcome.params,
        &cfg.model,
        &prov,
        &hash,
        cfg.seed,
        Some(iterations),
    )?;
    if let Some((it, _, p)) = &outcome.best {
        save_checkpoint(&out.join("best.pls1"), p, &cfg.model, &prov, &hash, cfg.seed, Some(*it))?;
    }
    let root = SeededRng::new(cfg.seed, EVAL_STREAM);
    let eval_mse = evaluate(&cfg.model, &outcome.params, &task, &root, 0, EVAL_SAMPLES)?;
    let result = TrainResult {
        stop: outcome.stop.clone(),
        iterations,
        final_lr: outcome.final_lr,
        eval_mse,
        eval_samples: EVAL_SAMPLES,
        best_iter: outcome.best.as_ref().map(|b| b.0),
        best_loss: outcome.best.as_ref().map(|b| b.1),
    };
    let report = write_report(out, "train", cfg, &result)?;
    let status = match outcome.stop {
        StopReason::Completed => Status::Ok,
        StopReason::Diverged { .. } => Status::Diverged,
    };
    Ok(Outcome { status, report })
}

// ---------------------------------------------------------------- eval

fn default_samples() -> usize {
    EVAL_SAMPLES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Evaluation seed; the run seed of the checkpoint when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Held-out MSE of a trained checkpoint, or the reference check of a construction.
pub fn cmd_eval(cfg: &EvalConfig, out: &Path) -> Result<Outcome> {
    let manifest = checkpoint::load_manifest(&cfg.checkpoint)?;
    let seed = cfg.seed.or(manifest.seed).unwrap_or(0);
    let root = SeededRng::new(seed, EVAL_STREAM);
    let result = match manifest.dtype {
        DType::Single => eval_as::<f32>(cfg, &root)?,
        DType::Double => eval_as::<f64>(cfg, &root)?,
    };
    let report = write_report(out, "eval", cfg, &result)?;
    Ok(Outcome {
        status: Status::Ok,
        report,
    })
}

fn eval_as<T: Scalar>(cfg: &EvalConfig, root: &SeededRng) -> Result<Value> {
    match Solver::<T>::from_checkpoint(&cfg.checkpoint)? {
        Solver::Trained { spec, task, params } => {
            let mse = evaluate(&spec, &params, &task, root, 0, cfg.samples)?;
            Ok(json!({ "mse": mse, "samples": cfg.samples, "task": task.name() }))
        }
        Solver::Constructed { c, params } => Ok(serde_json::to_value(check_construction(
            &c,
            &params,
            None,
            root,
            cfg.samples,
        )?)?),
        Solver::Oracle { .. } => Err(Error::Contract("nothing to evaluate".into())),
    }
}

// ---------------------------------------------------------------- iterate

fn default_instances() -> usize {
    100
}
fn single() -> DType {
    DType::Single
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterateConfig {
    pub model: ModelSource,
    /// Instance distribution; the model's own when absent.
    #[serde(default)]
    pub dist: Option<DistributionSpec>,
    #[serde(default = "default_instances")]
    pub instances: usize,
    /// Step size; the distribution's `eta` (times `N` for normalized gradients) when absent.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub solve: SolveOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "single")]
    pub dtype: DType,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub instances: usize,
    /// Mean final MSE over instances that did not diverge.
    pub mean_mse: f64,
    pub max_mse: f64,
    pub diverged_fraction: f64,
    pub tol: usize,
    pub max_iters: usize,
    pub mean_iters: f64,
}

fn resolve_dist<T: Scalar>(solver: &Solver<T>, given: Option<&DistributionSpec>) -> Result<DistributionSpec> {
    given
        .cloned()
        .or_else(|| solver.dist())
        .ok_or_else(|| Error::Config("no instance distribution given and the model does not define one".into()))
}

fn default_eta<T: Scalar>(solver: &Solver<T>, dist: &DistributionSpec) -> f64 {
    match solver.gradient_kind() {
        Some(true) => dist.eta * dist.n as f64,
        _ => dist.eta,
    }
}

/// Iterate a gradient model to its fixed point on a batch of instances.
/// `visit` receives every instance trace.
pub fn solve_instances<T: Scalar>(
    solver: &Solver<T>,
    dist: &DistributionSpec,
    eta: f64,
    opts: &SolveOptions,
    root: &SeededRng,
    count: usize,
    mut visit: impl FnMut(usize, &super::solve::IterationTrace) -> Result<()>,
) -> Result<SolveSummary> {
    let mut finals = Vec::with_capacity(count);
    let mut s = SolveSummary {
        instances: count,
        ..SolveSummary::default()
    };
    let mut iters = 0usize;
    let mut diverged = 0usize;
    for i in 0..count {
        let inst: LeastSquaresInstance<T> = sample_indexed(dist, root, i as u64)?;
        let (_, trace) = iterative_solve(solver, &inst, eta, opts)?;
        visit(i, &trace)?;
        iters += trace.iters();
        match trace.reason {
            Termination::Diverged => diverged += 1,
            Termination::Tol => s.tol += 1,
            Termination::MaxIters => s.max_iters += 1,
        }
        if trace.reason != Termination::Diverged {
            finals.push(trace.final_mse().unwrap_or(f64::NAN));
        }
    }
    s.mean_mse = mean(&finals);
    s.max_mse = finals.iter().copied().fold(f64::NAN, f64::max);
    s.diverged_fraction = if count == 0 {
        0.0
    } else {
        diverged as f64 / count as f64
    };
    s.mean_iters = if count == 0 { 0.0 } else { iters as f64 / count as f64 };
    Ok(s)
}

/// Fixed-point iteration with an explicit-gradient model; traces go to `traces.jsonl`.
pub fn cmd_iterate(cfg: &IterateConfig, out: &Path) -> Result<Outcome> {
    match cfg.dtype {
        DType::Single => iterate_as::<f32>(cfg, out),
        DType::Double => iterate_as::<f64>(cfg, out),
    }
}

fn iterate_as<T: Scalar>(cfg: &IterateConfig, out: &Path) -> Result<Outcome> {
    let solver = Solver::<T>::load(&cfg.model)?;
    if solver.gradient_kind().is_none() {
        return Err(Error::Config("iterate needs an explicit-gradient model".into()));
    }
    let dist = resolve_dist(&solver, cfg.dist.as_ref())?;
    let eta = cfg.eta.unwrap_or_else(|| default_eta(&solver, &dist));
    std::fs::create_dir_all(out)?;
    let mut traces = BufWriter::new(File::create(out.join("traces.jsonl"))?);
    let root = SeededRng::new(cfg.seed, EVAL_STREAM);
    let summary = solve_instances(&solver, &dist, eta, &cfg.solve, &root, cfg.instances, |i, t| {
        serde_json::to_writer(&mut traces, &json!({ "instance": i, "trace": t }))?;
        traces.write_all(b"\n")?;
        Ok(())
    })?;
    traces.flush()?;
    let report = write_report(out, "iterate", cfg, &json!({ "eta": eta, "summary": summary }))?;
    Ok(Outcome {
        status: Status::Ok,
        report,
    })
}

// ---------------------------------------------------------------- sweep-ood

fn default_sigmas() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 10.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOodConfig {
    pub model: ModelSource,
    /// In-distribution spec whose target scale is swept; the model's own when absent.
    #[serde(default)]
    pub base: Option<DistributionSpec>,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "default_instances")]
    pub samples: usize,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub solve: SolveOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "single")]
    pub dtype: DType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub source: String,
    pub sigma: f64,
    pub mse: f64,
    pub mse_over_sigma_sq: f64,
    pub diverged_fraction: f64,
}

/// Per-σ solution MSE of the model and of the gradient-descent oracle.
pub fn sweep_ood<T: Scalar>(cfg: &SweepOodConfig) -> Result<Vec<OodRow>> {
    let solver = Solver::<T>::load(&cfg.model)?;
    let base = resolve_dist(&solver, cfg.base.as_ref())?;
    let root = SeededRng::new(cfg.seed, EVAL_STREAM);
    let iterative = solver.gradient_kind().is_some();
    let eta = cfg.eta.unwrap_or_else(|| default_eta(&solver, &base));
    let oracle_eta = solver.gd_eta().unwrap_or(base.eta);
    let mut rows = Vec::new();
    for &sigma in &cfg.sigmas {
        let dist = ood_spec(&base, sigma)?;
        let row = |source: &str, mse: f64, diverged_fraction: f64| OodRow {
            source: source.into(),
            sigma,
            mse,
            mse_over_sigma_sq: mse / (sigma * sigma),
            diverged_fraction,
        };
        if iterative {
            let s = solve_instances(&solver, &dist, eta, &cfg.solve, &root, cfg.samples, |_, _| Ok(()))?;
            rows.push(row("model", s.mean_mse, s.diverged_fraction));
        } else {
            let mut errs = Vec::new();
            let mut bad = 0usize;
            for i in 0..cfg.samples {
                let inst: LeastSquaresInstance<T> = sample_indexed(&dist, &root, i as u64)?;
                let x = solver.estimate(&inst)?;
                if x.is_finite() {
                    errs.push(x.mse(&inst.x_star));
                } else {
                    bad += 1;
                }
            }
            rows.push(row("model", mean(&errs), bad as f64 / cfg.samples.max(1) as f64));
        }
        match solver.gd_steps() {
            Some(k) => {
                let mut errs = Vec::new();
                let mut bad = 0usize;
                for i in 0..cfg.samples {
                    let inst: LeastSquaresInstance<T> = sample_indexed(&dist, &root, i as u64)?;
                    match gd_oracle(&inst.a, &inst.b, &inst.x0, oracle_eta, k) {
                        Ok(x) => errs.push(x.mse(&inst.x_star)),
                        Err(Error::Divergence { .. }) => bad += 1,
                        Err(e) => return Err(e),
                    }
                }
                rows.push(row("gd_oracle", mean(&errs), bad as f64 / cfg.samples.max(1) as f64));
            }
            None => {
                let oracle = Solver::<T>::Oracle { normalized: false };
                let s = solve_instances(
                    &oracle,
                    &dist,
                    oracle_eta,
                    &cfg.solve,
                    &root,
                    cfg.samples,
                    |_, _| Ok(()),
                )?;
                rows.push(row("gd_oracle", s.mean_mse, s.diverged_fraction));
            }
        }
    }
    Ok(rows)
}

/// [`sweep_ood`] written to `sweep_ood.csv` and `report.json`.
pub fn cmd_sweep_ood(cfg: &SweepOodConfig, out: &Path) -> Result<Outcome> {
    let rows = match cfg.dtype {
        DType::Single => sweep_ood::<f32>(cfg)?,
        DType::Double => sweep_ood::<f64>(cfg)?,
    };
    std::fs::create_dir_all(out)?;
    write_csv(&out.join("sweep_ood.csv"), &rows)?;
    let report = write_report(out, "sweep-ood", cfg, &rows)?;
    Ok(Outcome {
        status: Status::Ok,
        report,
    })
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- depth-sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthSweepConfig {
    /// Template run; `model.layers` is replaced by each depth.
    pub train: TrainConfig,
    pub depths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub depth: usize,
    pub mse: f64,
    pub diverged: bool,
    /// Solution MSE of `depth` exact GD steps on the same instances (least-squares tasks).
    pub gd_reference: Option<f64>,
}

/// Train every depth with the same budget and evaluate it.
pub fn depth_sweep(cfg: &DepthSweepConfig, out: Option<&Path>) -> Result<Vec<DepthRow>> {
    if cfg.depths.is_empty() {
        return Err(Error::Config("depths must not be empty".into()));
    }
    let mut rows = Vec::new();
    for &depth in &cfg.depths {
        let mut run = cfg.train.clone();
        run.model.layers = depth;
        let dir = out.map(|o| o.join(format!("depth_{depth}")));
        let (mse, diverged) = match &dir {
            Some(d) => {
                let o = cmd_train(&run, d)?;
                let mse = o.report["result"]["eval_mse"].as_f64().unwrap_or(f64::NAN);
                (mse, o.status == Status::Diverged)
            }
            None => {
                let task = run.validate()?;
                let root = SeededRng::new(run.seed, EVAL_STREAM);
                match run.dtype {
                    DType::Single => {
                        let o = train::<f32>(&run, |_| Ok(()))?;
                        let d = matches!(o.stop, StopReason::Diverged { .. });
                        (evaluate(&run.model, &o.params, &task, &root, 0, EVAL_SAMPLES)?, d)
                    }
                    DType::Double => {
                        let o = train::<f64>(&run, |_| Ok(()))?;
                        let d = matches!(o.stop, StopReason::Diverged { .. });
                        (evaluate(&run.model, &o.params, &task, &root, 0, EVAL_SAMPLES)?, d)
                    }
                }
            }
        };
        let task = run.resolve_task()?;
        let gd_reference = match task.dist() {
            Some(dist) => {
                let root = SeededRng::new(run.seed, EVAL_STREAM);
                let mut errs = Vec::new();
                for i in 0..EVAL_SAMPLES {
                    let inst: LeastSquaresInstance<f64> = sample_indexed(dist, &root, i as u64)?;
                    if let Ok(x) = gd_oracle(&inst.a, &inst.b, &inst.x0, dist.eta, depth) {
                        errs.push(x.mse(&inst.x_star));
                    }
                }
                Some(mean(&errs))
            }
            None => None,
        };
        log::info!(
            "depth {depth}: mse {mse:e}{}",
            if diverged { " (diverged)" } else { "" }
        );
        rows.push(DepthRow {
            depth,
            mse,
            diverged,
            gd_reference,
        });
    }
    Ok(rows)
}

pub fn cmd_depth_sweep(cfg: &DepthSweepConfig, out: &Path) -> Result<Outcome> {
    let rows = depth_sweep(cfg, Some(out))?;
    write_csv(&out.join("depth_sweep.csv"), &rows)?;
    let report = write_report(out, "depth-sweep", cfg, &rows)?;
    Ok(Outcome {
        status: Status::Ok,
        report,
    })
}

// ---------------------------------------------------------------- gradcheck

fn default_fd_eps() -> f64 {
    1e-5
}
fn default_threshold() -> f64 {
    1e-5
}
fn default_check_batch() -> usize {
    2
}
fn default_init() -> InitScheme {
    InitScheme::GaussianScaled
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    pub model: ModelSpec,
    #[serde(default = "default_fd_eps")]
    pub eps: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_check_batch")]
    pub batch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init")]
    pub init: InitScheme,
}

/// Taped gradient against central differences on random parameters, inputs and targets.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradCheckReport> {
    let spec = &cfg.model;
    spec.validate()?;
    let params = init_params::<f64>(spec, &mut SeededRng::new(cfg.seed, INIT_STREAM), cfg.init)?;
    let mut rng = SeededRng::new(cfg.seed, EVAL_STREAM);
    let inputs: Tensor<f64> = gaussian(&mut rng, &[cfg.batch, spec.seq_len, spec.in_dim], 1.0);
    let targets: Tensor<f64> = gaussian(&mut rng, &[cfg.batch, 1, spec.out_dim], 1.0);
    let obj = Supervised {
        spec,
        inputs: &inputs,
        targets: &targets,
        rows: ReadRows::Last,
        cols: spec.out_dim,
    };
    grad_check(&obj, &params, cfg.eps)
}

pub fn cmd_gradcheck(cfg: &GradcheckConfig, out: &Path) -> Result<Outcome> {
    let r = gradcheck(cfg)?;
    let pass = r.max_rel_err <= cfg.threshold;
    let result = json!({
        "max_rel_err": r.max_rel_err,
        "worst": r.worst,
        "threshold": cfg.threshold,
        "pass": pass,
    });
    let report = write_report(out, "gradcheck", cfg, &result)?;
    let status = if pass { Status::Ok } else { Status::GradcheckFailed };
    Ok(Outcome { status, report })
}

// ---------------------------------------------------------------- oracle

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Gd,
    Ols,
    Newton,
    Grad,
}

fn shaped_default() -> DistributionSpec {
    DistributionSpec::shaped(20, 5)
}
fn default_gd_steps() -> usize {
    5000
}
fn default_newton_steps() -> usize {
    30
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub kind: OracleKind,
    #[serde(default = "shaped_default")]
    pub dist: DistributionSpec,
    #[serde(default)]
    pub seed: u64,
    /// Instance index within the seed's stream.
    #[serde(default)]
    pub index: u64,
    /// Gradient-descent steps.
    #[serde(default = "default_gd_steps")]
    pub k: usize,
    /// Step size; the distribution's when absent.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_newton_steps")]
    pub steps: usize,
    #[serde(default = "double")]
    pub dtype: DType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub kind: OracleKind,
    pub x0: Vec<f64>,
    pub x_star: Vec<f64>,
    pub x: Vec<f64>,
    pub mse_to_star: Option<f64>,
    /// Distance to the least-squares solution (GD only).
    pub mse_to_ols: Option<f64>,
    /// `‖I − AᵀA·M‖_F` per Newton step.
    pub residuals: Option<Vec<f64>>,
}

pub fn oracle<T: Scalar>(cfg: &OracleConfig) -> Result<OracleResult> {
    let inst: LeastSquaresInstance<T> = sample_indexed(&cfg.dist, &SeededRng::new(cfg.seed, EVAL_STREAM), cfg.index)?;
    let eta = cfg.eta.unwrap_or(cfg.dist.eta);
    let mut r = OracleResult {
        kind: cfg.kind,
        x0: inst.x0.to_f64_vec(),
        x_star: inst.x_star.to_f64_vec(),
        x: Vec::new(),
        mse_to_star: None,
        mse_to_ols: None,
        residuals: None,
    };
    let x = match cfg.kind {
        OracleKind::Gd => {
            let x = gd_oracle(&inst.a, &inst.b, &inst.x0, eta, cfg.k)?;
            let ols: Tensor<f64> = ols_oracle(&inst.a.cast(), &inst.b.cast())?;
            r.mse_to_ols = Some(x.cast::<f64>().mse(&ols));
            x
        }
        OracleKind::Ols => ols_oracle(&inst.a, &inst.b)?,
        OracleKind::Newton => {
            let (m, res) = newton_oracle(&inst.a, cfg.steps)?;
            r.residuals = Some(res);
            let atb = matvec_t(&inst.a, &inst.b);
            let d = atb.len();
            ops::matmul(&m, &atb.reshape(&[d, 1])?)?.reshape(&[d])?
        }
        OracleKind::Grad => grad_oracle(&inst.a, &inst.b, &inst.x0, false)?,
    };
    if cfg.kind != OracleKind::Grad {
        r.mse_to_star = Some(x.mse(&inst.x_star));
    }
    r.x = x.to_f64_vec();
    Ok(r)
}

pub fn cmd_oracle(cfg: &OracleConfig, out: &Path) -> Result<Outcome> {
    let result = match cfg.dtype {
        DType::Single => oracle::<f32>(cfg)?,
        DType::Double => oracle::<f64>(cfg)?,
    };
    let report = write_report(out, "oracle", cfg, &result)?;
    Ok(Outcome {
        status: Status::Ok,
        report,
    })
}
