use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use precise_ls::constructions::ConstructionKind;
use precise_ls::harness::*;
use precise_ls::numerics::gaussian;
use precise_ls::tasks::{DistributionSpec, LINEAR_MAP_VARIANCE};
use precise_ls::training::TASK_STREAM;
use precise_ls::{DType, Error, Result, SeededRng};

#[derive(Parser)]
#[command(name = "precise-ls", version = version(), about = "Constructions, training and sweeps for in-context least squares")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `runs/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the working precision of the config.
    #[arg(long, global = true, value_enum)]
    dtype: Option<Precision>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    Single,
    Double,
}

impl From<Precision> for DType {
    fn from(p: Precision) -> Self {
        match p {
            Precision::Single => DType::Single,
            Precision::Double => DType::Double,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON training config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on fresh samples.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = EVAL_SAMPLES)]
        samples: usize,
    },
    /// Build a weight construction, save it and optionally verify it.
    Construct(ConstructArgs),
    /// Iterate an explicit-gradient model to its fixed point.
    Iterate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Solution error as the target scale grows.
    SweepOod {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Train one model per depth with a shared budget.
    DepthSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        depths: Option<Vec<usize>>,
        /// Iterations per depth.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Compare taped gradients with finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Evaluate a reference solver on one sampled instance.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Read,
    Linear,
    Multiply,
    GdNoncausal,
    GdCausal,
    GradientModel,
}

#[derive(Args)]
struct ConstructArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, required_unless_present = "config", conflicts_with = "config")]
    kind: Option<KindArg>,
    /// Sequence length (rows of `A`).
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Feature width.
    #[arg(long, default_value_t = 5)]
    d: usize,
    /// Source row (read).
    #[arg(long)]
    i: Option<usize>,
    /// Destination row (read).
    #[arg(long)]
    j: Option<usize>,
    /// First column range start.
    #[arg(long)]
    a: Option<usize>,
    /// Second column range start (multiply) or range end (read).
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    dout: Option<usize>,
    /// Linear map, rows separated by `;`, entries by `,`.
    #[arg(long)]
    h: Option<String>,
    #[arg(long, default_value_t = 0.04)]
    eta: f64,
    #[arg(long, default_value_t = 1)]
    steps: usize,
    #[arg(long)]
    normalized: bool,
    #[arg(long)]
    emb: Option<usize>,
    #[arg(long, default_value_t = 0)]
    verify: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Gd,
    Ols,
    Newton,
    Grad,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, required_unless_present = "config", conflicts_with = "config")]
    kind: Option<OracleArg>,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    index: u64,
    /// Gradient-descent steps.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    /// Newton steps.
    #[arg(long)]
    steps: Option<usize>,
}

fn need_config<T>(path: Option<&PathBuf>, what: &str) -> Result<T>
where
    T: for<'de> serde::Deserialize<'de>,
{
    match path {
        Some(p) => load_config(p),
        None => Err(Error::Config(format!("{what} needs --config or a checkpoint"))),
    }
}

fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad entry `{v}` in --h: {e}")))
                })
                .collect()
        })
        .collect()
}

fn construct_config(args: &ConstructArgs, seed: u64) -> Result<ConstructConfig> {
    let kind = args.kind.expect("clap enforces --kind without --config");
    let (n, d) = (args.n, args.d);
    let missing = |flag: &str| Error::Config(format!("--{flag} is required for this kind"));
    let construction = match kind {
        KindArg::Read => ConstructionKind::Read {
            n,
            d,
            i: args.i.ok_or_else(|| missing("i"))?,
            j: args.j.ok_or_else(|| missing("j"))?,
            a: args.a,
            b: args.b,
        },
        KindArg::Linear => {
            let h = match &args.h {
                Some(text) => parse_matrix(text)?,
                None => {
                    let d_out = args.dout.unwrap_or(1);
                    let m: precise_ls::Tensor<f64> = gaussian(
                        &mut SeededRng::new(seed, TASK_STREAM),
                        &[d, d_out],
                        LINEAR_MAP_VARIANCE.sqrt(),
                    );
                    (0..d).map(|r| m.data()[r * d_out..(r + 1) * d_out].to_vec()).collect()
                }
            };
            ConstructionKind::Linear { n, h }
        }
        KindArg::Multiply => ConstructionKind::Multiply {
            n,
            d,
            a: args.a.unwrap_or(0),
            b: args.b.unwrap_or(d / 2),
            d_out: args.dout.unwrap_or(d / 2),
        },
        KindArg::GdNoncausal => ConstructionKind::GdNoncausal {
            n,
            d,
            eta: args.eta,
            k: args.steps,
            normalized: args.normalized,
        },
        KindArg::GdCausal => ConstructionKind::GdCausal {
            n,
            d,
            eta: args.eta,
            k: args.steps,
            normalized: args.normalized,
        },
        KindArg::GradientModel => ConstructionKind::GradientModel {
            n,
            d,
            normalized: args.normalized,
        },
    };
    Ok(ConstructConfig {
        construction,
        emb: args.emb,
        dtype: DType::Double,
        verify: args.verify,
        seed,
        dist: None,
    })
}

fn oracle_config(args: &OracleArgs) -> OracleConfig {
    let kind = match args.kind.expect("clap enforces --kind without --config") {
        OracleArg::Gd => OracleKind::Gd,
        OracleArg::Ols => OracleKind::Ols,
        OracleArg::Newton => OracleKind::Newton,
        OracleArg::Grad => OracleKind::Grad,
    };
    let mut cfg: OracleConfig =
        serde_json::from_value(serde_json::json!({ "kind": kind })).expect("oracle defaults deserialize");
    cfg.dist = DistributionSpec::shaped(args.n, args.d);
    cfg.index = args.index;
    cfg.eta = args.eta;
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    cfg
}

fn run(cli: &Cli, out: &Path) -> Result<Outcome> {
    let dtype = cli.dtype.map(DType::from);
    match &cli.command {
        Command::Train { config } => {
            let mut cfg: precise_ls::training::TrainConfig = load_config(config)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cfg.dtype = dtype.unwrap_or(cfg.dtype);
            cmd_train(&cfg, out)
        }
        Command::Eval {
            config,
            checkpoint,
            samples,
        } => {
            let cfg = match checkpoint {
                Some(p) => EvalConfig {
                    checkpoint: p.clone(),
                    samples: *samples,
                    seed: cli.seed,
                },
                None => {
                    let mut c: EvalConfig = need_config(config.as_ref(), "eval")?;
                    c.seed = cli.seed.or(c.seed);
                    c
                }
            };
            cmd_eval(&cfg, out)
        }
        Command::Construct(args) => {
            let mut cfg = match &args.config {
                Some(p) => load_config(p)?,
                None => construct_config(args, cli.seed.unwrap_or(0))?,
            };
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cfg.dtype = dtype.unwrap_or(cfg.dtype);
            cmd_construct(&cfg, out)
        }
        Command::Iterate {
            config,
            checkpoint,
            instances,
        } => {
            let mut cfg: IterateConfig = match checkpoint {
                Some(p) => IterateConfig {
                    model: ModelSource::Checkpoint { path: p.clone() },
                    dist: None,
                    instances: *instances,
                    eta: None,
                    solve: SolveOptions::default(),
                    seed: 0,
                    dtype: DType::Single,
                },
                None => need_config(config.as_ref(), "iterate")?,
            };
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cfg.dtype = dtype.unwrap_or(cfg.dtype);
            cmd_iterate(&cfg, out)
        }
        Command::SweepOod {
            config,
            checkpoint,
            sigmas,
            samples,
        } => {
            let mut cfg: SweepOodConfig = match checkpoint {
                Some(p) => serde_json::from_value(serde_json::json!({
                    "model": { "source": "checkpoint", "path": p },
                    "samples": samples,
                }))?,
                None => need_config(config.as_ref(), "sweep-ood")?,
            };
            if let Some(s) = sigmas {
                cfg.sigmas = s.clone();
            }
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cfg.dtype = dtype.unwrap_or(cfg.dtype);
            cmd_sweep_ood(&cfg, out)
        }
        Command::DepthSweep { config, depths, budget } => {
            let mut cfg: DepthSweepConfig = load_config(config)?;
            if let Some(d) = depths {
                cfg.depths = d.clone();
            }
            if let Some(b) = budget {
                cfg.train.total_iters = *b;
            }
            cfg.train.seed = cli.seed.unwrap_or(cfg.train.seed);
            cfg.train.dtype = dtype.unwrap_or(cfg.train.dtype);
            cmd_depth_sweep(&cfg, out)
        }
        Command::Gradcheck { config, eps, threshold } => {
            let mut cfg: GradcheckConfig = load_config(config)?;
            cfg.eps = eps.unwrap_or(cfg.eps);
            cfg.threshold = threshold.unwrap_or(cfg.threshold);
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cmd_gradcheck(&cfg, out)
        }
        Command::Oracle(args) => {
            let mut cfg = match &args.config {
                Some(p) => load_config(p)?,
                None => oracle_config(args),
            };
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cfg.dtype = dtype.unwrap_or(cfg.dtype);
            cmd_oracle(&cfg, out)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Construct(_) => "construct",
        Command::Iterate { .. } => "iterate",
        Command::SweepOod { .. } => "sweep-ood",
        Command::DepthSweep { .. } => "depth-sweep",
        Command::Gradcheck { .. } => "gradcheck",
        Command::Oracle(_) => "oracle",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(command_name(&cli.command)));
    match run(&cli, &out) {
        Ok(o) => {
            match serde_json::to_string_pretty(&o.report["result"]) {
                Ok(text) => {
                    let _ = writeln!(std::io::stdout().lock(), "{text}");
                }
                Err(e) => eprintln!("error: {e}"),
            }
            match o.status {
                Status::Ok => {}
                Status::Diverged => eprintln!(
                    "error: training diverged; last good checkpoint kept in {}",
                    out.display()
                ),
                Status::GradcheckFailed => eprintln!("error: gradient check exceeded the threshold"),
            }
            ExitCode::from(o.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
