//! Experiment driver: every computation in the library is reachable as a
//! subcommand, with deterministic seeding, CSV/JSON artifacts, and
//! checkpoint/resume for the sampled sweeps.

mod commands;
mod config;
mod runner;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{default_out, parse_grid, parse_trajectory, ConfigFile, ExperimentConfig, PlanConfig};
use runner::RunPaths;

#[derive(Parser)]
#[command(
    name = "polymer",
    version,
    about = "Directed polymers in a random environment: transfer-matrix, replica and coarse-graining numerics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// master seed; sample i uses a counter-derived seed
    #[arg(long)]
    seed: Option<u64>,
    /// number of Monte Carlo samples
    #[arg(long)]
    samples: Option<u64>,
    /// worker threads (default: all cores; env POLYMER_WORKERS overrides)
    #[arg(long)]
    workers: Option<usize>,
    /// flat key = value config file supplying defaults for omitted flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output path
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary path
    #[arg(long)]
    summary: Option<PathBuf>,
    /// checkpoint file (JSON), written every checkpoint interval
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// samples per checkpoint chunk
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    /// stop (resumable) once this many samples are done
    #[arg(long)]
    stop_after: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct PlanArgs {
    /// cell length ell (square of an even integer)
    #[arg(long)]
    ell: Option<usize>,
    /// coarse-graining parameter eps in (0, 1/10)
    #[arg(long)]
    eps: Option<f64>,
    /// cell enlargement factor R
    #[arg(long)]
    enlargement: Option<i64>,
    /// penalty strength K
    #[arg(long)]
    penalty: Option<f64>,
    /// number of blocks m
    #[arg(long)]
    blocks: Option<usize>,
    /// interaction order q (omit together with --range for formula mode)
    #[arg(long)]
    order: Option<usize>,
    /// interaction time range u
    #[arg(long)]
    range: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Mean intersection local time series and kernel-table cache
    KernelTable {
        #[command(flatten)]
        common: Common,
        /// emit D(N), Dhat(N) rows for N up to this value
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        /// binary cache path (built if missing, validated if present)
        #[arg(long)]
        cache: Option<PathBuf>,
        /// stored-table horizon for the cache
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// log Zhat and overlap-gap sweep over disorder samples
    FreeEnergy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        law: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        /// beta grid start:end:step (overrides --beta)
        #[arg(long)]
        beta_grid: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        /// spatial truncation radius (>= 3 sqrt(N))
        #[arg(long)]
        truncation: Option<i64>,
    },
    /// Disorder-averaged replica overlap series o_k
    Overlap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        law: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        truncation: Option<i64>,
    },
    /// Exact E[(Zhat_N)^2] at the theorem scale, with Monte Carlo cross-checks
    SecondMoment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        law: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        /// override N instead of deriving it from (beta, eps)
        #[arg(long)]
        n: Option<usize>,
        /// refuse derived N above this cap
        #[arg(long)]
        cap: Option<u64>,
    },
    /// Monte Carlo of the change-of-measure statistic X
    XStatistic {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        law: Option<String>,
        /// optional beta for the beta^2 D(u) window diagnostic
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Monte Carlo of the W path statistic (and optional Y covariance)
    WStatistic {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plan: PlanArgs,
        /// estimate E[Y_{j1} Y_{j2}] for "j1,j2"
        #[arg(long)]
        y_cov: Option<String>,
    },
    /// Fractional-moment pipeline for one coarse trajectory, or a full sweep
    FractionalMoment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long)]
        law: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        /// trajectory labels "y1x,y1y;y2x,y2y"; omit for a full sweep
        #[arg(long)]
        trajectory: Option<String>,
        /// write the detailed per-block pipeline report instead
        #[arg(long)]
        report: bool,
    },
    /// Exhaustive scans of the elementary estimates
    LemmaScan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        binomial_t_max: Option<usize>,
        #[arg(long)]
        rotation_t_max: Option<usize>,
        #[arg(long)]
        clt_t_max: Option<usize>,
    },
    /// Theorem scale N_{beta,eps} over a beta grid
    ScaleTable {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        beta_grid: Option<String>,
        #[arg(long)]
        cap: Option<u64>,
    },
    /// Continue an interrupted run from its checkpoint
    Resume {
        /// checkpoint file written by the interrupted run
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV path of the interrupted run (defaults to the original)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

struct Resolved {
    seed: u64,
    samples: u64,
    workers: usize,
    out: Option<PathBuf>,
    summary: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    checkpoint_interval: u64,
    stop_after: Option<u64>,
    file: ConfigFile,
}

fn resolve_common(c: &Common) -> Result<Resolved> {
    let file = ConfigFile::load(c.config.as_deref())?;
    let workers = match c.workers.or(file.parse("workers")?) {
        Some(w) => w,
        None => std::env::var("POLYMER_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0),
    };
    Ok(Resolved {
        seed: c.seed.or(file.parse("seed")?).unwrap_or(0),
        samples: c.samples.or(file.parse("samples")?).unwrap_or(1000),
        workers,
        out: c.out.clone().or(file.str("out").map(PathBuf::from)),
        summary: c.summary.clone().or(file.str("summary").map(PathBuf::from)),
        checkpoint: c.checkpoint.clone().or(file.str("checkpoint").map(PathBuf::from)),
        checkpoint_interval: c
            .checkpoint_interval
            .or(file.parse("checkpoint-interval")?)
            .unwrap_or(1000),
        stop_after: c.stop_after.or(file.parse("stop-after")?),
        file,
    })
}

fn resolve_plan(p: &PlanArgs, file: &ConfigFile) -> Result<PlanConfig> {
    Ok(PlanConfig {
        ell: p.ell.or(file.parse("ell")?).unwrap_or(16),
        eps: p.eps.or(file.parse("eps")?).unwrap_or(0.05),
        enlargement: p.enlargement.or(file.parse("enlargement")?).unwrap_or(1),
        penalty: p.penalty.or(file.parse("penalty")?).unwrap_or(2.0),
        blocks: p.blocks.or(file.parse("blocks")?).unwrap_or(1),
        order: p.order.or(file.parse("order")?),
        range: p.range.or(file.parse("range")?),
    })
}

fn paths_for(res: &Resolved, command: &str) -> RunPaths {
    RunPaths {
        out: res.out.clone().unwrap_or_else(|| default_out(command)),
        summary: res.summary.clone(),
        checkpoint: res.checkpoint.clone(),
        checkpoint_interval: res.checkpoint_interval,
        stop_after: res.stop_after,
    }
}

fn with_pool<T>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("building worker pool")?
            .install(f)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::KernelTable {
            common,
            n_max,
            dim,
            cache,
            horizon,
        } => {
            let res = resolve_common(&common)?;
            let n_max = n_max.or(res.file.parse("n-max")?).unwrap_or(1000);
            let dim = dim.or(res.file.parse("dim")?).unwrap_or(2);
            let horizon = horizon.or(res.file.parse("horizon")?).unwrap_or(64);
            let out = res.out.clone().unwrap_or_else(|| default_out("kernel-table"));
            with_pool(res.workers, || {
                commands::kernel_table(n_max, dim, cache.as_deref().map(|p| (p, horizon)), &out)
            })
        }
        Command::FreeEnergy {
            common,
            law,
            beta,
            beta_grid,
            n,
            truncation,
        } => {
            let res = resolve_common(&common)?;
            let betas = match beta_grid.or(res.file.str("beta-grid")) {
                Some(g) => parse_grid(&g)?,
                None => vec![beta.or(res.file.parse("beta")?).unwrap_or(1.0)],
            };
            let cfg = ExperimentConfig::FreeEnergy {
                law: law.or(res.file.str("law")).unwrap_or_else(|| "standard-gaussian".into()),
                betas,
                n: n.or(res.file.parse("n")?).unwrap_or(256),
                truncation: truncation.or(res.file.parse("truncation")?),
                samples: res.samples,
                seed: res.seed,
            };
            let paths = paths_for(&res, "free-energy");
            with_pool(res.workers, || commands::execute(cfg, &paths, None).map(|_| ()))
        }
        Command::Overlap {
            common,
            law,
            beta,
            n,
            truncation,
        } => {
            let res = resolve_common(&common)?;
            let cfg = ExperimentConfig::Overlap {
                law: law.or(res.file.str("law")).unwrap_or_else(|| "standard-gaussian".into()),
                beta: beta.or(res.file.parse("beta")?).unwrap_or(1.0),
                n: n.or(res.file.parse("n")?).unwrap_or(128),
                truncation: truncation.or(res.file.parse("truncation")?),
                samples: res.samples,
                seed: res.seed,
            };
            let paths = paths_for(&res, "overlap");
            with_pool(res.workers, || commands::execute(cfg, &paths, None).map(|_| ()))
        }
        Command::SecondMoment {
            common,
            law,
            beta,
            eps,
            n,
            cap,
        } => {
            let res = resolve_common(&common)?;
            let cfg = ExperimentConfig::SecondMoment {
                law: law.or(res.file.str("law")).unwrap_or_else(|| "standard-gaussian".into()),
                beta: beta.or(res.file.parse("beta")?).unwrap_or(0.5),
                eps: eps.or(res.file.parse("eps")?).unwrap_or(0.3),
                n: n.or(res.file.parse("n")?),
                cap: cap.or(res.file.parse("cap")?).unwrap_or(10_000_000),
                samples: res.samples,
                seed: res.seed,
            };
            let paths = paths_for(&res, "second-moment");
            with_pool(res.workers, || commands::execute(cfg, &paths, None).map(|_| ()))
        }
        Command::XStatistic {
            common,
            plan,
            law,
            beta,
        } => {
            let res = resolve_common(&common)?;
            let cfg = ExperimentConfig::XStatistic {
                law: law.or(res.file.str("law")).unwrap_or_else(|| "standard-gaussian".into()),
                plan: resolve_plan(&plan, &res.file)?,
                beta: beta.or(res.file.parse("beta")?),
                samples: res.samples,
                seed: res.seed,
            };
            let paths = paths_for(&res, "x-statistic");
            with_pool(res.workers, || commands::execute(cfg, &paths, None).map(|_| ()))
        }
        Command::WStatistic { common, plan, y_cov } => {
            let res = resolve_common(&common)?;
            let y_cov = match y_cov.or(res.file.str("y-cov")) {
                Some(s) => {
                    let (a, b) = s
                        .split_once(',')
                        .ok_or_else(|| anyhow::anyhow!("--y-cov expects j1,j2"))?;
                    Some((a.trim().parse()?, b.trim().parse()?))
                }
                None => None,
            };
            let cfg = ExperimentConfig::WStatistic {
                plan: resolve_plan(&plan, &res.file)?,
                y_cov,
                samples: res.samples,
                seed: res.seed,
            };
            let paths = paths_for(&res, "w-statistic");
            with_pool(res.workers, || commands::execute(cfg, &paths, None).map(|_| ()))
        }
        Command::FractionalMoment {
            common,
            plan,
            law,
            beta,
            trajectory,
            report,
        } => {
            let res = resolve_common(&common)?;
            let law = law.or(res.file.str("law")).unwrap_or_else(|| "standard-gaussian".into());
            let beta = beta.or(res.file.parse("beta")?).unwrap_or(0.5);
            let plan_cfg = resolve_plan(&plan, &res.file)?;
            let trajectory = match trajectory.or(res.file.str("trajectory")) {
                Some(t) => Some(parse_trajectory(&t)?),
                None => None,
            };
            let paths = paths_for(&res, "fractional-moment");
            if report {
                let Some(labels) = trajectory else {
                    bail!("--report needs --trajectory");
                };
                return with_pool(res.workers, || {
                    commands::fractional_moment_report(
                        &law, beta, &plan_cfg, labels, res.samples, res.seed, &paths.out,
                    )
                });
            }
            let cfg = ExperimentConfig::FractionalMoment {
                law,
                beta,
                plan: plan_cfg,
                trajectory,
                samples: res.samples,
                seed: res.seed,
            };
            with_pool(res.workers, || commands::execute(cfg, &paths, None).map(|_| ()))
        }
        Command::LemmaScan {
            common,
            binomial_t_max,
            rotation_t_max,
            clt_t_max,
        } => {
            let res = resolve_common(&common)?;
            let out = res.out.clone().unwrap_or_else(|| PathBuf::from("lemma-scan.json"));
            let b = binomial_t_max.or(res.file.parse("binomial-t-max")?).unwrap_or(60);
            let r = rotation_t_max.or(res.file.parse("rotation-t-max")?).unwrap_or(50);
            let c = clt_t_max.or(res.file.parse("clt-t-max")?).unwrap_or(500);
            with_pool(res.workers, || commands::lemma_scan(b, r, c, &out))
        }
        Command::ScaleTable {
            common,
            eps,
            beta_grid,
            cap,
        } => {
            let res = resolve_common(&common)?;
            let eps = eps.or(res.file.parse("eps")?).unwrap_or(0.1);
            let grid = beta_grid
                .or(res.file.str("beta-grid"))
                .unwrap_or_else(|| "0.3:1.8:0.1".into());
            let betas = parse_grid(&grid)?;
            let cap = cap.or(res.file.parse("cap")?).unwrap_or(10_000_000);
            let out = res.out.clone().unwrap_or_else(|| default_out("scale-table"));
            commands::scale_table(eps, &betas, cap, &out)
        }
        Command::Resume {
            checkpoint,
            out,
            summary,
            workers,
        } => {
            let ck = runner::load_checkpoint(&checkpoint)?;
            let out = out.unwrap_or_else(|| ck.csv_path.clone());
            let paths = RunPaths {
                out,
                summary,
                checkpoint: Some(checkpoint),
                checkpoint_interval: 1000,
                stop_after: None,
            };
            let workers = workers
                .or_else(|| {
                    std::env::var("POLYMER_WORKERS")
                        .ok()
                        .and_then(|v| v.parse().ok())
                })
                .unwrap_or(0);
            let cfg = ck.config.clone();
            with_pool(workers, || commands::execute(cfg, &paths, Some(ck)).map(|_| ()))
        }
    }
}

