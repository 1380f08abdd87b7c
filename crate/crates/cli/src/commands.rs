//! Per-subcommand wiring: each checkpointable command becomes a [`Task`];
//! table/scan commands write their artifacts directly.

use anyhow::{bail, Context, Result};
use serde_json::json;

use polymer_core::coarse::{
    fractional_moment_pipeline, fractional_moment_sweep, y_covariance_check, XEvaluator,
};
use polymer_core::disorder::DisorderLaw;
use polymer_core::kernel;
use polymer_core::montecarlo::{sample_field, sample_walk};
use polymer_core::partition::{self, CoarseTrajectory};
use polymer_core::replica;
use polymer_core::rng::sample_seed;
use polymer_core::stats::StreamingStat;

use crate::config::{fnv1a64, ExperimentConfig, PlanConfig};
use crate::runner::{run, Checkpoint, Outcome, RunPaths, Task};

fn law_of(name: &str) -> Result<DisorderLaw> {
    Ok(DisorderLaw::parse(name)?)
}

fn agg_row(name: &str, tag: u64, s: &StreamingStat) -> String {
    format!(
        "{name},{tag:016x},{},{},{},{}",
        s.count,
        s.mean(),
        s.variance(),
        s.stderr()
    )
}

fn exact_row(name: &str, tag: u64, value: f64) -> String {
    format!("{name},{tag:016x},1,{value},0,0")
}

/// Dispatch a resolved config, fresh or resumed.
pub fn execute(
    config: ExperimentConfig,
    paths: &RunPaths,
    resume: Option<Checkpoint>,
) -> Result<Outcome> {
    match &config {
        ExperimentConfig::FreeEnergy {
            law,
            betas,
            n,
            truncation,
            samples,
            seed,
        } => {
            let law = law_of(law)?;
            let (n, samples, seed, trunc) = (*n, *samples, *seed, *truncation);
            let betas = betas.clone();
            let kinds = ["log_zhat", "log_zhat_over_n", "overlap_gap", "mean_overlap"];
            let mut stat_names = Vec::new();
            for beta in &betas {
                for k in kinds {
                    stat_names.push(format!("{k}[beta={beta}]"));
                }
            }
            let per_beta = samples;
            let betas_eval = betas.clone();
            let betas_derived = betas.clone();
            let betas_rows = betas.clone();
            let task = Task {
                config: config.clone(),
                total_samples: per_beta * betas.len() as u64,
                stat_names,
                eval: Box::new(move |k| {
                    let b_idx = (k / per_beta) as usize;
                    let j = k % per_beta;
                    let beta = betas_eval[b_idx];
                    let radius = trunc.unwrap_or(n as i64).min(n as i64);
                    let field = sample_field(law, seed, j, 2, n as i64, radius);
                    let s = partition::overlap_series::<f64, _>(&field, beta, n, trunc)?;
                    let base = b_idx * 4;
                    Ok(vec![
                        (base, s.log_zhat),
                        (base + 1, s.log_zhat / n as f64),
                        (base + 2, s.gap_estimate),
                        (base + 3, s.o.iter().sum::<f64>() / n as f64),
                    ])
                }),
                per_sample_header: Some("seed,sample_index,n,beta,log_zhat".into()),
                per_sample_row: Some(Box::new(move |k, pairs| {
                    let b_idx = (k / per_beta) as usize;
                    let j = k % per_beta;
                    format!(
                        "{},{j},{n},{},{}",
                        sample_seed(seed, j),
                        betas[b_idx],
                        pairs[0].1
                    )
                })),
                finalize_rows: Box::new(move |stats| {
                    let mut rows = vec![
                        "beta,n,mean_log_zhat_over_n,stderr,gap_upper_bound,overlap_gap_estimate,overlap_gap_stderr"
                            .to_string(),
                    ];
                    for (i, c) in stats.chunks(4).enumerate() {
                        rows.push(format!(
                            "{},{n},{},{},{},{},{}",
                            betas_rows[i],
                            c[1].mean(),
                            c[1].stderr(),
                            -c[1].mean(),
                            c[2].mean(),
                            c[2].stderr()
                        ));
                    }
                    rows
                }),
                derived: Box::new(move |stats| {
                    let rows: Vec<serde_json::Value> = stats
                        .chunks(4)
                        .enumerate()
                        .map(|(i, c)| {
                            json!({
                                "beta": betas_derived[i],
                                "n": n,
                                "mean_log_zhat_over_n": c[1].mean(),
                                "stderr": c[1].stderr(),
                                "gap_upper_bound": -c[1].mean(),
                                "overlap_gap_estimate": c[2].mean(),
                                "overlap_gap_stderr": c[2].stderr(),
                            })
                        })
                        .collect();
                    json!({ "per_beta": rows })
                }),
            };
            run(&task, paths, resume)
        }

        ExperimentConfig::Overlap {
            law,
            beta,
            n,
            truncation,
            samples,
            seed,
        } => {
            let law = law_of(law)?;
            let (beta, n, trunc, samples, seed) = (*beta, *n, *truncation, *samples, *seed);
            let stat_names: Vec<String> = (1..=n).map(|k| format!("o_{k}")).collect();
            let task = Task {
                config: config.clone(),
                total_samples: samples,
                stat_names,
                eval: Box::new(move |j| {
                    let radius = trunc.unwrap_or(n as i64).min(n as i64);
                    let field = sample_field(law, seed, j, 2, n as i64, radius);
                    let s = partition::overlap_series::<f64, _>(&field, beta, n, trunc)?;
                    Ok(s.o.iter().enumerate().map(|(i, &o)| (i, o)).collect())
                }),
                per_sample_header: None,
                per_sample_row: None,
                finalize_rows: Box::new(|stats| {
                    let mut rows = vec!["k,o_k,stderr".to_string()];
                    for (i, s) in stats.iter().enumerate() {
                        rows.push(format!("{},{},{}", i + 1, s.mean(), s.stderr()));
                    }
                    rows
                }),
                derived: Box::new(move |stats| {
                    let lambda = law.cumulants::<f64>(beta).map(|c| c.lambda).unwrap_or(f64::NAN);
                    let mean: f64 = stats.iter().map(|s| s.mean()).sum::<f64>() / stats.len() as f64;
                    json!({ "gap_estimate": lambda * mean })
                }),
            };
            run(&task, paths, resume)
        }

        ExperimentConfig::SecondMoment {
            law,
            beta,
            eps,
            n,
            cap,
            samples,
            seed,
        } => {
            let law = law_of(law)?;
            let (beta, eps, cap, samples, seed) = (*beta, *eps, *cap, *samples, *seed);
            let n = match n {
                Some(n) => *n,
                None => replica::choose_scale_n(beta, eps, cap)? as usize,
            };
            let gamma = replica::gamma::<f64>(law, beta)?;
            let exact = replica::two_replica_exponential_moment(gamma, n, 2)?;
            let pz_lower = 1.0 / (4.0 * exact);
            let task = Task {
                config: config.clone(),
                total_samples: samples,
                stat_names: vec!["zhat_squared".into(), "zhat_ge_half".into()],
                eval: Box::new(move |j| {
                    let field = sample_field(law, seed, j, 2, n as i64, n as i64);
                    let (lz, _) = partition::log_partition::<f64, _>(&field, beta, n, None)?;
                    let z = lz.exp();
                    Ok(vec![(0, z * z), (1, if z >= 0.5 { 1.0 } else { 0.0 })])
                }),
                per_sample_header: None,
                per_sample_row: None,
                finalize_rows: Box::new(move |stats| {
                    vec![
                        "beta,eps,n,second_moment,bound_10_over_eps,pz_lower,mc_second_moment,mc_second_moment_stderr,mc_frequency,mc_frequency_stderr".into(),
                        format!(
                            "{beta},{eps},{n},{exact},{},{pz_lower},{},{},{},{}",
                            10.0 / eps,
                            stats[0].mean(),
                            stats[0].stderr(),
                            stats[1].mean(),
                            stats[1].stderr()
                        ),
                    ]
                }),
                derived: Box::new(move |stats| {
                    json!({
                        "n": n,
                        "gamma": gamma,
                        "second_moment_exact": exact,
                        "bound_10_over_eps": 10.0 / eps,
                        "bound_holds": exact <= 10.0 / eps,
                        "pz_lower": pz_lower,
                        "pz_consistent": stats[1].mean() >= pz_lower - 3.0 * stats[1].stderr(),
                    })
                }),
            };
            run(&task, paths, resume)
        }

        ExperimentConfig::XStatistic {
            law,
            plan,
            beta,
            samples,
            seed,
        } => {
            let law = law_of(law)?;
            let (samples, seed) = (*samples, *seed);
            let built = plan.build()?;
            for w in built.warnings() {
                eprintln!("plan warning: {w}");
            }
            if let Some(b) = beta {
                let (v, ok) = built.beta_window_check(*b);
                if !ok {
                    eprintln!(
                        "plan warning: beta^2 D(u) = {v:.4} outside [1+eps, 1+2eps] = [{:.4}, {:.4}]",
                        1.0 + built.eps,
                        1.0 + 2.0 * built.eps
                    );
                }
            }
            let ell = built.ell as i64;
            let window = built.window();
            let tag = fnv1a64(built.fingerprint().as_bytes());
            let eval = XEvaluator::<f64>::new(built)?;
            let exact_m2 = eval.exact_second_moment();
            let task = Task {
                config: config.clone(),
                total_samples: samples,
                stat_names: vec!["x".into(), "x_squared".into()],
                eval: Box::new(move |j| {
                    let field = sample_field(law, seed, j, 2, ell, window.max(ell));
                    let x = eval.x_statistic(&field)?;
                    Ok(vec![(0, x), (1, x * x)])
                }),
                per_sample_header: None,
                per_sample_row: None,
                finalize_rows: Box::new(move |stats| {
                    vec![
                        "statistic,plan_hash,sample_count,mean,variance,stderr".into(),
                        agg_row("x", tag, &stats[0]),
                        agg_row("x_squared", tag, &stats[1]),
                        exact_row("x_second_moment_exact", tag, exact_m2),
                    ]
                }),
                derived: Box::new(move |stats| {
                    json!({
                        "exact_second_moment": exact_m2,
                        "mc_mean_over_se": stats[0].mean() / stats[0].stderr().max(1e-300),
                    })
                }),
            };
            run(&task, paths, resume)
        }

        ExperimentConfig::WStatistic {
            plan,
            y_cov,
            samples,
            seed,
        } => {
            let (samples, seed) = (*samples, *seed);
            let built = plan.build()?;
            for w in built.warnings() {
                eprintln!("plan warning: {w}");
            }
            let ell = built.ell;
            let tag = fnv1a64(built.fingerprint().as_bytes());
            let eval = XEvaluator::<f64>::new(built)?;
            let exact = eval.w_mean_exact();
            let y_cov = *y_cov;
            let eval_ref = &eval;
            let task = Task {
                config: config.clone(),
                total_samples: samples,
                stat_names: vec!["w".into()],
                eval: Box::new(move |j| {
                    let walk = sample_walk(seed, j, 2, ell);
                    Ok(vec![(0, eval_ref.w_statistic(&walk)?)])
                }),
                per_sample_header: None,
                per_sample_row: None,
                finalize_rows: Box::new(move |stats| {
                    let mut rows = vec![
                        "statistic,plan_hash,sample_count,mean,variance,stderr".into(),
                        agg_row("w", tag, &stats[0]),
                        exact_row("w_mean_exact", tag, exact),
                    ];
                    if let Some((j1, j2)) = y_cov {
                        match y_covariance_check(eval_ref, j1, j2, samples, seed ^ 0x9e37) {
                            Ok(rep) => {
                                let var = rep.mc_se * rep.mc_se * rep.samples as f64;
                                rows.push(format!(
                                    "y_cov_{j1}_{j2},{tag:016x},{},{},{var},{}",
                                    rep.samples, rep.mc_covariance, rep.mc_se
                                ));
                                if let Some(exact) = rep.exact {
                                    rows.push(exact_row(
                                        &format!("y_cov_{j1}_{j2}_exact"),
                                        tag,
                                        exact,
                                    ));
                                }
                            }
                            Err(e) => rows.push(format!("y_cov_{j1}_{j2},{tag:016x},0,,,{e}")),
                        }
                    }
                    rows
                }),
                derived: Box::new(move |stats| {
                    json!({
                        "w_mean_exact": exact,
                        "deviation_in_se": (stats[0].mean() - exact).abs() / stats[0].stderr().max(1e-300),
                    })
                }),
            };
            run(&task, paths, resume)
        }

        ExperimentConfig::FractionalMoment {
            law,
            beta,
            plan,
            trajectory,
            samples,
            seed,
        } => {
            let law = law_of(law)?;
            let (beta, samples, seed) = (*beta, *samples, *seed);
            let built = plan.build()?;
            for w in built.warnings() {
                eprintln!("plan warning: {w}");
            }
            match trajectory {
                None => {
                    // full sweep: runs outside the checkpointed loop
                    let report = fractional_moment_sweep(&built, law, seed, beta, samples)?;
                    let text = serde_json::to_string_pretty(&report)?;
                    std::fs::write(&paths.out, &text)?;
                    if let Some(s) = &paths.summary {
                        std::fs::write(s, &text)?;
                    }
                    println!(
                        "sweep over {} trajectories: sum_Y E[sqrt Z_Y] = {:.6} (+- {:.1e}) vs 2^-m = {:.6}",
                        report.trajectories,
                        report.sum_sqrt_means,
                        report.sum_sqrt_se,
                        report.two_pow_neg_m
                    );
                    Ok(Outcome::Completed)
                }
                Some(labels) => {
                    let traj = CoarseTrajectory::new(built.sqrt_ell, labels.clone(), 2)?;
                    let tag = fnv1a64(built.fingerprint().as_bytes());
                    let eval = XEvaluator::<f64>::new(built)?;
                    let eval_ref = &eval;
                    let plan_ref = eval_ref.plan();
                    let m = plan_ref.blocks;
                    let n = plan_ref.ell * m;
                    let radius = n as i64 + plan_ref.window() + plan_ref.sqrt_ell * m as i64;
                    let threshold = plan_ref.threshold();
                    let penalty = plan_ref.penalty;
                    let traj_eval = traj.clone();
                    let task = Task {
                        config: config.clone(),
                        total_samples: samples,
                        stat_names: vec!["sqrt_z".into(), "g_inv".into(), "g_z".into()],
                        eval: Box::new(move |j| {
                            let field = sample_field(law, seed, j, 2, n as i64, radius);
                            let z: f64 =
                                partition::coarse_grained_partition(&field, beta, &traj_eval)?;
                            let mut g = 1.0f64;
                            for block in 1..=m {
                                let cell: Vec<i64> = if block == 1 {
                                    vec![0, 0]
                                } else {
                                    traj_eval.label(block - 2).to_vec()
                                };
                                let x = eval_ref.x_statistic_at(&field, block, &cell)?;
                                if x >= threshold {
                                    g *= (-penalty).exp();
                                }
                            }
                            Ok(vec![(0, z.sqrt()), (1, 1.0 / g), (2, g * z)])
                        }),
                        per_sample_header: None,
                        per_sample_row: None,
                        finalize_rows: Box::new(move |stats| {
                            vec![
                                "statistic,plan_hash,sample_count,mean,variance,stderr".into(),
                                agg_row("sqrt_z", tag, &stats[0]),
                                agg_row("g_inv", tag, &stats[1]),
                                agg_row("g_z", tag, &stats[2]),
                            ]
                        }),
                        derived: Box::new(move |stats| {
                            let lhs = stats[0].mean() * stats[0].mean();
                            let rhs = stats[1].mean() * stats[2].mean();
                            json!({
                                "cauchy_schwarz_lhs": lhs,
                                "cauchy_schwarz_rhs": rhs,
                                "cauchy_schwarz_ok": lhs <= rhs
                                    + 3.0 * (2.0 * stats[0].mean().abs() * stats[0].stderr()
                                        + stats[1].stderr() * stats[2].mean().abs()
                                        + stats[1].mean().abs() * stats[2].stderr()),
                            })
                        }),
                    };
                    run(&task, paths, resume)
                }
            }
        }
    }
}

/// Detailed single-shot report for a trajectory (printed, not checkpointed).
pub fn fractional_moment_report(
    law: &str,
    beta: f64,
    plan: &PlanConfig,
    labels: Vec<Vec<i64>>,
    samples: u64,
    seed: u64,
    out: &std::path::Path,
) -> Result<()> {
    let law = law_of(law)?;
    let built = plan.build()?;
    let traj = CoarseTrajectory::new(built.sqrt_ell, labels, 2)?;
    let eval = XEvaluator::<f64>::new(built)?;
    let report = fractional_moment_pipeline(&eval, law, seed, beta, &traj, samples)?;
    std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "E[sqrt Z_Y] = {:.6}; Cauchy-Schwarz lhs {:.6} vs rhs {:.6} (violated beyond 3 SE: {})",
        report.sqrt_z.mean,
        report.cauchy_schwarz.lhs,
        report.cauchy_schwarz.rhs,
        report.cauchy_schwarz.violated_beyond_3se
    );
    Ok(())
}

/// kernel-table: D / Dhat series as CSV, plus optional binary slice cache.
pub fn kernel_table(
    n_max: usize,
    dim: usize,
    cache: Option<(&std::path::Path, usize)>,
    out: &std::path::Path,
) -> Result<()> {
    let d = kernel::d_series(n_max);
    let dhat = kernel::dhat_series(n_max);
    let mut csv = String::from("n,d,dhat,pi_d_over_logn\n");
    for n in 1..=n_max {
        let ratio = if n > 1 {
            std::f64::consts::PI * d[n - 1] / (n as f64).ln()
        } else {
            f64::NAN
        };
        csv.push_str(&format!("{n},{},{},{ratio}\n", d[n - 1], dhat[n - 1]));
    }
    std::fs::write(out, csv)?;
    println!(
        "wrote D/Dhat series for N <= {n_max} (D({n_max}) = {:.6}, Dhat({n_max}) = {:.6})",
        d[n_max - 1],
        dhat[n_max - 1]
    );
    if let Some((path, horizon)) = cache {
        if path.exists() {
            let table = polymer_core::KernelTableF64::load_cache(path, dim, horizon)
                .context("loading kernel cache")?;
            println!(
                "cache ok: d={dim} T={horizon}, sum p({horizon}, .) = {:.12}",
                table.slice_sum(horizon)
            );
        } else {
            let table = polymer_core::KernelTableF64::build(dim, horizon)?;
            table.save_cache(path)?;
            println!("built and cached kernel table d={dim} T={horizon} at {}", path.display());
        }
    }
    Ok(())
}

/// lemma-scan: the elementary-estimate scans as a JSON report array.
pub fn lemma_scan(
    binomial_t_max: usize,
    rotation_t_max: usize,
    clt_t_max: usize,
    out: &std::path::Path,
) -> Result<()> {
    use polymer_core::oracle;

    let binomial = oracle::binomial_ratio_scan(binomial_t_max)?;
    println!(
        "binomial ratio scan (t <= {binomial_t_max}): max {:.6} at {}; Stirling violations {}",
        binomial.extremum, binomial.location, binomial.violations
    );
    let rotation = oracle::reduction_to_1d_check(rotation_t_max)?;
    println!(
        "rotation factorization (t <= {rotation_t_max}): worst residual {:.2e}; violations {}",
        rotation.extremum, rotation.violations
    );
    let clt = kernel::local_clt_scan(1, clt_t_max, 1.0 + 1e-12);
    let clt_fact = oracle::local_clt_constant_factorized(1, clt_t_max);
    println!(
        "local CLT (1 <= t <= {clt_t_max}): c1 = {:.6} at t={} x={:?}; violations {}; factorized route {:.6}",
        clt.maximum, clt.arg_t, clt.arg_x, clt.violations, clt_fact
    );
    let report = json!({
        "binomial_ratio": binomial,
        "rotation_factorization": rotation,
        "local_clt": clt,
        "local_clt_factorized": clt_fact,
    });
    std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

/// scale-table: N_{beta,eps} over a beta grid, flagging unreachable rows.
pub fn scale_table(eps: f64, betas: &[f64], cap: u64, out: &std::path::Path) -> Result<()> {
    let mut csv = String::from("beta,eps,n,reachable,required\n");
    let mut unreachable = 0;
    for &beta in betas {
        match replica::choose_scale_n(beta, eps, cap) {
            Ok(n) => csv.push_str(&format!("{beta},{eps},{n},true,{n}\n")),
            Err(polymer_core::Error::ScaleUnreachable { required, .. }) => {
                unreachable += 1;
                csv.push_str(&format!("{beta},{eps},,false,{required:.6e}\n"));
                println!(
                    "beta = {beta}: theorem scale unreachable, requires N ~ {required:.3e} > cap {cap}"
                );
            }
            Err(e) => bail!(e),
        }
    }
    std::fs::write(out, csv)?;
    println!(
        "scale table for {} betas written ({unreachable} unreachable at cap {cap})",
        betas.len()
    );
    Ok(())
}
