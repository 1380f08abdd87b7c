//! Statistical-mechanics sanity of the estimators at desk scale: annealed
//! bound direction, superadditivity, truncation error, localization signal,
//! tilted-variance bookkeeping, tail bounds, and the second-moment reports.

use polymer_core::coarse::{y_covariance_check, CoarseGrainPlan, XEvaluator};
use polymer_core::disorder::DisorderLaw;
use polymer_core::montecarlo::{collect_samples, log_zhat_samples, sample_field, sample_walk};
use polymer_core::oracle;
use polymer_core::partition::log_partition;
use polymer_core::replica;
use polymer_core::stats::StreamingStat;

const GAUSSIAN: DisorderLaw = DisorderLaw::StandardGaussian;

#[test]
fn jensen_direction_negative_mean_log() {
    // (1/N) E[log Zhat] < 0 beyond 3 SE in the strong-disorder regime
    let vals = log_zhat_samples(GAUSSIAN, 11, 0.8, 128, Some(40), 200).unwrap();
    let per_n: Vec<f64> = vals.iter().map(|v| v / 128.0).collect();
    let stat = StreamingStat::from_samples(&per_n);
    assert!(
        stat.mean() + 3.0 * stat.stderr() < 0.0,
        "mean {} +- {}",
        stat.mean(),
        stat.stderr()
    );
}

#[test]
fn superadditive_gap_bound_nonincreasing() {
    // -(1/N) E[log Zhat_N] forms a nonincreasing sequence within 2-SE bands
    let beta = 0.8;
    let mut prev: Option<(f64, f64)> = None;
    for n in [64usize, 128, 256, 512] {
        let trunc = Some((3.0 * (n as f64).sqrt()).ceil() as i64);
        let vals = log_zhat_samples(GAUSSIAN, 17, beta, n, trunc, 200).unwrap();
        let per_n: Vec<f64> = vals.iter().map(|v| -v / n as f64).collect();
        let stat = StreamingStat::from_samples(&per_n);
        if let Some((m, se)) = prev {
            assert!(
                stat.mean() <= m + 2.0 * (se + stat.stderr()),
                "estimate rose from {m} to {} at N={n}",
                stat.mean()
            );
        }
        prev = Some((stat.mean(), stat.stderr()));
    }
}

#[test]
fn truncation_error_small_and_shrinking() {
    // the 3 sqrt(N) guard radius keeps the error at the walk's exit
    // probability (~1e-4 scale); widening to 5 sqrt(N) pushes it below 1e-8
    let n = 64usize;
    for seed in [5u64, 6] {
        for beta in [0.5, 1.0] {
            let field = sample_field(GAUSSIAN, seed, 0, 2, n as i64, n as i64);
            let (full, _) = log_partition::<f64, _>(&field, beta, n, None).unwrap();
            let (t3, _) = log_partition::<f64, _>(&field, beta, n, Some(24)).unwrap();
            let (t5, _) = log_partition::<f64, _>(&field, beta, n, Some(40)).unwrap();
            let e3 = (full - t3).abs();
            let e5 = (full - t5).abs();
            assert!(e3 <= 1e-3, "radius 3 sqrt(N): {e3}");
            assert!(e5 <= 1e-8, "radius 5 sqrt(N): {e5}");
            assert!(e5 <= e3);
        }
    }
}

#[test]
fn overlap_average_positive_under_strong_disorder() {
    let (beta, n, samples) = (1.0f64, 256usize, 200u64);
    let trunc = Some((3.0 * (n as f64).sqrt()).ceil() as i64);
    let rows =
        polymer_core::montecarlo::free_energy_samples(GAUSSIAN, 2024, beta, n, trunc, samples)
            .unwrap();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_overlap).collect();
    let stat = StreamingStat::from_samples(&means);
    assert!(
        stat.mean() > 3.0 * stat.stderr(),
        "overlap {} +- {}",
        stat.mean(),
        stat.stderr()
    );
}

#[test]
fn pair_enumeration_identity_full_overlap_range() {
    // difference-walk DP against the 16^N pair enumeration at its budget edge
    let beta = 0.5f64;
    let gamma = replica::gamma::<f64>(GAUSSIAN, beta).unwrap();
    for n in [5usize, 6] {
        let dp = replica::two_replica_exponential_moment(gamma, n, 2).unwrap();
        let oracle = oracle::enumerate_pair_second_moment(GAUSSIAN, beta, n, 2).unwrap();
        assert!((dp - oracle).abs() <= 1e-10, "N={n}: {dp} vs {oracle}");
    }
}

#[test]
fn other_lattice_dimensions_run() {
    use polymer_core::disorder::EnvironmentField;
    use polymer_core::kernel::KernelTable;

    // d = 1: one-step law 1/2, two-step return 1/2
    let t1 = KernelTable::<f64>::build(1, 8).unwrap();
    assert_eq!(t1.prob(1, &[1]).unwrap(), 0.5);
    assert!((t1.prob(2, &[0]).unwrap() - 0.5).abs() < 1e-15);
    assert!((t1.slice_sum(8) - 1.0).abs() < 1e-13);
    // d = 3: one-step law 1/6
    let t3 = KernelTable::<f64>::build(3, 4).unwrap();
    assert!((t3.prob(1, &[0, 0, 1]).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    assert!((t3.slice_sum(4) - 1.0).abs() < 1e-13);

    // transfer matrix and its oracle in d = 1 and d = 3
    for dim in [1usize, 3] {
        let field = EnvironmentField::new(GAUSSIAN, 5, dim, 5, 5);
        let (lz, _) = log_partition::<f64, _>(&field, 0.7, 5, None).unwrap();
        let z = oracle::enumerate_paths_partition(&field, 0.7, 5).unwrap();
        assert!((z.ln() - lz).abs() < 1e-10, "d={dim}");
    }

    // two-replica conservation in d = 3
    let m: f64 = replica::two_replica_exponential_moment(0.0, 5, 3).unwrap();
    assert!((m - 1.0).abs() < 1e-12);
}

#[test]
fn second_moment_report_at_computable_scale() {
    let report =
        replica::second_moment_bound_check(GAUSSIAN, 1.4, 0.3, 1_000_000, 4000, 31).unwrap();
    assert_eq!(report.n, 4); // ceil(exp(0.7 pi / 1.96))
    assert!(report.second_moment > 1.0);
    // Paley-Zygmund consistency: the frequency cannot undershoot the bound
    assert!(
        report.mc_frequency >= report.pz_lower - 3.0 * report.mc_frequency_se,
        "P(Zhat >= 1/2) = {} vs PZ bound {}",
        report.mc_frequency,
        report.pz_lower
    );
}

#[test]
fn key_event_probability_above_floor() {
    let report = replica::key_event_check(GAUSSIAN, 1.2, 0.3, 1_000_000, 4000, 77).unwrap();
    assert_eq!(report.n, 5);
    assert!(
        report.joint_frequency - 3.0 * report.joint_frequency_se > report.floor_eps_over_80,
        "joint frequency {} vs floor {}",
        report.joint_frequency,
        report.floor_eps_over_80
    );
}

#[test]
fn gradient_norm_bounded_by_two_replica_quantity() {
    // E[|grad log Zhat|^2 ; Zhat >= 1/2] <= 4 beta^2 E[L exp(gamma L)]
    let (beta, n, samples) = (0.5f64, 16usize, 400u64);
    let gamma = replica::gamma::<f64>(GAUSSIAN, beta).unwrap();
    let bound = 4.0 * beta * beta
        * replica::two_replica_weighted_local_time(gamma, n, 2).unwrap();
    let vals = collect_samples(samples, |i| {
        let field = sample_field(GAUSSIAN, 4242, i, 2, n as i64, n as i64);
        let (lz, _) = log_partition::<f64, _>(&field, beta, n, None)?;
        if lz < 0.5f64.ln() {
            return Ok(0.0);
        }
        replica::gradient_norm_sq::<f64, _>(&field, beta, n, None)
    })
    .unwrap();
    let stat = StreamingStat::from_samples(&vals);
    assert!(
        stat.mean() <= bound + 3.0 * stat.stderr(),
        "restricted gradient mean {} vs bound {bound}",
        stat.mean()
    );
}

#[test]
fn tilted_variance_within_budget_on_tiny_instance() {
    // Var^S(X) <= (1 + eps^3)^q, closed form at a small tilt, plus the Monte
    // Carlo variance agreeing with the closed form
    let plan = CoarseGrainPlan::new_manual(4, 0.05, 1, 2.0, 1, 1, 2).unwrap();
    let eval = XEvaluator::<f64>::new(plan.clone()).unwrap();
    let beta = 0.05f64;
    let budget = (1.0 + plan.eps.powi(3)).powi(plan.order as i32);
    let mut checked = 0;
    for w_idx in 0..200u64 {
        let path = sample_walk(555, w_idx, 2, 4);
        let (mean, second) =
            oracle::enumerate_tilted_x_moments(&plan, &path, GAUSSIAN, beta).unwrap();
        let var = second - mean * mean;
        assert!(var <= budget, "path {w_idx}: Var^S = {var} vs budget {budget}");
        if mean > 1e-6 && checked < 2 {
            checked += 1;
            let xs = collect_samples(20_000, |i| {
                let field = sample_field(GAUSSIAN, 556 + w_idx, i, 2, 4, 8);
                let tilted = field.tilted(beta, &path);
                eval.x_statistic(&tilted)
            })
            .unwrap();
            let stat = StreamingStat::from_samples(&xs);
            assert!(
                (stat.mean() - mean).abs() <= 3.0 * stat.stderr(),
                "tilted mean MC {} vs {}",
                stat.mean(),
                mean
            );
            let var_se = stat.variance() * (2.0 / (xs.len() as f64 - 1.0)).sqrt();
            assert!(
                (stat.variance() - var).abs() <= 4.0 * var_se,
                "tilted variance MC {} vs closed form {var}",
                stat.variance()
            );
        }
    }
    assert!(checked > 0, "no path with a substantive tilt was sampled");
}

#[test]
fn rough_tail_bound_never_violated() {
    let law = DisorderLaw::ShiftedBernoulli { p: 0.25 };
    let report =
        oracle::desperate_tail_check(law, 1.0, 16, &[3.0, 10.0, 25.0], 2000, 9).unwrap();
    assert_eq!(report.violations, 0);
    // v = 3 at N = 16 is the vacuous regime (bound above one), flagged
    assert!(report.rows[0].vacuous);
    assert!(!report.rows.last().unwrap().vacuous);
}

#[test]
fn y_covariance_report_matches_enumeration() {
    let plan = CoarseGrainPlan::new_manual(16, 0.05, 1, 2.0, 1, 2, 2).unwrap();
    let eval = XEvaluator::<f64>::new(plan).unwrap();
    let far = y_covariance_check(&eval, 1, 5, 20_000, 123).unwrap();
    assert_eq!(far.exact, Some(far.exact.unwrap()));
    assert!(far.exact.unwrap().abs() < 1e-12);
    assert!(far.mc_covariance.abs() <= 3.0 * far.mc_se);
    assert!(far.max_abs_y <= far.envelope, "max |Y| {} vs envelope {}", far.max_abs_y, far.envelope);
    let near = y_covariance_check(&eval, 1, 3, 20_000, 124).unwrap();
    let exact = near.exact.unwrap();
    assert!(
        (near.mc_covariance - exact).abs() <= 3.0 * near.mc_se,
        "MC {} +- {} vs exact {exact}",
        near.mc_covariance,
        near.mc_se
    );
    // variance at j1 == j2 is positive
    let var = y_covariance_check(&eval, 2, 2, 5_000, 125).unwrap();
    assert!(var.exact.unwrap() > 0.0 && var.mc_covariance > 0.0);
}

#[test]
fn window_restriction_costs_a_bounded_constant() {
    // D(u) - Dhat(u) is nondecreasing and converges; report the scanned
    // supremum over u <= 1e4 as the working constant
    let u_max = 10_000;
    let d = polymer_core::kernel::d_series(u_max);
    let dhat = polymer_core::kernel::dhat_series(u_max);
    let mut prev = 0.0;
    for u in 1..=u_max {
        let gap = d[u - 1] - dhat[u - 1];
        assert!(gap >= prev - 1e-14, "gap shrank at u={u}");
        prev = gap;
    }
    let c = d[u_max - 1] - dhat[u_max - 1];
    assert!(c.is_finite() && c < 1.0, "scan constant {c}");
    // the tail contribution is already negligible: the last decade moves the
    // gap by less than 1e-6
    let mid = d[999] - dhat[999];
    assert!(c - mid < 1e-4, "gap still growing: {mid} -> {c}");
    println!("sup(D - Dhat) over u <= {u_max}: {c:.8}");
}

#[test]
fn plan_beta_window_accepts_and_warns() {
    // beta^2 D(u) must sit in [1 + eps, 1 + 2 eps]
    let plan = CoarseGrainPlan::new_manual(64, 0.09, 1, 2.0, 1, 2, 61).unwrap();
    let d_u = polymer_core::kernel::d_series(61)[60];
    let beta_ok = ((1.0 + 1.5 * plan.eps) / d_u).sqrt();
    let (v, ok) = plan.beta_window_check(beta_ok);
    assert!(ok, "{v} outside window");
    let (v_low, ok_low) = plan.beta_window_check(0.5 * beta_ok);
    assert!(!ok_low && v_low < 1.0 + plan.eps);
    let (v_high, ok_high) = plan.beta_window_check(2.0 * beta_ok);
    assert!(!ok_high && v_high > 1.0 + 2.0 * plan.eps);
}
