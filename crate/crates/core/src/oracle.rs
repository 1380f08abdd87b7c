//! Brute-force and closed-form oracles. Everything here evaluates a
//! definition directly (path sums, tuple sums, binomial identities) so the
//! dynamic programs elsewhere have an independent reference at desk scale.
//! Oracles are deliberately slow and refuse inputs beyond their budget.

use serde::Serialize;

use crate::coarse::{CoarseGrainPlan, TupleIndexSet};
use crate::disorder::{Disorder, DisorderLaw, PerturbedField};
use crate::error::{Error, Result};
use crate::kernel::{self, KernelTable};
use crate::lattice::Walk;
use crate::montecarlo::{collect_samples, sample_field};
use crate::partition;
use crate::stats::{KahanSum, StreamingStat};

/// Outcome of an exhaustive parameter scan.
#[derive(Clone, Debug, Serialize)]
pub struct ScanReport {
    pub grid: String,
    pub extremum: f64,
    pub location: String,
    pub violations: u64,
    pub checks: u64,
}

/// Zhat_N by direct summation over all (2d)^N nearest-neighbor paths.
pub fn enumerate_paths_partition<D: Disorder>(field: &D, beta: f64, n: usize) -> Result<f64> {
    let dim = field.dim();
    let dirs = 2 * dim;
    if n > 8 {
        return Err(Error::Resource {
            what: format!("path enumeration N={n}"),
            required: (dirs as u64).pow(n as u32),
            budget: (dirs as u64).pow(8),
        });
    }
    let lambda = field.law().cumulants(beta)?.lambda;
    let total_paths = dirs.pow(n as u32);
    let mut acc = KahanSum::<f64>::new();
    let mut pos = vec![0i64; dim];
    for code in 0..total_paths {
        pos.iter_mut().for_each(|c| *c = 0);
        let mut c = code;
        let mut energy = 0.0;
        for t in 1..=n {
            let step = c % dirs;
            c /= dirs;
            let axis = step / 2;
            pos[axis] += if step % 2 == 0 { 1 } else { -1 };
            energy += beta * field.omega(t as i64, &pos)?;
        }
        acc.add(energy.exp());
    }
    Ok(acc.value() * (-(n as f64) * lambda).exp() / total_paths as f64)
}

/// Gibbs occupation probabilities P(S_t = x) by direct path summation.
pub fn enumerate_marginals<D: Disorder>(
    field: &D,
    beta: f64,
    n: usize,
) -> Result<Vec<std::collections::BTreeMap<Vec<i64>, f64>>> {
    let dim = field.dim();
    let dirs = 2 * dim;
    if n > 8 {
        return Err(Error::Resource {
            what: format!("marginal enumeration N={n}"),
            required: (dirs as u64).pow(n as u32),
            budget: (dirs as u64).pow(8),
        });
    }
    let total_paths = dirs.pow(n as u32);
    let mut mass: Vec<std::collections::BTreeMap<Vec<i64>, f64>> = vec![Default::default(); n + 1];
    let mut z = KahanSum::<f64>::new();
    let mut pos = vec![0i64; dim];
    let mut track = vec![0i64; dim * (n + 1)];
    for code in 0..total_paths {
        pos.iter_mut().for_each(|c| *c = 0);
        track[..dim].iter_mut().for_each(|c| *c = 0);
        let mut c = code;
        let mut energy = 0.0;
        for t in 1..=n {
            let step = c % dirs;
            c /= dirs;
            pos[step / 2] += if step % 2 == 0 { 1 } else { -1 };
            track[t * dim..(t + 1) * dim].copy_from_slice(&pos);
            energy += beta * field.omega(t as i64, &pos)?;
        }
        let w = energy.exp();
        z.add(w);
        for t in 0..=n {
            *mass[t]
                .entry(track[t * dim..(t + 1) * dim].to_vec())
                .or_insert(0.0) += w;
        }
    }
    let z = z.value();
    for slice in &mut mass {
        for v in slice.values_mut() {
            *v /= z;
        }
    }
    Ok(mass)
}

/// E^{(x)2}[exp(gamma(beta) L_N)] by enumeration over all (2d)^{2N} path
/// pairs, counting collisions directly.
pub fn enumerate_pair_second_moment(
    law: DisorderLaw,
    beta: f64,
    n: usize,
    dim: usize,
) -> Result<f64> {
    let dirs = 2 * dim;
    if n > 6 {
        return Err(Error::Resource {
            what: format!("path-pair enumeration N={n}"),
            required: (dirs as u64).pow(2 * n as u32),
            budget: (dirs as u64).pow(12),
        });
    }
    let gamma = crate::replica::gamma::<f64>(law, beta)?;
    let total_paths = dirs.pow(n as u32);
    // materialize all paths
    let mut paths = vec![0i64; total_paths * n * dim];
    let mut pos = vec![0i64; dim];
    for code in 0..total_paths {
        pos.iter_mut().for_each(|c| *c = 0);
        let mut c = code;
        for t in 0..n {
            let step = c % dirs;
            c /= dirs;
            pos[step / 2] += if step % 2 == 0 { 1 } else { -1 };
            paths[(code * n + t) * dim..(code * n + t + 1) * dim].copy_from_slice(&pos);
        }
    }
    let mut acc = KahanSum::<f64>::new();
    for a in 0..total_paths {
        for b in 0..total_paths {
            let mut collisions = 0u32;
            for t in 0..n {
                let pa = &paths[(a * n + t) * dim..(a * n + t + 1) * dim];
                let pb = &paths[(b * n + t) * dim..(b * n + t + 1) * dim];
                if pa == pb {
                    collisions += 1;
                }
            }
            acc.add((gamma * collisions as f64).exp());
        }
    }
    Ok(acc.value() / (total_paths as f64).powi(2))
}

fn plan_norm_x(plan: &CoarseGrainPlan, d_u: f64) -> f64 {
    1.0 / (2.0 * plan.enlargement as f64 * plan.ell as f64 * d_u.powf(plan.order as f64 / 2.0))
}

/// Kernel product P(t, x) with the rho windows, straight from the table.
fn tuple_kernel(table: &KernelTable<f64>, times: &[usize], sites: &[[i64; 2]]) -> Result<f64> {
    let mut p = 1.0;
    for j in 1..times.len() {
        let dt = times[j] - times[j - 1];
        let dx = [sites[j][0] - sites[j - 1][0], sites[j][1] - sites[j - 1][1]];
        let l1 = dx[0].abs() + dx[1].abs();
        if (l1 as f64) > kernel::rho(dt as u64)? {
            return Ok(0.0);
        }
        p *= table.prob(dt, &dx)?;
        if p == 0.0 {
            return Ok(0.0);
        }
    }
    Ok(p)
}

fn widened_cell_sites(plan: &CoarseGrainPlan) -> Vec<[i64; 2]> {
    let w = plan.window();
    let mut sites = Vec::new();
    for x0 in -w..=w {
        for x1 in -w..=w {
            sites.push([x0, x1]);
        }
    }
    sites
}

/// Every nonzero term (coordinates, kernel product) of the tuple sum
/// defining X.
fn enumerate_x_terms(plan: &CoarseGrainPlan) -> Result<Vec<(Vec<(usize, [i64; 2])>, f64)>> {
    let table = KernelTable::<f64>::build(2, plan.range)?;
    let sites = widened_cell_sites(plan);
    let tuples = TupleIndexSet::of(plan).full();
    let mut terms = Vec::new();
    let mut assignment = vec![[0i64; 2]; plan.order + 1];
    fn rec(
        table: &KernelTable<f64>,
        sites: &[[i64; 2]],
        times: &[usize],
        assignment: &mut Vec<[i64; 2]>,
        level: usize,
        terms: &mut Vec<(Vec<(usize, [i64; 2])>, f64)>,
    ) -> Result<()> {
        if level == assignment.len() {
            let p = tuple_kernel(table, times, assignment)?;
            if p != 0.0 {
                let coords = times.iter().copied().zip(assignment.iter().copied()).collect();
                terms.push((coords, p));
            }
            return Ok(());
        }
        for s in sites {
            assignment[level] = *s;
            // prune: kernel factor to the previous site already zero
            if level > 0 {
                let dt = times[level] - times[level - 1];
                let dx = [
                    s[0] - assignment[level - 1][0],
                    s[1] - assignment[level - 1][1],
                ];
                let l1 = dx[0].abs() + dx[1].abs();
                if (l1 as f64) > kernel::rho(dt as u64)? || table.prob(dt, &dx)? == 0.0 {
                    continue;
                }
            }
            rec(table, sites, times, assignment, level + 1, terms)?;
        }
        Ok(())
    }
    for times in &tuples {
        rec(&table, &sites, times, &mut assignment, 0, &mut terms)?;
    }
    Ok(terms)
}

/// X(omega) by bare tuple enumeration.
pub fn enumerate_x_statistic<D: Disorder>(plan: &CoarseGrainPlan, field: &D) -> Result<f64> {
    let d_u = kernel::d_series(plan.range)[plan.range - 1];
    let mut acc = KahanSum::<f64>::new();
    for (coords, p) in enumerate_x_terms(plan)? {
        let mut w = p;
        for (t, x) in &coords {
            w *= field.omega(*t as i64, x)?;
        }
        acc.add(w);
    }
    Ok(plan_norm_x(plan, d_u) * acc.value())
}

/// E[X^2] by bare tuple enumeration of the squared kernel products.
pub fn enumerate_x_second_moment(plan: &CoarseGrainPlan) -> Result<f64> {
    let d_u = kernel::d_series(plan.range)[plan.range - 1];
    let mut acc = KahanSum::<f64>::new();
    for (_, p) in enumerate_x_terms(plan)? {
        acc.add(p * p);
    }
    let norm = 1.0
        / (4.0 * (plan.enlargement * plan.enlargement) as f64
            * (plan.ell * plan.ell) as f64
            * d_u.powi(plan.order as i32));
    Ok(norm * acc.value())
}

/// First and second moments of X under the path-tilted measure, in closed
/// form from the per-coordinate moments (coordinates appear at most twice
/// across a pair of strictly increasing tuples).
pub fn enumerate_tilted_x_moments(
    plan: &CoarseGrainPlan,
    path: &Walk,
    law: DisorderLaw,
    beta: f64,
) -> Result<(f64, f64)> {
    let c = law.cumulants::<f64>(beta)?;
    let terms = enumerate_x_terms(plan)?;
    let d_u = kernel::d_series(plan.range)[plan.range - 1];
    let norm = plan_norm_x(plan, d_u);
    let on_path = |t: usize, x: &[i64; 2]| path.at(t) == x.as_slice();
    let mu = |t: usize, x: &[i64; 2]| if on_path(t, x) { c.lambda1 } else { 0.0 };
    let m2 = |t: usize, x: &[i64; 2]| {
        if on_path(t, x) {
            c.lambda2 + c.lambda1 * c.lambda1
        } else {
            1.0
        }
    };
    let mut first = KahanSum::<f64>::new();
    for (coords, p) in &terms {
        let mut w = *p;
        for (t, x) in coords {
            w *= mu(*t, x);
            if w == 0.0 {
                break;
            }
        }
        first.add(w);
    }
    let mut second = KahanSum::<f64>::new();
    for (ca, pa) in &terms {
        for (cb, pb) in &terms {
            let mut w = pa * pb;
            if w == 0.0 {
                continue;
            }
            // union with multiplicity; tuples have distinct times internally
            for (t, x) in ca {
                if cb.iter().any(|(s, y)| s == t && y == x) {
                    w *= m2(*t, x);
                } else {
                    w *= mu(*t, x);
                }
                if w == 0.0 {
                    break;
                }
            }
            if w != 0.0 {
                for (t, x) in cb {
                    if !ca.iter().any(|(s, y)| s == t && y == x) {
                        w *= mu(*t, x);
                        if w == 0.0 {
                            break;
                        }
                    }
                }
            }
            second.add(w);
        }
    }
    Ok((norm * first.value(), norm * norm * second.value()))
}

/// `E^S[X]` by bare tuple enumeration along the path (kernel products with the
/// widened-cell indicators), times (lambda')^{q+1} and the X normalization.
pub fn enumerate_tilted_mean(
    plan: &CoarseGrainPlan,
    path: &Walk,
    lambda1: f64,
) -> Result<f64> {
    let table = KernelTable::<f64>::build(2, plan.range)?;
    let d_u = kernel::d_series(plan.range)[plan.range - 1];
    let w = plan.window();
    let inside = |t: usize| path.at(t).iter().all(|&c| c.abs() <= w);
    let mut acc = KahanSum::<f64>::new();
    for times in TupleIndexSet::of(plan).full() {
        if !times.iter().all(|&t| inside(t)) {
            continue;
        }
        let sites: Vec<[i64; 2]> = times
            .iter()
            .map(|&t| [path.at(t)[0], path.at(t)[1]])
            .collect();
        acc.add(tuple_kernel(&table, &times, &sites)?);
    }
    Ok(lambda1.powi(plan.order as i32 + 1) * plan_norm_x(plan, d_u) * acc.value())
}

/// W by bare restricted-tuple enumeration along the path.
pub fn enumerate_w(plan: &CoarseGrainPlan, path: &Walk) -> Result<f64> {
    let table = KernelTable::<f64>::build(2, plan.range)?;
    let d_u = kernel::d_series(plan.range)[plan.range - 1];
    let mut acc = KahanSum::<f64>::new();
    for times in TupleIndexSet::of(plan).restricted() {
        let sites: Vec<[i64; 2]> = times
            .iter()
            .map(|&t| [path.at(t)[0], path.at(t)[1]])
            .collect();
        acc.add(tuple_kernel(&table, &times, &sites)?);
    }
    Ok(acc.value() / (plan.ell as f64 * d_u.powi(plan.order as i32)))
}

/// Y_j by bare tuple enumeration: the restricted tuples starting at j,
/// centered by (Dhat/D)^q.
pub fn enumerate_y(plan: &CoarseGrainPlan, path: &Walk, j: usize) -> Result<f64> {
    let table = KernelTable::<f64>::build(2, plan.range)?;
    let d_u = kernel::d_series(plan.range)[plan.range - 1];
    let dhat_u = kernel::dhat_series(plan.range)[plan.range - 1];
    let mut acc = KahanSum::<f64>::new();
    for times in TupleIndexSet::of(plan).restricted() {
        if times[0] != j {
            continue;
        }
        let sites: Vec<[i64; 2]> = times
            .iter()
            .map(|&t| [path.at(t)[0], path.at(t)[1]])
            .collect();
        acc.add(tuple_kernel(&table, &times, &sites)?);
    }
    let q = plan.order as i32;
    Ok(acc.value() / d_u.powi(q) - (dhat_u / d_u).powi(q))
}

/// Exhaustive scan of the binomial-ratio estimate: over the admissible
/// region, C(n,j) C(t-n,k-j) / C(t,k) * sqrt(min(n,t-n)) stays bounded and
/// the Stirling second-line factor stays at most one.
pub fn binomial_ratio_scan(t_max: usize) -> Result<ScanReport> {
    if t_max > 200 {
        return Err(Error::Resource {
            what: "binomial ratio scan".into(),
            required: t_max as u64,
            budget: 200,
        });
    }
    // ln-factorials with compensated accumulation
    let mut lnfact = vec![0.0f64; t_max + 1];
    let mut acc = KahanSum::<f64>::new();
    for i in 1..=t_max {
        acc.add((i as f64).ln());
        lnfact[i] = acc.value();
    }
    let lnc = |n: usize, k: usize| lnfact[n] - lnfact[k] - lnfact[n - k];
    let mut best = 0.0f64;
    let mut best_loc = String::new();
    let mut checks = 0u64;
    let mut stirling_violations = 0u64;
    let xlnx = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (b / a).ln() };
    for t in 1..=t_max {
        for n in 0..=t {
            for k in t.div_ceil(4)..=(3 * t) / 4 {
                if 4 * k < t || 4 * k > 3 * t {
                    continue;
                }
                for j in 0..=k.min(n) {
                    // region: n/4 <= j <= 3n/4, (t-n)/4 <= k-j <= 3(t-n)/4
                    if 4 * j < n || 4 * j > 3 * n {
                        continue;
                    }
                    let kj = k - j;
                    if kj > t - n || 4 * kj < t - n || 4 * kj > 3 * (t - n) {
                        continue;
                    }
                    checks += 1;
                    let ratio = (lnc(n, j) + lnc(t - n, kj) - lnc(t, k)).exp();
                    let value = ratio * (n.min(t - n) as f64).sqrt();
                    if value > best {
                        best = value;
                        best_loc = format!("t={t} n={n} k={k} j={j}");
                    }
                    // Stirling second-line factor in log form
                    let (tf, nf, kf, jf) = (t as f64, n as f64, k as f64, j as f64);
                    let kjf = kj as f64;
                    let log_factor = xlnx(jf, nf)
                        + xlnx(nf - jf, nf)
                        + xlnx(kjf, tf - nf)
                        + xlnx(tf - nf - kjf, tf - nf)
                        + xlnx(kf, kf) - kf * tf.ln() + kf * 1.0_f64.ln()
                        + xlnx(tf - kf, tf - kf) - (tf - kf) * tf.ln();
                    // assembled as j ln(n/j) + (n-j) ln(n/(n-j))
                    //            + (k-j) ln((t-n)/(k-j)) + (t-n-k+j) ln((t-n)/(t-n-k+j))
                    //            + k ln(k/t) + (t-k) ln((t-k)/t)
                    if log_factor > 1e-12 {
                        stirling_violations += 1;
                    }
                }
            }
        }
    }
    Ok(ScanReport {
        grid: format!("t <= {t_max}, admissible (n,k,j)"),
        extremum: best,
        location: best_loc,
        violations: stirling_violations,
        checks,
    })
}

/// Verify p(t, x) = p1(t, x0-x1) p1(t, x0+x1) exactly: the planar walk is
/// two independent one-dimensional walks along the diagonals.
pub fn reduction_to_1d_check(t_max: usize) -> Result<ScanReport> {
    if t_max > 50 {
        return Err(Error::Resource {
            what: "rotation factorization check".into(),
            required: t_max as u64,
            budget: 50,
        });
    }
    let table = KernelTable::<f64>::build(2, t_max)?;
    // exact dyadic one-dimensional kernel from integer binomials
    let binom = |n: usize, k: usize| -> f64 {
        let mut acc: u128 = 1;
        let k = k.min(n - k);
        for i in 0..k {
            acc = acc * (n - i) as u128 / (i + 1) as u128;
        }
        acc as f64
    };
    let p1 = |t: usize, k: i64| -> f64 {
        if k.abs() > t as i64 || (k + t as i64) % 2 != 0 {
            return 0.0;
        }
        let ups = ((t as i64 + k) / 2) as usize;
        binom(t, ups) * 0.5f64.powi(t as i32)
    };
    let mut worst = 0.0f64;
    let mut worst_loc = String::new();
    let mut violations = 0u64;
    let mut checks = 0u64;
    for t in 0..=t_max {
        for x0 in -(t as i64)..=(t as i64) {
            for x1 in -(t as i64)..=(t as i64) {
                let direct = table.prob(t, &[x0, x1])?;
                let factored = p1(t, x0 - x1) * p1(t, x0 + x1);
                let err = (direct - factored).abs();
                checks += 1;
                if err > worst {
                    worst = err;
                    worst_loc = format!("t={t} x=({x0},{x1})");
                }
                if err > 1e-12 {
                    violations += 1;
                }
            }
        }
    }
    Ok(ScanReport {
        grid: format!("t <= {t_max}, |x|_inf <= t"),
        extremum: worst,
        location: worst_loc,
        violations,
        checks,
    })
}

/// Local-CLT constant through the diagonal factorization: the slice maximum
/// of p(t, .) is the squared central one-dimensional value.
pub fn local_clt_constant_factorized(t_min: usize, t_max: usize) -> f64 {
    let mut best = 0.0f64;
    let mut r = 1.0f64; // C(2m, m) / 4^m at m = 0
    let mut m = 0usize;
    for t in t_min..=t_max.max(t_min) {
        while 2 * m < t {
            m += 1;
            r *= (2 * m - 1) as f64 / (2 * m) as f64;
        }
        let central = if t % 2 == 0 {
            r
        } else {
            // C(2m+1, m+1)/2^(2m+1) from C(2m, m)/4^m with t = 2m+1
            r * (t as f64) / (2.0 * (m + 1) as f64)
        };
        best = best.max((1 + t) as f64 * central * central);
    }
    best
}

/// One tail-bound row of the rough lower-deviation estimate.
#[derive(Clone, Debug, Serialize)]
pub struct TailRow {
    pub v: f64,
    pub threshold: f64,
    pub frequency: f64,
    pub frequency_se: f64,
    pub bound: f64,
    pub vacuous: bool,
    pub violated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailReport {
    pub law: String,
    pub beta: f64,
    pub n: usize,
    pub c0: f64,
    pub samples: u64,
    pub rows: Vec<TailRow>,
    pub violations: u64,
}

/// Monte Carlo check of P(log Zhat_N <= -(beta v + lambda) N) against the
/// union-bound tail 8 N^3 exp(-c0 v). Only laws with a finite recorded tail
/// rate participate.
pub fn desperate_tail_check(
    law: DisorderLaw,
    beta: f64,
    n: usize,
    v_grid: &[f64],
    samples: u64,
    seed: u64,
) -> Result<TailReport> {
    if n > 64 {
        return Err(Error::Resource {
            what: "tail check horizon".into(),
            required: n as u64,
            budget: 64,
        });
    }
    let c0 = law.tail_rate().ok_or_else(|| {
        Error::Domain(format!(
            "law {} has tail rate recorded as infinite; the rough tail bound is not exercised",
            law.name()
        ))
    })?;
    let lambda = law.cumulants::<f64>(beta)?.lambda;
    let logs = collect_samples(samples, |i| {
        let field = sample_field(law, seed, i, 2, n as i64, n as i64);
        Ok(partition::log_partition::<f64, _>(&field, beta, n, None)?.0)
    })?;
    let mut rows = Vec::new();
    let mut violations = 0;
    for &v in v_grid {
        let threshold = -(beta * v + lambda) * n as f64;
        let hits: Vec<f64> = logs
            .iter()
            .map(|&lz| if lz <= threshold { 1.0 } else { 0.0 })
            .collect();
        let stat = StreamingStat::from_samples(&hits);
        let bound = 8.0 * (n as f64).powi(3) * (-c0 * v).exp();
        let violated = stat.mean() > bound + 3.0 * stat.stderr();
        if violated {
            violations += 1;
        }
        rows.push(TailRow {
            v,
            threshold,
            frequency: stat.mean(),
            frequency_se: stat.stderr(),
            bound,
            vacuous: bound >= 1.0,
            violated,
        });
    }
    Ok(TailReport {
        law: law.name(),
        beta,
        n,
        c0,
        samples,
        rows,
        violations,
    })
}

/// Five-point central difference of log Zhat in one environment coordinate.
pub fn fd_log_partition_gradient<D: Disorder>(
    field: &D,
    beta: f64,
    n: usize,
    at: (i64, Vec<i64>),
    h: f64,
) -> Result<f64> {
    let base = field.omega(at.0, &at.1)?;
    let eval = |delta: f64| -> Result<f64> {
        let pert = PerturbedField::new(field, at.0, at.1.clone(), base + delta);
        Ok(partition::log_partition::<f64, _>(&pert, beta, n, None)?.0)
    };
    Ok((-eval(2.0 * h)? + 8.0 * eval(h)? - 8.0 * eval(-h)? + eval(-2.0 * h)?) / (12.0 * h))
}
