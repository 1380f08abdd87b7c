//! Exact annealed two-replica computations: the difference-walk dynamic
//! program for E[exp(u L_N)] (the homogeneous pinning partition function),
//! its local-time-weighted companion, the theorem scale N_{beta,eps}, and the
//! second-moment / Paley-Zygmund bookkeeping built on them.

use serde::Serialize;

use crate::disorder::{Disorder, DisorderLaw, EnvironmentField};
use crate::error::{Error, Result};
use crate::lattice::LatticeBox;
use crate::montecarlo::collect_samples;
use crate::partition::{self};
use crate::rng::sample_seed;
use crate::scalar::{cast, Scalar};
use crate::stats::{KahanSum, StreamingStat};

/// Default budget for the exact two-replica DP, in lattice-time steps
/// (box sites times horizon).
pub const DEFAULT_REPLICA_BUDGET: u64 = 10_000_000;

/// The walk V_n = S(1)_n - S(2)_n of two independent replicas. Its one-step
/// law is the autocorrelation of the simple-walk step law, computed here by
/// enumerating step pairs (9 support points in d = 2, counting the origin).
#[derive(Clone, Debug)]
pub struct DifferenceWalk<T: Scalar> {
    dim: usize,
    stencil: Vec<(Vec<i64>, T)>,
}

impl<T: Scalar> DifferenceWalk<T> {
    pub fn new(dim: usize) -> Self {
        let mut acc: std::collections::BTreeMap<Vec<i64>, u32> = std::collections::BTreeMap::new();
        let dirs = 2 * dim;
        for s1 in 0..dirs {
            for s2 in 0..dirs {
                let mut v = vec![0i64; dim];
                v[s1 / 2] += if s1 % 2 == 0 { 1 } else { -1 };
                v[s2 / 2] -= if s2 % 2 == 0 { 1 } else { -1 };
                *acc.entry(v).or_insert(0) += 1;
            }
        }
        let total = (dirs * dirs) as f64;
        let stencil = acc
            .into_iter()
            .map(|(v, c)| (v, cast::<T>(c as f64 / total)))
            .collect();
        Self { dim, stencil }
    }

    pub fn stencil(&self) -> &[(Vec<i64>, T)] {
        &self.stencil
    }

    /// Joint DP for (E[exp(u L_N)], E[L_N exp(u L_N)]), with per-step scale
    /// extraction so large exponents stay representable.
    pub fn moments(&self, u: T, n: usize, budget: u64) -> Result<(T, T)> {
        let radius = 2 * n as i64;
        let bx = LatticeBox::new(self.dim, radius.max(1));
        let cost = bx.len() as u64 * n.max(1) as u64;
        if cost > budget {
            return Err(Error::Resource {
                what: format!("two-replica DP d={} N={n}", self.dim),
                required: cost,
                budget,
            });
        }
        let origin_x = vec![0i64; self.dim];
        let origin = bx.index(&origin_x).unwrap();
        let mut value = vec![T::zero(); bx.len()];
        let mut weighted = vec![T::zero(); bx.len()];
        value[origin] = T::one();
        let mut value_nxt = vec![T::zero(); bx.len()];
        let mut weighted_nxt = vec![T::zero(); bx.len()];
        let mut log_scale = T::zero();
        // precompute stencil offsets in flat-index space; validity is a
        // per-axis coordinate check
        let offsets: Vec<(isize, &[i64])> = self
            .stencil
            .iter()
            .map(|(v, _)| {
                let mut off = 0isize;
                for (a, &c) in v.iter().enumerate() {
                    off += c as isize * bx.stride(a) as isize;
                }
                (off, v.as_slice())
            })
            .collect();
        let eu = u.exp();
        let mut coords = vec![0i64; self.dim];
        for t in 1..=n {
            value_nxt.iter_mut().for_each(|w| *w = T::zero());
            weighted_nxt.iter_mut().for_each(|w| *w = T::zero());
            let reach = (2 * t as i64).min(radius);
            let mut max_w = T::zero();
            // dest sites: |v|_inf <= 2t, even coordinate sum
            visit_even_box(&bx, reach, &mut coords, |idx, x| {
                let mut a = T::zero();
                let mut b = T::zero();
                for ((off, v), (_, p)) in offsets.iter().zip(&self.stencil) {
                    let ok = x
                        .iter()
                        .zip(*v)
                        .all(|(&c, &d)| (c - d).abs() <= radius);
                    if ok {
                        let j = (idx as isize - *off) as usize;
                        a += *p * value[j];
                        b += *p * weighted[j];
                    }
                }
                if idx == origin {
                    b = eu * (b + a);
                    a = eu * a;
                }
                value_nxt[idx] = a;
                weighted_nxt[idx] = b;
                if a > max_w {
                    max_w = a;
                }
            });
            std::mem::swap(&mut value, &mut value_nxt);
            std::mem::swap(&mut weighted, &mut weighted_nxt);
            if max_w > T::zero() {
                let inv = T::one() / max_w;
                visit_even_box(&bx, reach, &mut coords, |idx, _| {
                    value[idx] = value[idx] * inv;
                    weighted[idx] = weighted[idx] * inv;
                });
                log_scale += max_w.ln();
            }
        }
        let mut sa = KahanSum::new();
        let mut sb = KahanSum::new();
        visit_even_box(&bx, radius, &mut coords, |idx, _| {
            sa.add(value[idx]);
            sb.add(weighted[idx]);
        });
        let scale = log_scale.exp();
        Ok((sa.value() * scale, sb.value() * scale))
    }
}

/// Iterate sites with |x|_inf <= r and even coordinate sum (the difference
/// walk lives on the even sublattice).
fn visit_even_box(bx: &LatticeBox, r: i64, coords: &mut [i64], mut f: impl FnMut(usize, &[i64])) {
    let dim = bx.dim();
    let cap = bx.radius();
    coords.iter_mut().for_each(|c| *c = -r);
    loop {
        let head: i64 = coords[..dim - 1].iter().sum();
        let mut last = -r;
        if (head + last).rem_euclid(2) != 0 {
            last += 1;
        }
        let mut base = 0usize;
        for (a, &c) in coords[..dim - 1].iter().enumerate() {
            base += (c + cap) as usize * bx.stride(a);
        }
        while last <= r {
            coords[dim - 1] = last;
            f(base + (last + cap) as usize, coords);
            last += 2;
        }
        let mut a = dim as i64 - 2;
        while a >= 0 {
            if coords[a as usize] < r {
                coords[a as usize] += 1;
                break;
            }
            coords[a as usize] = -r;
            a -= 1;
        }
        if a < 0 {
            return;
        }
    }
}

/// E^{(x)2}[exp(u L_N)] by exact difference-walk DP. Feeding
/// u = gamma(beta) = lambda(2 beta) - 2 lambda(beta) yields E[(Zhat_N)^2].
pub fn two_replica_exponential_moment<T: Scalar>(u: T, n: usize, dim: usize) -> Result<T> {
    Ok(DifferenceWalk::new(dim).moments(u, n, DEFAULT_REPLICA_BUDGET)?.0)
}

/// E^{(x)2}[L_N exp(u L_N)], carried alongside the exponential-moment DP.
pub fn two_replica_weighted_local_time<T: Scalar>(u: T, n: usize, dim: usize) -> Result<T> {
    Ok(DifferenceWalk::new(dim).moments(u, n, DEFAULT_REPLICA_BUDGET)?.1)
}

/// gamma(beta) = lambda(2 beta) - 2 lambda(beta).
pub fn gamma<T: Scalar>(law: DisorderLaw, beta: T) -> Result<T> {
    let two = cast::<T>(2.0);
    Ok(law.cumulants(two * beta)?.lambda - two * law.cumulants(beta)?.lambda)
}

/// N_{beta,eps} = ceil(exp((1-eps) pi / beta^2)), refused above `cap` with
/// the required size reported.
pub fn choose_scale_n(beta: f64, eps: f64, cap: u64) -> Result<u64> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!("eps must lie in [0,1), got {eps}")));
    }
    let required = ((1.0 - eps) * std::f64::consts::PI / (beta * beta)).exp();
    if required > cap as f64 {
        return Err(Error::ScaleUnreachable {
            beta,
            eps,
            required,
            cap,
        });
    }
    Ok(required.ceil() as u64)
}

/// Second-moment report at the theorem scale: the exact E[(Zhat)^2], the
/// asymptotic 10/eps comparison, and the Paley-Zygmund lower bound checked
/// against a Monte Carlo frequency.
#[derive(Clone, Debug, Serialize)]
pub struct SecondMomentReport {
    pub law: String,
    pub beta: f64,
    pub eps: f64,
    pub n: u64,
    pub gamma: f64,
    pub second_moment: f64,
    pub bound_10_over_eps: f64,
    pub bound_holds: bool,
    pub pz_lower: f64,
    pub mc_frequency: f64,
    pub mc_frequency_se: f64,
    pub samples: u64,
}

pub fn second_moment_bound_check(
    law: DisorderLaw,
    beta: f64,
    eps: f64,
    cap: u64,
    samples: u64,
    seed: u64,
) -> Result<SecondMomentReport> {
    let n = choose_scale_n(beta, eps, cap)? as usize;
    let g = gamma::<f64>(law, beta)?;
    let second_moment = two_replica_exponential_moment(g, n, 2)?;
    let pz_lower = 1.0 / (4.0 * second_moment);
    let freqs = collect_samples(samples, |i| {
        let field = EnvironmentField::new(law, sample_seed(seed, i), 2, n as i64, n as i64);
        let (lz, _) = partition::log_partition::<f64, _>(&field, beta, n, None)?;
        Ok(if lz >= 0.5f64.ln() { 1.0 } else { 0.0 })
    })?;
    let stat = StreamingStat::from_samples(&freqs);
    Ok(SecondMomentReport {
        law: law.name(),
        beta,
        eps,
        n: n as u64,
        gamma: g,
        second_moment,
        bound_10_over_eps: 10.0 / eps,
        bound_holds: second_moment <= 10.0 / eps,
        pz_lower,
        mc_frequency: stat.mean(),
        mc_frequency_se: stat.stderr(),
        samples,
    })
}

/// beta^2 sum over (n,x) of marginal(n,x)^2: the squared Euclidean norm of
/// the gradient of log Zhat_N with respect to the environment.
pub fn gradient_norm_sq<T: Scalar, D: Disorder>(
    field: &D,
    beta: T,
    n: usize,
    truncation_radius: Option<i64>,
) -> Result<T> {
    let m = partition::marginals(field, beta, n, truncation_radius)?;
    Ok(beta * beta * m.sum_of_squares())
}

/// Joint event report: with M^2 derived from the two-replica bound pipeline,
/// how often {Zhat >= 1/2 and |grad log Zhat|^2 <= M^2} happens, against the
/// eps/80 floor it should exceed at desk parameters.
#[derive(Clone, Debug, Serialize)]
pub struct KeyEventReport {
    pub law: String,
    pub beta: f64,
    pub eps: f64,
    pub n: u64,
    pub second_moment: f64,
    pub pz_lower: f64,
    pub weighted_local_time: f64,
    pub gradient_bound: f64,
    pub m_squared: f64,
    pub joint_frequency: f64,
    pub joint_frequency_se: f64,
    pub floor_eps_over_80: f64,
    pub samples: u64,
}

pub fn key_event_check(
    law: DisorderLaw,
    beta: f64,
    eps: f64,
    cap: u64,
    samples: u64,
    seed: u64,
) -> Result<KeyEventReport> {
    let n = choose_scale_n(beta, eps, cap)? as usize;
    let g = gamma::<f64>(law, beta)?;
    let (second_moment, weighted) = DifferenceWalk::new(2).moments(g, n, DEFAULT_REPLICA_BUDGET)?;
    let pz_lower = 1.0 / (4.0 * second_moment);
    // E[|grad|^2 ; Zhat >= 1/2] <= 4 beta^2 E[L exp(gamma L)]
    let gradient_bound = 4.0 * beta * beta * weighted;
    let m_squared = 2.0 * gradient_bound / pz_lower;
    let hits = collect_samples(samples, |i| {
        let field = EnvironmentField::new(law, sample_seed(seed, i), 2, n as i64, n as i64);
        let (lz, _) = partition::log_partition::<f64, _>(&field, beta, n, None)?;
        if lz < 0.5f64.ln() {
            return Ok(0.0);
        }
        let gsq = gradient_norm_sq::<f64, _>(&field, beta, n, None)?;
        Ok(if gsq <= m_squared { 1.0 } else { 0.0 })
    })?;
    let stat = StreamingStat::from_samples(&hits);
    Ok(KeyEventReport {
        law: law.name(),
        beta,
        eps,
        n: n as u64,
        second_moment,
        pz_lower,
        weighted_local_time: weighted,
        gradient_bound,
        m_squared,
        joint_frequency: stat.mean(),
        joint_frequency_se: stat.stderr(),
        floor_eps_over_80: eps / 80.0,
        samples,
    })
}
