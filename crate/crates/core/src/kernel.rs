//! Simple-random-walk kernels p(t, x) on Z^d, the mean intersection local
//! time D(N) and its window-restricted version, and local-CLT constants.
//!
//! Two evaluation routes coexist deliberately:
//! * the exact convolution table ([`KernelTable`]), memory Theta(T^{d+1}),
//!   used at desk scale and as one side of every cross-check;
//! * closed-form / streamed routes for large horizons
//!   ([`d_series`], [`dhat_series`], [`local_clt_scan`]), where a stored
//!   table cannot fit.
//! In d=2 the large-horizon routes rest on the exact factorization of p into
//! two independent one-dimensional walks along the diagonals; `oracle`
//! verifies that factorization site by site.

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::ParitySlice;
use crate::scalar::{cast, to_f64, Scalar};
use crate::stats::{kahan_sum, KahanSum};

/// Window radius rho(t) = min(t/2, (log t) sqrt(t)), natural logarithm.
pub fn rho(t: u64) -> Result<f64> {
    if t == 0 {
        return Err(Error::Domain("rho(t) requires t >= 1".into()));
    }
    let tf = t as f64;
    Ok((tf / 2.0).min(tf.ln() * tf.sqrt()))
}

/// Default memory budget for stored kernel tables (bytes).
pub const DEFAULT_TABLE_BUDGET: u64 = 512 << 20;

/// Exact transition probabilities of the symmetric nearest-neighbor walk,
/// one parity-packed slice per time up to the horizon.
#[derive(Clone, Debug)]
pub struct KernelTable<T: Scalar> {
    dim: usize,
    horizon: usize,
    slices: Vec<ParitySlice<T>>,
}

impl<T: Scalar> KernelTable<T> {
    /// Bytes needed to store slices 0..=horizon.
    pub fn required_bytes(dim: usize, horizon: usize) -> u64 {
        let mut total = 0u64;
        for t in 0..=horizon as u64 {
            let side = 2 * t + 1;
            let sites = side.pow(dim as u32);
            total += (sites / 2 + 1) * std::mem::size_of::<T>() as u64;
        }
        total
    }

    pub fn build(dim: usize, horizon: usize) -> Result<Self> {
        Self::build_with_budget(dim, horizon, DEFAULT_TABLE_BUDGET)
    }

    pub fn build_with_budget(dim: usize, horizon: usize, budget: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("kernel dimension must be >= 1".into()));
        }
        let required = Self::required_bytes(dim, horizon);
        if required > budget {
            return Err(Error::Resource {
                what: format!("kernel table d={dim} T={horizon}"),
                required,
                budget,
            });
        }
        let mut slices = Vec::with_capacity(horizon + 1);
        let mut origin = ParitySlice::zeros(dim, 0, 0);
        let o = vec![0i64; dim];
        let idx = origin.bounds().index(&o).unwrap();
        origin.set_full_index(idx, T::one());
        slices.push(origin);
        let step = cast::<T>(1.0 / (2 * dim) as f64);
        for t in 1..=horizon {
            let prev = &slices[t - 1];
            let mut next = ParitySlice::zeros(dim, t as i64, (t % 2) as u8);
            let bx = next.bounds().clone();
            let mut nb = vec![0i64; dim];
            let mut it = bx.iter_sites();
            let mut updates: Vec<(usize, T)> = Vec::new();
            while let Some((idx, x)) = it.advance() {
                let parity = (x.iter().map(|&c| c.abs() as u64).sum::<u64>() % 2) as u8;
                if parity != (t % 2) as u8 {
                    continue;
                }
                let mut acc = KahanSum::new();
                for a in 0..dim {
                    nb.copy_from_slice(x);
                    nb[a] = x[a] - 1;
                    acc.add(prev.get(&nb));
                    nb[a] = x[a] + 1;
                    acc.add(prev.get(&nb));
                }
                let v = acc.value() * step;
                if v > T::zero() {
                    updates.push((idx, v));
                }
            }
            for (idx, v) in updates {
                next.set_full_index(idx, v);
            }
            slices.push(next);
        }
        Ok(Self {
            dim,
            horizon,
            slices,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// p(t, x); zero outside the reachable diamond or off parity.
    pub fn prob(&self, t: usize, x: &[i64]) -> Result<T> {
        if t > self.horizon {
            return Err(Error::Domain(format!(
                "kernel horizon {} < requested time {t}",
                self.horizon
            )));
        }
        if x.len() != self.dim {
            return Err(Error::Config(format!(
                "site dimension {} != kernel dimension {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self.slices[t].get(x))
    }

    pub fn slice(&self, t: usize) -> &ParitySlice<T> {
        &self.slices[t]
    }

    pub fn slice_sum(&self, t: usize) -> T {
        self.slices[t].sum()
    }

    /// D(N) as the sum of return probabilities at even times.
    pub fn mean_local_time(&self, n: usize) -> Result<T> {
        if 2 * n > self.horizon {
            return Err(Error::Domain(format!(
                "D({n}) needs horizon {} > {}",
                2 * n,
                self.horizon
            )));
        }
        let origin = vec![0i64; self.dim];
        Ok(kahan_sum(
            (1..=n).map(|t| self.slices[2 * t].get(&origin)),
        ))
    }

    /// D(N) in its second form, as the sum over t <= N of sum_x p(t,x)^2.
    pub fn mean_local_time_squared_form(&self, n: usize) -> Result<T> {
        if n > self.horizon {
            return Err(Error::Domain(format!(
                "squared-form D({n}) needs horizon {n} > {}",
                self.horizon
            )));
        }
        let mut acc = KahanSum::new();
        for t in 1..=n {
            self.slices[t].for_each_site(|_, _, v| acc.add(v * v));
        }
        Ok(acc.value())
    }

    /// Restricted mean local time: for each t <= u only the window
    /// |z|_1 <= rho(t) contributes, via the bridge split
    /// P(S_{2t} = 0; |S_t| <= rho(t)) = sum_{|z| <= rho(t)} p(t, z)^2.
    pub fn restricted_local_time(&self, u: usize) -> Result<T> {
        if u > self.horizon {
            return Err(Error::Domain(format!(
                "restricted local time needs horizon {u} > {}",
                self.horizon
            )));
        }
        let mut acc = KahanSum::new();
        for t in 1..=u {
            let r = rho(t as u64)?;
            self.slices[t].for_each_site(|_, x, v| {
                let l1: i64 = x.iter().map(|c| c.abs()).sum();
                if (l1 as f64) <= r {
                    acc.add(v * v);
                }
            });
        }
        Ok(acc.value())
    }

    /// max over t in [t_min, t_max], x of p(t, x) (1 + t).
    pub fn local_clt_constant(&self, t_min: usize, t_max: usize) -> Result<T> {
        if t_max > self.horizon {
            return Err(Error::Domain(format!(
                "local CLT scan needs horizon {t_max} > {}",
                self.horizon
            )));
        }
        let mut best = T::zero();
        for t in t_min..=t_max {
            let w: T = cast((1 + t) as f64);
            self.slices[t].for_each_site(|_, _, v| {
                if v * w > best {
                    best = v * w;
                }
            });
        }
        Ok(best)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"PKERNTB1";
const CACHE_VERSION: u32 = 1;

impl KernelTable<f64> {
    /// Binary cache keyed by (dim, horizon, format version).
    pub fn save_cache(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.horizon as u64).to_le_bytes())?;
        for t in 0..=self.horizon {
            let slice = &self.slices[t];
            let mut packed: Vec<u8> = Vec::with_capacity(slice.packed_len() * 8);
            let mut count = 0u64;
            slice.for_each_site(|_, _, v| {
                packed.extend_from_slice(&v.to_le_bytes());
                count += 1;
            });
            w.write_all(&count.to_le_bytes())?;
            w.write_all(&packed)?;
        }
        Ok(())
    }

    pub fn load_cache(path: &std::path::Path, dim: usize, horizon: usize) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)?;
        let version = u32::from_le_bytes(u32b);
        r.read_exact(&mut u32b)?;
        let file_dim = u32::from_le_bytes(u32b) as usize;
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)?;
        let file_horizon = u64::from_le_bytes(u64b) as usize;
        if &magic != CACHE_MAGIC || version != CACHE_VERSION {
            return Err(Error::Config("kernel cache: bad magic or version".into()));
        }
        if file_dim != dim || file_horizon != horizon {
            return Err(Error::Config(format!(
                "kernel cache keyed (d={file_dim}, T={file_horizon}), requested (d={dim}, T={horizon})"
            )));
        }
        let mut slices = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let mut slice = ParitySlice::zeros(dim, t as i64, (t % 2) as u8);
            r.read_exact(&mut u64b)?;
            let count = u64::from_le_bytes(u64b);
            let bx = slice.bounds().clone();
            let mut it = bx.iter_sites();
            let mut read_vals = 0u64;
            let mut buf = [0u8; 8];
            while let Some((idx, coords)) = it.advance() {
                let parity = (coords.iter().map(|&c| c.abs() as u64).sum::<u64>() % 2) as u8;
                if parity != (t % 2) as u8 {
                    continue;
                }
                r.read_exact(&mut buf)?;
                slice.set_full_index(idx, f64::from_le_bytes(buf));
                read_vals += 1;
            }
            if read_vals != count {
                return Err(Error::Config("kernel cache: slice length mismatch".into()));
            }
            slices.push(slice);
        }
        Ok(Self {
            dim,
            horizon,
            slices,
        })
    }
}

/// Return probabilities p(2t, 0) of the planar walk for t = 1..=n, from the
/// central-binomial recurrence r_t = r_{t-1} (2t-1)/(2t), p(2t,0) = r_t^2.
pub fn return_probability_series(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut r = 1.0f64;
    for t in 1..=n {
        r *= (2 * t - 1) as f64 / (2 * t) as f64;
        out.push(r * r);
    }
    out
}

/// D(N) for N = 1..=n (planar walk), closed-form route.
pub fn d_series(n: usize) -> Vec<f64> {
    let mut acc = KahanSum::new();
    return_probability_series(n)
        .into_iter()
        .map(|p| {
            acc.add(p);
            acc.value()
        })
        .collect()
}

/// One-dimensional kernel slices p1(t, k) for t = 0..=horizon, by exact
/// convolution (values are dyadic rationals; f64 error stays ~t*eps).
pub fn one_d_kernel(horizon: usize) -> Vec<Vec<f64>> {
    let mut slices: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
    slices.push(vec![1.0]);
    for t in 1..=horizon {
        let prev = &slices[t - 1];
        // slice t has 2t+1 entries for k = -t..=t
        let mut next = vec![0.0f64; 2 * t + 1];
        for (i, v) in prev.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let k = i as i64 - (t as i64 - 1);
            next[(k - 1 + t as i64) as usize] += 0.5 * v;
            next[(k + 1 + t as i64) as usize] += 0.5 * v;
        }
        slices.push(next);
    }
    slices
}

/// Restricted local-time series Dhat(u) for u = 1..=u_max, via the diagonal
/// factorization: sum over |z|_1 <= rho(t) of p(t,z)^2 equals
/// ( sum over |k| <= rho(t) of p1(t,k)^2 )^2.
pub fn dhat_series(u_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(u_max);
    let mut acc = KahanSum::new();
    // rolling 1d slice
    let mut slice = vec![1.0f64];
    for t in 1..=u_max {
        let mut next = vec![0.0f64; 2 * t + 1];
        for (i, v) in slice.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let k = i as i64 - (t as i64 - 1);
            next[(k - 1 + t as i64) as usize] += 0.5 * v;
            next[(k + 1 + t as i64) as usize] += 0.5 * v;
        }
        slice = next;
        let r = rho(t as u64).expect("t >= 1");
        let w = r.floor() as i64;
        let mut s = KahanSum::new();
        for k in -w..=w {
            let v = slice[(k + t as i64) as usize];
            s.add(v * v);
        }
        let sv = s.value();
        acc.add(sv * sv);
        out.push(acc.value());
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct CltScan {
    pub t_min: usize,
    pub t_max: usize,
    pub maximum: f64,
    pub arg_t: usize,
    pub arg_x: Vec<i64>,
    /// number of sites violating p(t,x)(1+t) <= bound
    pub violations: u64,
    pub bound: f64,
}

/// Rolling planar convolution: evolve slice t-1 -> t inside a fixed box of
/// radius `cap`, touching only the reachable sub-box of correct parity.
fn planar_step(cur: &[f64], nxt: &mut [f64], t: usize, cap: i64, side: usize) {
    let r = (t as i64).min(cap);
    for x0 in -r..=r {
        let row = ((x0 + cap) as usize) * side;
        // first x1 of the right parity ((x0 + x1 + t) even)
        let mut x1 = -r;
        if (x0 + x1 + t as i64).rem_euclid(2) != 0 {
            x1 += 1;
        }
        while x1 <= r {
            let idx = row + (x1 + cap) as usize;
            let mut acc = 0.0;
            if x0 > -cap {
                acc += cur[idx - side];
            }
            if x0 < cap {
                acc += cur[idx + side];
            }
            if x1 > -cap {
                acc += cur[idx - 1];
            }
            if x1 < cap {
                acc += cur[idx + 1];
            }
            nxt[idx] = acc * 0.25;
            x1 += 2;
        }
    }
}

/// Streamed local-CLT scan (planar walk) over a rolling slice; no table
/// storage, so large horizons are fine. Counts violations of
/// p(t,x)(1+t) <= bound. Rows run in parallel; the reduction is in fixed
/// row order, so results do not depend on the worker count.
pub fn local_clt_scan(t_min: usize, t_max: usize, bound: f64) -> CltScan {
    use rayon::prelude::*;

    let cap = t_max as i64;
    let side = (2 * cap + 1) as usize;
    let mut cur = vec![0.0f64; side * side];
    let mut nxt = vec![0.0f64; side * side];
    let origin = (cap as usize) * side + cap as usize;
    cur[origin] = 1.0;
    let mut best = f64::NEG_INFINITY;
    let mut arg = (0usize, vec![0i64; 2]);
    let mut violations = 0u64;
    if t_min == 0 {
        best = 1.0;
        if 1.0 > bound {
            violations += 1;
        }
    }
    for t in 1..=t_max {
        let r = t as i64;
        let scanning = t >= t_min;
        let w = (1 + t) as f64;
        let cur_ref = &cur;
        // (max, argmax x1-offset, violations) per row, folded in row order
        let rows: Vec<(f64, i64, u64)> = nxt
            .par_chunks_mut(side)
            .enumerate()
            .map(|(row_idx, row)| {
                let x0 = row_idx as i64 - cap;
                if x0.abs() > r {
                    return (f64::NEG_INFINITY, 0, 0);
                }
                let mut row_best = f64::NEG_INFINITY;
                let mut row_arg = 0i64;
                let mut row_viol = 0u64;
                let base = row_idx * side;
                let mut x1 = -r;
                if (x0 + x1 + t as i64).rem_euclid(2) != 0 {
                    x1 += 1;
                }
                while x1 <= r {
                    let i = (x1 + cap) as usize;
                    let mut acc = 0.0;
                    if x0 > -cap {
                        acc += cur_ref[base - side + i];
                    }
                    if x0 < cap {
                        acc += cur_ref[base + side + i];
                    }
                    if x1 > -cap {
                        acc += cur_ref[base + i - 1];
                    }
                    if x1 < cap {
                        acc += cur_ref[base + i + 1];
                    }
                    let v = 0.25 * acc;
                    row[i] = v;
                    if scanning {
                        let scaled = v * w;
                        if scaled > row_best {
                            row_best = scaled;
                            row_arg = x1;
                        }
                        if scaled > bound {
                            row_viol += 1;
                        }
                    }
                    x1 += 2;
                }
                (row_best, row_arg, row_viol)
            })
            .collect();
        for (row_idx, (row_best, row_arg, row_viol)) in rows.into_iter().enumerate() {
            violations += row_viol;
            if row_best > best {
                best = row_best;
                arg = (t, vec![row_idx as i64 - cap, row_arg]);
            }
        }
        std::mem::swap(&mut cur, &mut nxt);
    }
    CltScan {
        t_min,
        t_max,
        maximum: best,
        arg_t: arg.0,
        arg_x: arg.1,
        violations,
        bound,
    }
}

/// Both D(N) forms computed in one rolling pass (planar walk): `direct[N-1]`
/// is sum of p(2t,0), `squares[N-1]` is sum over t of sum_x p(t,x)^2.
pub struct DualDSeries {
    pub direct: Vec<f64>,
    pub squares: Vec<f64>,
}

pub fn d_dual_series(n_max: usize) -> DualDSeries {
    let horizon = 2 * n_max;
    let cap = horizon as i64;
    let side = (2 * cap + 1) as usize;
    let mut cur = vec![0.0f64; side * side];
    let mut nxt = vec![0.0f64; side * side];
    let origin = (cap as usize) * side + cap as usize;
    cur[origin] = 1.0;
    let mut direct = Vec::with_capacity(n_max);
    let mut squares = Vec::with_capacity(n_max);
    let mut acc_direct = KahanSum::new();
    let mut acc_sq = KahanSum::new();
    for t in 1..=horizon {
        planar_step(&cur, &mut nxt, t, cap, side);
        std::mem::swap(&mut cur, &mut nxt);
        if t <= n_max {
            let mut sq = KahanSum::new();
            let r = t as i64;
            for x0 in -r..=r {
                let row = ((x0 + cap) as usize) * side;
                let mut x1 = -r;
                if (x0 + x1 + t as i64).rem_euclid(2) != 0 {
                    x1 += 1;
                }
                while x1 <= r {
                    let v = cur[row + (x1 + cap) as usize];
                    sq.add(v * v);
                    x1 += 2;
                }
            }
            acc_sq.add(sq.value());
            squares.push(acc_sq.value());
        }
        if t % 2 == 0 {
            acc_direct.add(cur[origin]);
            direct.push(acc_direct.value());
        }
    }
    DualDSeries { direct, squares }
}

/// Chapman-Kolmogorov check p(s+t, x) = sum_z p(s,z) p(t,x-z) on one triple.
pub fn chapman_kolmogorov_residual<T: Scalar>(
    table: &KernelTable<T>,
    s: usize,
    t: usize,
    x: &[i64],
) -> Result<f64> {
    let direct = table.prob(s + t, x)?;
    let mut acc = KahanSum::new();
    let mut shifted = vec![0i64; x.len()];
    table.slice(s).for_each_site(|_, z, v| {
        if v > T::zero() {
            for (i, c) in shifted.iter_mut().enumerate() {
                *c = x[i] - z[i];
            }
            acc.add(v * table.slice(t).get(&shifted));
        }
    });
    Ok((to_f64(direct) - to_f64(acc.value())).abs())
}
