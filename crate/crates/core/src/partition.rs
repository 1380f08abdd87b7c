//! Quenched partition functions by transfer-matrix dynamic programming:
//! renormalized log-partition values, Gibbs marginals by forward-backward
//! passes, replica-overlap series, and the coarse-grained decomposition of
//! the partition function over cell trajectories.

use crate::disorder::Disorder;
use crate::error::{Error, Result};
use crate::lattice::LatticeBox;
use crate::scalar::{cast, Scalar};
use crate::stats::{kahan_sum, KahanSum};

/// Per-slice scale extraction policy. `EverySlice` divides by the running
/// maximum after each step (the default); `Never` is only safe on short
/// systems and exists so tests can show the extracted value is invariant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Renorm {
    EverySlice,
    Never,
}

/// One time slice of the forward evolution: renormalized weights over the
/// reachable box plus the accumulated log of extracted scale factors.
/// `log Zhat up to n = ln(sum of weights) + log_scale`.
#[derive(Clone, Debug)]
pub struct PolymerSlice<T: Scalar> {
    pub time: usize,
    bx: LatticeBox,
    weights: Vec<T>,
    pub log_scale: T,
}

impl<T: Scalar> PolymerSlice<T> {
    pub fn weight(&self, x: &[i64]) -> T {
        match self.bx.index(x) {
            Some(i) => self.weights[i],
            None => T::zero(),
        }
    }

    pub fn max_weight(&self) -> T {
        self.weights.iter().fold(T::zero(), |m, &v| m.max(v))
    }

    pub fn sum(&self) -> T {
        kahan_sum(self.weights.iter().copied())
    }

    pub fn log_zhat(&self) -> T {
        self.sum().ln() + self.log_scale
    }
}

/// Forward transfer-matrix evolution
/// `W_n(x) = exp(beta omega(n,x) - lambda) (1/2d) sum_{|e|=1} W_{n-1}(x+e)`,
/// kept in range by per-slice scale extraction.
pub struct ForwardEvolution<'a, T: Scalar, D: Disorder> {
    field: &'a D,
    dim: usize,
    beta: T,
    lambda: T,
    cap: i64,
    bx: LatticeBox,
    cur: Vec<T>,
    nxt: Vec<T>,
    time: usize,
    log_scale: T,
    renorm: Renorm,
}

impl<'a, T: Scalar, D: Disorder> Clone for ForwardEvolution<'a, T, D> {
    fn clone(&self) -> Self {
        Self {
            field: self.field,
            dim: self.dim,
            beta: self.beta,
            lambda: self.lambda,
            cap: self.cap,
            bx: self.bx.clone(),
            cur: self.cur.clone(),
            nxt: self.nxt.clone(),
            time: self.time,
            log_scale: self.log_scale,
            renorm: self.renorm,
        }
    }
}

impl<'a, T: Scalar, D: Disorder> ForwardEvolution<'a, T, D> {
    pub fn new(field: &'a D, beta: T, horizon: usize, cap: Option<i64>) -> Result<Self> {
        let dim = field.dim();
        let min_cap = (3.0 * (horizon as f64).sqrt()).ceil() as i64;
        let cap = match cap {
            Some(c) => {
                if c < min_cap.min(horizon as i64) {
                    return Err(Error::Config(format!(
                        "truncation radius {c} below mass-loss guard 3*sqrt(N) = {min_cap}"
                    )));
                }
                c.min(horizon as i64)
            }
            None => horizon as i64,
        };
        let bx = LatticeBox::new(dim, cap);
        let mut cur = vec![T::zero(); bx.len()];
        let origin = bx.index(&vec![0i64; dim]).unwrap();
        cur[origin] = T::one();
        let lambda = field.law().cumulants(beta)?.lambda;
        Ok(Self {
            field,
            dim,
            beta,
            lambda,
            cap,
            nxt: vec![T::zero(); cur.len()],
            cur,
            bx,
            time: 0,
            log_scale: T::zero(),
            renorm: Renorm::EverySlice,
        })
    }

    pub fn with_renorm(mut self, renorm: Renorm) -> Self {
        self.renorm = renorm;
        self
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn bounds(&self) -> &LatticeBox {
        &self.bx
    }

    /// Advance one step, reading the disorder at the new time.
    pub fn step(&mut self) -> Result<()> {
        let n = self.time + 1;
        let r = (n as i64).min(self.cap);
        let inv_step: T = cast(1.0 / (2 * self.dim) as f64);
        let mut coords = vec![0i64; self.dim];
        let mut max_w = T::zero();
        {
            let bx = &self.bx;
            let cur = &self.cur;
            let nxt = &mut self.nxt;
            let field = self.field;
            let (dim, cap, beta, lambda) = (self.dim, self.cap, self.beta, self.lambda);
            // visit reachable sites of parity n
            visit_parity_box(bx, r, n, &mut coords, |bx, idx, x| {
                let mut s = T::zero();
                for a in 0..dim {
                    let st = bx.stride(a);
                    if x[a] > -cap {
                        s += cur[idx - st];
                    }
                    if x[a] < cap {
                        s += cur[idx + st];
                    }
                }
                let w = if s > T::zero() {
                    let omega = cast::<T>(field.omega(n as i64, x)?);
                    s * inv_step * (beta * omega - lambda).exp()
                } else {
                    T::zero()
                };
                nxt[idx] = w;
                if w > max_w {
                    max_w = w;
                }
                Ok::<(), Error>(())
            })?;
        }
        std::mem::swap(&mut self.cur, &mut self.nxt);
        self.time = n;
        if self.renorm == Renorm::EverySlice && max_w > T::zero() {
            let inv = T::one() / max_w;
            let cur = &mut self.cur;
            visit_parity_box(&self.bx, r, n, &mut coords, |_, idx, _| {
                cur[idx] = cur[idx] * inv;
                Ok::<(), Error>(())
            })?;
            self.log_scale += max_w.ln();
        }
        Ok(())
    }

    /// Zero out every site whose coarse cell differs from `label`.
    pub fn mask_to_cell(&mut self, sqrt_ell: i64, label: &[i64]) {
        let r = (self.time as i64).min(self.cap);
        let mut coords = vec![0i64; self.dim];
        let n = self.time;
        let cur = &mut self.cur;
        let _ = visit_parity_box(&self.bx, r, n, &mut coords, |_, idx, x| {
            if !in_cell(x, sqrt_ell, label) {
                cur[idx] = T::zero();
            }
            Ok::<(), Error>(())
        });
    }

    pub fn slice(&self) -> PolymerSlice<T> {
        PolymerSlice {
            time: self.time,
            bx: self.bx.clone(),
            weights: self.cur.clone(),
            log_scale: self.log_scale,
        }
    }

    pub fn sum(&self) -> T {
        kahan_sum(self.cur.iter().copied())
    }

    pub fn log_zhat(&self) -> T {
        self.sum().ln() + self.log_scale
    }

    /// Normalized endpoint law of the current slice, dense over the box.
    pub fn endpoint_law(&self) -> Vec<T> {
        let total = self.sum();
        self.cur.iter().map(|&w| w / total).collect()
    }

    /// Current-slice mass per coarse cell (renormalization undone), sorted by
    /// label for deterministic iteration.
    pub fn cell_sums(&self, sqrt_ell: i64) -> Vec<(Vec<i64>, T)> {
        let mut acc: std::collections::BTreeMap<Vec<i64>, KahanSum<T>> =
            std::collections::BTreeMap::new();
        let mut coords = vec![0i64; self.dim];
        for (idx, &w) in self.cur.iter().enumerate() {
            if w > T::zero() {
                self.bx.coords(idx, &mut coords);
                acc.entry(cell_of(&coords, sqrt_ell))
                    .or_default()
                    .add(w);
            }
        }
        let scale = self.log_scale.exp();
        acc.into_iter()
            .map(|(y, s)| (y, s.value() * scale))
            .collect()
    }
}

/// Iterate sites with |x|_inf <= r and coordinate-sum parity matching `n`,
/// in fixed scan order.
fn visit_parity_box<E>(
    bx: &LatticeBox,
    r: i64,
    n: usize,
    coords: &mut [i64],
    mut f: impl FnMut(&LatticeBox, usize, &[i64]) -> std::result::Result<(), E>,
) -> std::result::Result<(), E> {
    let dim = bx.dim();
    let cap = bx.radius();
    coords.iter_mut().for_each(|c| *c = -r);
    loop {
        // fix the parity of the last coordinate
        let head: i64 = coords[..dim - 1].iter().sum();
        let mut last = -r;
        if (head + last + n as i64).rem_euclid(2) != 0 {
            last += 1;
        }
        let mut base = 0usize;
        for (a, &c) in coords[..dim - 1].iter().enumerate() {
            base += (c + cap) as usize * bx.stride(a);
        }
        while last <= r {
            coords[dim - 1] = last;
            let idx = base + (last + cap) as usize;
            f(bx, idx, coords)?;
            last += 2;
        }
        // odometer over the leading dims
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
            return Ok(());
        }
    }
}

#[inline]
fn in_cell(x: &[i64], sqrt_ell: i64, label: &[i64]) -> bool {
    x.iter()
        .zip(label)
        .all(|(&c, &y)| (c + sqrt_ell / 2 - 1).div_euclid(sqrt_ell) == y)
}

/// Coarse cell label of a site: the `y` with `x` in
/// `y sqrt_ell + (-sqrt_ell/2, sqrt_ell/2]^d`.
pub fn cell_of(x: &[i64], sqrt_ell: i64) -> Vec<i64> {
    x.iter()
        .map(|&c| (c + sqrt_ell / 2 - 1).div_euclid(sqrt_ell))
        .collect()
}

/// log Zhat_N and the final slice.
pub fn log_partition<T: Scalar, D: Disorder>(
    field: &D,
    beta: T,
    n: usize,
    truncation_radius: Option<i64>,
) -> Result<(T, PolymerSlice<T>)> {
    let mut ev = ForwardEvolution::new(field, beta, n, truncation_radius)?;
    for _ in 0..n {
        ev.step()?;
    }
    Ok((ev.log_zhat(), ev.slice()))
}

/// Endpoint-marginal table of the length-N polymer measure:
/// `prob(n, x) = P_N(S_n = x)` for 0 <= n <= N.
pub struct Marginals<T: Scalar> {
    slices: Vec<(LatticeBox, Vec<T>)>,
}

impl<T: Scalar> Marginals<T> {
    pub fn n_max(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn prob(&self, n: usize, x: &[i64]) -> T {
        let (bx, data) = &self.slices[n];
        match bx.index(x) {
            Some(i) => data[i],
            None => T::zero(),
        }
    }

    pub fn slice_sum(&self, n: usize) -> T {
        kahan_sum(self.slices[n].1.iter().copied())
    }

    /// sum over all (n >= 1, x) of prob(n,x)^2.
    pub fn sum_of_squares(&self) -> T {
        let mut acc = KahanSum::new();
        for (_, data) in self.slices.iter().skip(1) {
            for &v in data {
                acc.add(v * v);
            }
        }
        acc.value()
    }

    pub fn for_each(&self, mut f: impl FnMut(usize, &[i64], T)) {
        let mut coords: Vec<i64> = Vec::new();
        for (n, (bx, data)) in self.slices.iter().enumerate() {
            coords.resize(bx.dim(), 0);
            for (idx, &v) in data.iter().enumerate() {
                if v != T::zero() {
                    bx.coords(idx, &mut coords);
                    f(n, &coords, v);
                }
            }
        }
    }
}

/// Forward-backward marginals of the Gibbs measure.
pub fn marginals<T: Scalar, D: Disorder>(
    field: &D,
    beta: T,
    n: usize,
    truncation_radius: Option<i64>,
) -> Result<Marginals<T>> {
    let dim = field.dim();
    let lambda = field.law().cumulants(beta)?.lambda;

    // forward slices, one per time
    let mut forward: Vec<(LatticeBox, Vec<T>)> = Vec::with_capacity(n + 1);
    let cap;
    {
        let mut ev = ForwardEvolution::new(field, beta, n, truncation_radius)?;
        cap = ev.bounds().radius();
        forward.push(slice_to_dense(&ev.slice()));
        for _ in 0..n {
            ev.step()?;
            forward.push(slice_to_dense(&ev.slice()));
        }
    }

    // backward pass on the same geometry
    let bx = LatticeBox::new(dim, cap);
    let inv_step: T = cast(1.0 / (2 * dim) as f64);
    let mut cur = vec![T::one(); bx.len()];
    let mut backward: Vec<Vec<T>> = vec![Vec::new(); n + 1];
    backward[n] = cur.clone();
    let mut coords = vec![0i64; dim];
    let mut nb = vec![0i64; dim];
    for m in (0..n).rev() {
        let mut nxt = vec![T::zero(); bx.len()];
        let r = (m as i64).min(cap);
        visit_parity_box(&bx, r, m, &mut coords, |bx, idx, x| {
            let mut acc = T::zero();
            for a in 0..dim {
                let st = bx.stride(a);
                for (dir, ok) in [(-1i64, x[a] > -cap), (1, x[a] < cap)] {
                    if ok {
                        nb.copy_from_slice(x);
                        nb[a] = x[a] + dir;
                        let j = if dir < 0 { idx - st } else { idx + st };
                        let w = cur[j];
                        if w > T::zero() {
                            let omega = cast::<T>(field.omega((m + 1) as i64, &nb)?);
                            acc += w * inv_step * (beta * omega - lambda).exp();
                        }
                    }
                }
            }
            nxt[idx] = acc;
            Ok::<(), Error>(())
        })?;
        // scale extraction mirrors the forward pass
        let mx = nxt.iter().fold(T::zero(), |m, &v| m.max(v));
        if mx > T::zero() {
            nxt.iter_mut().for_each(|v| *v = *v / mx);
        }
        cur = nxt.clone();
        backward[m] = nxt;
    }

    // combine and normalize per time slice
    let mut slices = Vec::with_capacity(n + 1);
    for m in 0..=n {
        let (fbx, fw) = &forward[m];
        let mut probs = vec![T::zero(); fbx.len()];
        let mut total = KahanSum::new();
        let mut c = vec![0i64; dim];
        for (idx, &f) in fw.iter().enumerate() {
            if f > T::zero() {
                fbx.coords(idx, &mut c);
                let b = match bx.index(&c) {
                    Some(j) => backward[m][j],
                    None => T::zero(),
                };
                let v = f * b;
                probs[idx] = v;
                total.add(v);
            }
        }
        let t = total.value();
        probs.iter_mut().for_each(|v| *v = *v / t);
        slices.push((fbx.clone(), probs));
    }
    Ok(Marginals { slices })
}

fn slice_to_dense<T: Scalar>(s: &PolymerSlice<T>) -> (LatticeBox, Vec<T>) {
    (s.bx.clone(), s.weights.clone())
}

/// Replica-overlap series o_k and the free-energy gap estimator built on it.
pub struct OverlapSeries<T> {
    /// o_k for k = 1..=N
    pub o: Vec<T>,
    pub log_zhat: T,
    /// lambda(beta) * (1/N) sum_k o_k
    pub gap_estimate: T,
}

/// o_k = probability that two independent replicas of the length-(k-1)
/// polymer, each extended by one free step, land on the same site.
pub fn overlap_series<T: Scalar, D: Disorder>(
    field: &D,
    beta: T,
    n: usize,
    truncation_radius: Option<i64>,
) -> Result<OverlapSeries<T>> {
    let dim = field.dim();
    let lambda = field.law().cumulants(beta)?.lambda;
    let mut ev = ForwardEvolution::new(field, beta, n, truncation_radius)?;
    let inv_step: T = cast(1.0 / (2 * dim) as f64);
    let bx = ev.bounds().clone();
    let cap = bx.radius();
    let mut coords = vec![0i64; dim];
    let mut o = Vec::with_capacity(n);
    for k in 1..=n {
        // one free step from the (unnormalized) endpoint weights of time k-1,
        // then the collision probability of two independent copies
        let total = ev.sum();
        let weights = &ev.cur;
        let mut acc = KahanSum::new();
        let r = (k as i64).min(cap);
        visit_parity_box(&bx, r, k, &mut coords, |bx, idx, x| {
            let mut nu = T::zero();
            for a in 0..dim {
                let st = bx.stride(a);
                if x[a] > -cap {
                    nu += weights[idx - st];
                }
                if x[a] < cap {
                    nu += weights[idx + st];
                }
            }
            nu = nu * inv_step;
            acc.add(nu * nu);
            Ok::<(), Error>(())
        })?;
        o.push(acc.value() / (total * total));
        ev.step()?;
    }
    let mean: T = kahan_sum(o.iter().copied()) / cast(n as f64);
    Ok(OverlapSeries {
        o,
        log_zhat: ev.log_zhat(),
        gap_estimate: lambda * mean,
    })
}

/// A coarse-grained trajectory: cell labels at the block boundaries
/// i*ell, i = 1..=m, for cells of side sqrt_ell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarseTrajectory {
    sqrt_ell: i64,
    labels: Vec<Vec<i64>>,
}

impl CoarseTrajectory {
    pub fn new(sqrt_ell: i64, labels: Vec<Vec<i64>>, dim: usize) -> Result<Self> {
        if sqrt_ell <= 0 || sqrt_ell % 2 != 0 {
            return Err(Error::Config(format!(
                "cell side sqrt(ell) must be a positive even integer, got {sqrt_ell}"
            )));
        }
        if labels.is_empty() || labels.iter().any(|y| y.len() != dim) {
            return Err(Error::Config(
                "coarse trajectory needs at least one d-dimensional label".into(),
            ));
        }
        Ok(Self { sqrt_ell, labels })
    }

    pub fn sqrt_ell(&self) -> i64 {
        self.sqrt_ell
    }

    pub fn ell(&self) -> usize {
        (self.sqrt_ell * self.sqrt_ell) as usize
    }

    pub fn blocks(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, i: usize) -> &[i64] {
        &self.labels[i]
    }
}

/// Restricted renormalized partition function Z_Y: the forward evolution
/// masked to the trajectory's cell after every multiple of ell.
pub fn coarse_grained_partition<T: Scalar, D: Disorder>(
    field: &D,
    beta: T,
    traj: &CoarseTrajectory,
) -> Result<T> {
    let ell = traj.ell();
    let n = ell * traj.blocks();
    let mut ev = ForwardEvolution::new(field, beta, n, None)?;
    for i in 0..traj.blocks() {
        for _ in 0..ell {
            ev.step()?;
        }
        ev.mask_to_cell(traj.sqrt_ell(), traj.label(i));
    }
    let s = ev.sum();
    if s <= T::zero() {
        return Ok(T::zero());
    }
    Ok((s.ln() + ev.log_scale).exp())
}

/// All cell labels whose cell intersects the reach of the walk at time i*ell.
pub fn reachable_labels(block: usize, sqrt_ell: i64, dim: usize) -> Vec<Vec<i64>> {
    let reach = (block as i64) * sqrt_ell * sqrt_ell;
    let lo = (-reach - sqrt_ell / 2).div_euclid(sqrt_ell);
    let hi = (reach + sqrt_ell / 2 - 1).div_euclid(sqrt_ell);
    let mut out: Vec<Vec<i64>> = vec![Vec::new()];
    for _ in 0..dim {
        let mut next = Vec::new();
        for prefix in &out {
            for y in lo..=hi {
                let mut p = prefix.clone();
                p.push(y);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Every coarse trajectory with labels reachable at each block boundary.
pub fn enumerate_trajectories(sqrt_ell: i64, blocks: usize, dim: usize) -> Result<Vec<CoarseTrajectory>> {
    let mut partial: Vec<Vec<Vec<i64>>> = vec![Vec::new()];
    for i in 1..=blocks {
        let labels = reachable_labels(i, sqrt_ell, dim);
        let mut next = Vec::with_capacity(partial.len() * labels.len());
        for prefix in &partial {
            for y in &labels {
                let mut p = prefix.clone();
                p.push(y.clone());
                next.push(p);
            }
        }
        partial = next;
    }
    partial
        .into_iter()
        .map(|labels| CoarseTrajectory::new(sqrt_ell, labels, dim))
        .collect()
}
