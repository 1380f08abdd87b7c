//! Flat-indexed lattice boxes and nearest-neighbor walks on Z^d.

use crate::error::{Error, Result};
use crate::rng::{self, DOMAIN_WALK};
use crate::scalar::Scalar;

/// The centered box [-radius, radius]^dim, row-major flat indexing with the
/// last coordinate contiguous.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeBox {
    dim: usize,
    radius: i64,
    side: i64,
    len: usize,
    strides: Vec<usize>,
}

impl LatticeBox {
    pub fn new(dim: usize, radius: i64) -> Self {
        assert!(dim >= 1 && radius >= 0);
        let side = 2 * radius + 1;
        let mut strides = vec![0usize; dim];
        let mut s = 1usize;
        for a in (0..dim).rev() {
            strides[a] = s;
            s = s.checked_mul(side as usize).expect("lattice box overflow");
        }
        Self {
            dim,
            radius,
            side,
            len: s,
            strides,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn radius(&self) -> i64 {
        self.radius
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    #[inline]
    pub fn contains(&self, x: &[i64]) -> bool {
        x.len() == self.dim && x.iter().all(|&c| c.abs() <= self.radius)
    }

    #[inline]
    pub fn index(&self, x: &[i64]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let mut idx = 0usize;
        for (a, &c) in x.iter().enumerate() {
            idx += (c + self.radius) as usize * self.strides[a];
        }
        Some(idx)
    }

    /// Write the coordinates of flat index `idx` into `out`.
    #[inline]
    pub fn coords(&self, mut idx: usize, out: &mut [i64]) {
        for a in 0..self.dim {
            out[a] = (idx / self.strides[a]) as i64 - self.radius;
            idx %= self.strides[a];
        }
    }

    /// Iterate all sites as (flat index, coordinates).
    pub fn iter_sites(&self) -> SiteIter<'_> {
        SiteIter {
            bx: self,
            next: 0,
            coords: vec![-self.radius; self.dim],
        }
    }
}

pub struct SiteIter<'a> {
    bx: &'a LatticeBox,
    next: usize,
    coords: Vec<i64>,
}

impl<'a> SiteIter<'a> {
    /// Advance and hand out the next (index, coords) pair.
    #[inline]
    pub fn advance(&mut self) -> Option<(usize, &[i64])> {
        if self.next >= self.bx.len {
            return None;
        }
        if self.next > 0 {
            // odometer increment, last axis fastest
            for a in (0..self.bx.dim).rev() {
                if self.coords[a] < self.bx.radius {
                    self.coords[a] += 1;
                    break;
                }
                self.coords[a] = -self.bx.radius;
            }
        }
        let idx = self.next;
        self.next += 1;
        Some((idx, &self.coords))
    }
}

/// One parity class of a box, packed to half the storage. Consecutive flat
/// indices of an odd-sided box alternate coordinate-sum parity, so the packed
/// index is just `full_index / 2`.
#[derive(Clone, Debug)]
pub struct ParitySlice<T> {
    bx: LatticeBox,
    /// parity of the coordinate sum stored in this slice (0 or 1)
    class: u8,
    data: Vec<T>,
}

impl<T: Scalar> ParitySlice<T> {
    pub fn zeros(dim: usize, radius: i64, class: u8) -> Self {
        let bx = LatticeBox::new(dim, radius);
        let data = vec![T::zero(); bx.len() / 2 + 1];
        Self { bx, class, data }
    }

    #[inline]
    pub fn bounds(&self) -> &LatticeBox {
        &self.bx
    }

    #[inline]
    pub fn class(&self) -> u8 {
        self.class
    }

    pub fn packed_len(&self) -> usize {
        self.data.len()
    }

    /// Value at `x`; zero off-parity or outside the box.
    #[inline]
    pub fn get(&self, x: &[i64]) -> T {
        let parity = (x.iter().map(|&c| c.abs() as u64).sum::<u64>() % 2) as u8;
        if parity != self.class {
            return T::zero();
        }
        match self.bx.index(x) {
            Some(idx) => self.data[idx / 2],
            None => T::zero(),
        }
    }

    #[inline]
    pub fn set_full_index(&mut self, full_idx: usize, v: T) {
        self.data[full_idx / 2] = v;
    }

    #[inline]
    pub fn get_full_index(&self, full_idx: usize) -> T {
        self.data[full_idx / 2]
    }

    /// Iterate stored sites of this parity class: (full index, coords, value).
    pub fn for_each_site(&self, mut f: impl FnMut(usize, &[i64], T)) {
        let mut it = self.bx.iter_sites();
        while let Some((idx, coords)) = it.advance() {
            let parity = (coords.iter().map(|&c| c.abs() as u64).sum::<u64>() % 2) as u8;
            if parity == self.class {
                f(idx, coords, self.data[idx / 2]);
            }
        }
    }

    pub fn sum(&self) -> T {
        let mut acc = crate::stats::KahanSum::new();
        self.for_each_site(|_, _, v| acc.add(v));
        acc.value()
    }
}

/// A nearest-neighbor path on Z^d, positions stored flat (`dim` entries per
/// time step, time 0 included).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Walk {
    dim: usize,
    pos: Vec<i64>,
}

impl Walk {
    pub fn from_steps(dim: usize, steps: &[usize]) -> Self {
        let mut pos = vec![0i64; dim];
        let mut all = pos.clone();
        for &s in steps {
            let axis = s / 2;
            let dir = if s % 2 == 0 { 1 } else { -1 };
            pos[axis] += dir;
            all.extend_from_slice(&pos);
        }
        Self { dim, pos: all }
    }

    /// Deterministic simple-random-walk sample: step `n` is a pure function
    /// of `(seed, n)`.
    pub fn sample(seed: u64, dim: usize, len: usize) -> Self {
        let steps: Vec<usize> = (1..=len)
            .map(|n| {
                let key = rng::coord_key(seed, DOMAIN_WALK, n as i64, &[]);
                rng::index_below(key, 2 * dim)
            })
            .collect();
        Self::from_steps(dim, &steps)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps (positions run 0..=len()).
    #[inline]
    pub fn len(&self) -> usize {
        self.pos.len() / self.dim - 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn at(&self, n: usize) -> &[i64] {
        &self.pos[n * self.dim..(n + 1) * self.dim]
    }

    pub fn require_len(&self, len: usize) -> Result<()> {
        if self.len() < len {
            return Err(Error::Config(format!(
                "walk of length {} is shorter than required {}",
                self.len(),
                len
            )));
        }
        Ok(())
    }

    /// l1 distance between positions at two times.
    #[inline]
    pub fn l1_between(&self, s: usize, t: usize) -> i64 {
        self.at(s)
            .iter()
            .zip(self.at(t))
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}
