//! Streaming aggregates and compensated summation.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Welford (count, mean, M2) aggregate. Pushing samples in a fixed order is
/// bit-deterministic, which is what the checkpoint/resume contract relies on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamingStat {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl StreamingStat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        let delta2 = value - self.mean;
        self.m2 += delta * delta2;
    }

    /// Chan et al. parallel merge. Only used when the caller has already
    /// fixed a deterministic merge order.
    pub fn merge(&mut self, other: &StreamingStat) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n1 = self.count as f64;
        let n2 = other.count as f64;
        let delta = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += delta * n2 / n;
        self.m2 += other.m2 + delta * delta * n1 * n2 / n;
        self.count += other.count;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 until two samples are seen.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean; 0 for exact (non-statistical) quantities.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn from_samples(values: &[f64]) -> Self {
        let mut s = Self::new();
        for &v in values {
            s.push(v);
        }
        s
    }
}

/// Snapshot of a streaming aggregate for reports.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StatSummary {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
}

impl From<StreamingStat> for StatSummary {
    fn from(s: StreamingStat) -> Self {
        Self {
            count: s.count,
            mean: s.mean(),
            variance: s.variance(),
            stderr: s.stderr(),
        }
    }
}

impl StatSummary {
    pub fn of(values: &[f64]) -> Self {
        StreamingStat::from_samples(values).into()
    }

    /// Exact quantities carry stderr 0.
    pub fn exact(value: f64) -> Self {
        Self {
            count: 1,
            mean: value,
            variance: 0.0,
            stderr: 0.0,
        }
    }
}

/// Kahan compensated accumulator, used wherever a slice sum feeds a 1e-12
/// tolerance.
#[derive(Clone, Copy, Debug)]
pub struct KahanSum<T: Scalar> {
    sum: T,
    carry: T,
}

impl<T: Scalar> Default for KahanSum<T> {
    fn default() -> Self {
        Self {
            sum: T::zero(),
            carry: T::zero(),
        }
    }
}

impl<T: Scalar> KahanSum<T> {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: T) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum
    }
}

/// Compensated sum of a slice in index order.
pub fn kahan_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let mut acc = KahanSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 2654435761u64 as usize) % 997) as f64).collect();
        let mut s = StreamingStat::new();
        for &x in &xs {
            s.push(x);
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((s.mean() - mean).abs() < 1e-9);
        assert!((s.variance() - var).abs() / var < 1e-12);
    }

    #[test]
    fn merge_agrees_with_sequential() {
        let xs: Vec<f64> = (0..501).map(|i| (i as f64).sin()).collect();
        let mut all = StreamingStat::new();
        for &x in &xs {
            all.push(x);
        }
        let (a, b) = xs.split_at(137);
        let mut left = StreamingStat::from_samples(a);
        let right = StreamingStat::from_samples(b);
        left.merge(&right);
        assert_eq!(left.count, all.count);
        assert!((left.mean() - all.mean()).abs() < 1e-12);
        assert!((left.variance() - all.variance()).abs() < 1e-12);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut acc = KahanSum::<f64>::new();
        acc.add(1.0);
        for _ in 0..1_000_000 {
            acc.add(1e-16);
        }
        assert!((acc.value() - (1.0 + 1e-10)).abs() < 1e-13);
    }
}
