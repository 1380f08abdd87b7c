//! Deterministic Monte Carlo sweeps over disorder samples and walk paths.
//!
//! Sample `i` of any sweep is a pure function of `(master seed, i)`; workers
//! only parallelize the map, and results are collected in sample-index order,
//! so every downstream aggregate is independent of the worker count.

use rayon::prelude::*;

use crate::disorder::{DisorderLaw, EnvironmentField};
use crate::error::Result;
use crate::lattice::Walk;
use crate::partition;
use crate::rng::{sample_seed, DOMAIN_WALK};
use crate::Error;

/// Evaluate `f` over sample indices `0..samples` in parallel, results in
/// index order.
pub fn collect_samples<V: Send>(
    samples: u64,
    f: impl Fn(u64) -> Result<V> + Sync,
) -> Result<Vec<V>> {
    (0..samples)
        .into_par_iter()
        .map(|i| f(i))
        .collect::<std::result::Result<Vec<V>, Error>>()
}

/// Fresh disorder field for sample `i` of a sweep.
pub fn sample_field(
    law: DisorderLaw,
    master_seed: u64,
    i: u64,
    dim: usize,
    time_extent: i64,
    radius: i64,
) -> EnvironmentField {
    EnvironmentField::new(law, sample_seed(master_seed, i), dim, time_extent, radius)
}

/// Walk path for sample `i` (independent stream from the disorder samples).
pub fn sample_walk(master_seed: u64, i: u64, dim: usize, len: usize) -> Walk {
    Walk::sample(sample_seed(master_seed ^ DOMAIN_WALK, i), dim, len)
}

/// log Zhat_N per disorder sample.
pub fn log_zhat_samples(
    law: DisorderLaw,
    master_seed: u64,
    beta: f64,
    n: usize,
    truncation_radius: Option<i64>,
    samples: u64,
) -> Result<Vec<f64>> {
    let radius = truncation_radius.unwrap_or(n as i64).min(n as i64);
    collect_samples(samples, |i| {
        let field = sample_field(law, master_seed, i, 2, n as i64, radius);
        let (lz, _) = partition::log_partition::<f64, _>(&field, beta, n, truncation_radius)?;
        Ok(lz)
    })
}

/// Zhat_N per disorder sample.
pub fn zhat_samples(
    law: DisorderLaw,
    master_seed: u64,
    beta: f64,
    n: usize,
    truncation_radius: Option<i64>,
    samples: u64,
) -> Result<Vec<f64>> {
    Ok(log_zhat_samples(law, master_seed, beta, n, truncation_radius, samples)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Per-sample (log Zhat, overlap gap estimate, mean overlap fraction).
pub struct FreeEnergySample {
    pub log_zhat: f64,
    pub gap_estimate: f64,
    pub mean_overlap: f64,
    pub o: Vec<f64>,
}

pub fn free_energy_samples(
    law: DisorderLaw,
    master_seed: u64,
    beta: f64,
    n: usize,
    truncation_radius: Option<i64>,
    samples: u64,
) -> Result<Vec<FreeEnergySample>> {
    let radius = truncation_radius.unwrap_or(n as i64).min(n as i64);
    collect_samples(samples, |i| {
        let field = sample_field(law, master_seed, i, 2, n as i64, radius);
        let s = partition::overlap_series::<f64, _>(&field, beta, n, truncation_radius)?;
        let mean_overlap = s.o.iter().sum::<f64>() / n as f64;
        Ok(FreeEnergySample {
            log_zhat: s.log_zhat,
            gap_estimate: s.gap_estimate,
            mean_overlap,
            o: s.o,
        })
    })
}
