//! Resolved experiment configurations: the checkpointable commands are pure
//! functions of one of these values (plus the crate version), so the full
//! config is embedded in every checkpoint and hashed for resume validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

pub fn crate_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Plan parameters as they appear on the command line.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PlanConfig {
    pub ell: usize,
    pub eps: f64,
    pub enlargement: i64,
    pub penalty: f64,
    pub blocks: usize,
    /// None: use the defining formulas for q and u
    pub order: Option<usize>,
    pub range: Option<usize>,
}

impl PlanConfig {
    pub fn build(&self) -> polymer_core::Result<polymer_core::coarse::CoarseGrainPlan> {
        match (self.order, self.range) {
            (Some(q), Some(u)) => polymer_core::coarse::CoarseGrainPlan::new_manual(
                self.ell,
                self.eps,
                self.enlargement,
                self.penalty,
                self.blocks,
                q,
                u,
            ),
            (None, None) => polymer_core::coarse::CoarseGrainPlan::new_paper(
                self.ell,
                self.eps,
                self.enlargement,
                self.penalty,
                self.blocks,
            ),
            _ => Err(polymer_core::Error::Config(
                "give both --order and --range, or neither (formula mode)".into(),
            )),
        }
    }
}

/// One checkpointable experiment, fully resolved.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    FreeEnergy {
        law: String,
        betas: Vec<f64>,
        n: usize,
        truncation: Option<i64>,
        samples: u64,
        seed: u64,
    },
    Overlap {
        law: String,
        beta: f64,
        n: usize,
        truncation: Option<i64>,
        samples: u64,
        seed: u64,
    },
    SecondMoment {
        law: String,
        beta: f64,
        eps: f64,
        n: Option<usize>,
        cap: u64,
        samples: u64,
        seed: u64,
    },
    XStatistic {
        law: String,
        plan: PlanConfig,
        beta: Option<f64>,
        samples: u64,
        seed: u64,
    },
    WStatistic {
        plan: PlanConfig,
        y_cov: Option<(usize, usize)>,
        samples: u64,
        seed: u64,
    },
    FractionalMoment {
        law: String,
        beta: f64,
        plan: PlanConfig,
        /// None: full sweep over reachable trajectories
        trajectory: Option<Vec<Vec<i64>>>,
        samples: u64,
        seed: u64,
    },
}

impl ExperimentConfig {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization")
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(format!("{}|{}", crate_version(), self.canonical_json()).as_bytes())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_01b3);
    }
    h
}

/// Flat `key = value` config file; values fill in flags the user omitted.
#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    bail!("{}:{}: expected `key = value`", path.display(), lineno + 1);
                };
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self { values })
    }

    pub fn str(&self, key: &str) -> Option<String> {
        self.values.get(key).cloned()
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key {key} = {v:?}: {e}")),
        }
    }
}

/// "a:b:step" inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        bail!("grid spec {spec:?} must be start:end:step");
    }
    let (a, b, step): (f64, f64, f64) = (parts[0].parse()?, parts[1].parse()?, parts[2].parse()?);
    if step <= 0.0 || b < a {
        bail!("grid spec {spec:?} must have start <= end and step > 0");
    }
    let mut out = Vec::new();
    let mut i = 0u64;
    loop {
        let v = a + step * i as f64;
        if v > b + 1e-12 {
            break;
        }
        out.push(v);
        i += 1;
    }
    Ok(out)
}

/// "y1x,y1y;y2x,y2y;..." coarse trajectory labels.
pub fn parse_trajectory(spec: &str) -> Result<Vec<Vec<i64>>> {
    spec.split(';')
        .map(|cell| {
            cell.split(',')
                .map(|c| c.trim().parse::<i64>().context("trajectory component"))
                .collect::<Result<Vec<i64>>>()
        })
        .collect()
}

pub fn default_out(command: &str) -> PathBuf {
    PathBuf::from(format!("{command}.csv"))
}
