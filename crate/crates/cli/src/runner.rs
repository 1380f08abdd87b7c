//! Checkpointed, worker-count-independent sample loop.
//!
//! Samples are evaluated in parallel chunks but folded into the streaming
//! aggregates in sample-index order, so aggregates, CSV bytes and checkpoints
//! are bit-identical however the work was scheduled. A resumed run truncates
//! the CSV back to the last checkpointed byte count and continues the fold
//! from the stored aggregates, reproducing an uninterrupted run exactly.

use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use polymer_core::stats::StreamingStat;

use crate::config::{crate_version, ExperimentConfig, SCHEMA_VERSION};

/// Sparse per-sample evaluation: (statistic index, value) pairs.
pub type SampleEval<'a> =
    Box<dyn Fn(u64) -> polymer_core::Result<Vec<(usize, f64)>> + Sync + 'a>;

pub struct Task<'a> {
    pub config: ExperimentConfig,
    pub total_samples: u64,
    pub stat_names: Vec<String>,
    pub eval: SampleEval<'a>,
    /// header for per-sample CSV rows, if the command emits them
    pub per_sample_header: Option<String>,
    #[allow(clippy::type_complexity)]
    pub per_sample_row: Option<Box<dyn Fn(u64, &[(usize, f64)]) -> String + Sync + 'a>>,
    /// aggregate rows appended once at completion (header line included)
    #[allow(clippy::type_complexity)]
    pub finalize_rows: Box<dyn Fn(&[StreamingStat]) -> Vec<String> + Sync + 'a>,
    /// extra derived quantities for the JSON summary
    #[allow(clippy::type_complexity)]
    pub derived: Box<dyn Fn(&[StreamingStat]) -> serde_json::Value + Sync + 'a>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub version: String,
    pub config: ExperimentConfig,
    pub config_hash: u64,
    pub samples_done: u64,
    pub stats: Vec<StreamingStat>,
    pub csv_path: PathBuf,
    pub csv_bytes: u64,
    pub completed: bool,
}

pub struct RunPaths {
    pub out: PathBuf,
    pub summary: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_interval: u64,
    pub stop_after: Option<u64>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    Stopped { samples_done: u64 },
    AlreadyComplete,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let ck: Checkpoint = serde_json::from_str(&text)
        .with_context(|| format!("checkpoint {} is corrupt or from another schema", path.display()))?;
    if ck.schema_version != SCHEMA_VERSION {
        bail!(
            "checkpoint schema {} != supported {}",
            ck.schema_version,
            SCHEMA_VERSION
        );
    }
    if ck.version != crate_version() {
        bail!(
            "checkpoint written by version {}, this binary is {}",
            ck.version,
            crate_version()
        );
    }
    if ck.config_hash != ck.config.hash() {
        bail!("checkpoint config hash mismatch: file corrupt or config tampered");
    }
    Ok(ck)
}

fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_string_pretty(ck)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn config_header(config: &ExperimentConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!("# version = {}\n", crate_version()));
    s.push_str(&format!("# config = {}\n", config.canonical_json()));
    s.push_str(&format!("# config_hash = {:016x}\n", config.hash()));
    s
}

pub fn run(task: &Task<'_>, paths: &RunPaths, resume: Option<Checkpoint>) -> Result<Outcome> {
    let hash = task.config.hash();
    let mut stats;
    let mut done;
    let mut csv: File;
    let mut csv_bytes;

    match resume {
        Some(ck) => {
            if ck.config_hash != hash {
                bail!(
                    "checkpoint was created for a different config (hash {:016x} != {:016x})",
                    ck.config_hash,
                    hash
                );
            }
            if ck.completed {
                println!("run already complete ({} samples); nothing to do", ck.samples_done);
                return Ok(Outcome::AlreadyComplete);
            }
            if ck.stats.len() != task.stat_names.len() {
                bail!("checkpoint statistic count mismatch");
            }
            stats = ck.stats;
            done = ck.samples_done;
            csv = OpenOptions::new()
                .read(true)
                .write(true)
                .open(&paths.out)
                .with_context(|| format!("reopening {}", paths.out.display()))?;
            let len = csv.metadata()?.len();
            if len < ck.csv_bytes {
                bail!(
                    "CSV {} is shorter ({len}) than the checkpoint recorded ({}); refusing",
                    paths.out.display(),
                    ck.csv_bytes
                );
            }
            csv.set_len(ck.csv_bytes)?;
            csv.seek(SeekFrom::End(0))?;
            csv_bytes = ck.csv_bytes;
        }
        None => {
            stats = vec![StreamingStat::new(); task.stat_names.len()];
            done = 0;
            csv = File::create(&paths.out)
                .with_context(|| format!("creating {}", paths.out.display()))?;
            let mut header = config_header(&task.config);
            if let Some(h) = &task.per_sample_header {
                header.push_str(h);
                header.push('\n');
            }
            csv.write_all(header.as_bytes())?;
            csv_bytes = header.len() as u64;
        }
    }

    let t0 = std::time::Instant::now();
    let stop_at = paths.stop_after.unwrap_or(u64::MAX).min(task.total_samples);
    while done < task.total_samples {
        if done >= stop_at {
            let ck = Checkpoint {
                schema_version: SCHEMA_VERSION,
                version: crate_version().to_string(),
                config: task.config.clone(),
                config_hash: hash,
                samples_done: done,
                stats: stats.clone(),
                csv_path: paths.out.clone(),
                csv_bytes,
                completed: false,
            };
            let Some(ck_path) = &paths.checkpoint else {
                bail!("--stop-after needs --checkpoint to be resumable");
            };
            write_checkpoint(ck_path, &ck)?;
            println!(
                "stopped after {done}/{} samples; checkpoint at {}",
                task.total_samples,
                ck_path.display()
            );
            return Ok(Outcome::Stopped { samples_done: done });
        }
        let chunk_end = (done + paths.checkpoint_interval.max(1))
            .min(task.total_samples)
            .min(stop_at);
        let results: Vec<Vec<(usize, f64)>> = (done..chunk_end)
            .into_par_iter()
            .map(|i| (task.eval)(i))
            .collect::<polymer_core::Result<Vec<_>>>()?;
        let mut rows = String::new();
        for (offset, pairs) in results.iter().enumerate() {
            let i = done + offset as u64;
            for &(s, v) in pairs {
                stats[s].push(v);
            }
            if let Some(rowfn) = &task.per_sample_row {
                rows.push_str(&rowfn(i, pairs));
                rows.push('\n');
            }
        }
        csv.write_all(rows.as_bytes())?;
        csv.flush()?;
        csv_bytes += rows.len() as u64;
        done = chunk_end;
        if let Some(ck_path) = &paths.checkpoint {
            write_checkpoint(
                ck_path,
                &Checkpoint {
                    schema_version: SCHEMA_VERSION,
                    version: crate_version().to_string(),
                    config: task.config.clone(),
                    config_hash: hash,
                    samples_done: done,
                    stats: stats.clone(),
                    csv_path: paths.out.clone(),
                    csv_bytes,
                    completed: false,
                },
            )?;
        }
    }

    // aggregate rows and summary
    let mut tail = String::new();
    for row in (task.finalize_rows)(&stats) {
        tail.push_str(&row);
        tail.push('\n');
    }
    csv.write_all(tail.as_bytes())?;
    csv.flush()?;
    csv_bytes += tail.len() as u64;

    if let Some(ck_path) = &paths.checkpoint {
        write_checkpoint(
            ck_path,
            &Checkpoint {
                schema_version: SCHEMA_VERSION,
                version: crate_version().to_string(),
                config: task.config.clone(),
                config_hash: hash,
                samples_done: done,
                stats: stats.clone(),
                csv_path: paths.out.clone(),
                csv_bytes,
                completed: true,
            },
        )?;
    }

    if let Some(summary_path) = &paths.summary {
        let statistics: Vec<serde_json::Value> = task
            .stat_names
            .iter()
            .zip(&stats)
            .map(|(name, s)| {
                serde_json::json!({
                    "name": name,
                    "count": s.count,
                    "mean": s.mean(),
                    "variance": s.variance(),
                    "stderr": s.stderr(),
                })
            })
            .collect();
        let summary = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "version": crate_version(),
            "config": task.config,
            "config_hash": format!("{:016x}", hash),
            "statistics": statistics,
            "derived": (task.derived)(&stats),
            "wall_time_s": t0.elapsed().as_secs_f64(),
        });
        std::fs::write(summary_path, serde_json::to_string_pretty(&summary)?)?;
    }
    println!(
        "completed {} samples -> {}",
        task.total_samples,
        paths.out.display()
    );
    Ok(Outcome::Completed)
}
