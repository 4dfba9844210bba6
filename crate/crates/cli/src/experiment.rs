//! Multi-seed runs and the files they leave behind.
//!
//! An output directory holds, per seed `N`: `curve_seedN.csv`,
//! `actor_seedN.ckpt` and `mean_seedN.ckpt` (plus `trace_seedN.csv` when
//! tracing), and one `summary.toml` over all seeds.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use estd3_core::{run_with, IterationReport, RunConfig};
use log::{info, warn};
use rayon::prelude::*;

use crate::config_file::parse_config;
use crate::curves::{read_curve, write_curve, write_trace};
use crate::summary::{ExperimentSummary, SeedFailure, SeedScore};

pub const SUMMARY_FILE: &str = "summary.toml";

#[derive(Debug, Clone, Copy, Default)]
pub struct OutputOptions {
    /// Append trailing-window averages of the two evaluation columns.
    pub smoothed: bool,
    /// Also write the per-generation ES trace.
    pub trace: bool,
}

pub fn curve_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("curve_seed{seed}.csv"))
}

fn write_curve_file(path: &Path, reports: &[IterationReport], smoothed: bool) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_curve(BufWriter::new(file), reports, smoothed)
}

/// Runs one seed and writes its files. On failure the curve still holds
/// every iteration completed before the error.
fn run_seed(config: &RunConfig, seed: u64, dir: &Path, opts: OutputOptions) -> Result<f64> {
    let config = RunConfig {
        seed,
        ..config.clone()
    };
    let mut reports = Vec::new();
    let result = run_with(config, |r| {
        info!(
            "seed {seed} iteration {}: es {:.3} td3 {:.3}{}",
            r.iteration,
            r.es_eval,
            r.td3_eval,
            if r.overwrite_applied { " (overwrite)" } else { "" }
        );
        reports.push(r.clone());
    });
    write_curve_file(&curve_path(dir, seed), &reports, opts.smoothed)?;
    let out = result.with_context(|| format!("seed {seed} failed after {} iterations", reports.len()))?;
    out.actor.save(dir.join(format!("actor_seed{seed}.ckpt")))?;
    out.es_mean.save(dir.join(format!("mean_seed{seed}.ckpt")))?;
    if opts.trace {
        let path = dir.join(format!("trace_seed{seed}.csv"));
        write_trace(BufWriter::new(File::create(&path)?), &out.trace)?;
    }
    let last = out.reports.last().context("no iterations were run")?;
    Ok(last.best_eval())
}

/// Runs every seed (in parallel) and writes the curve files and summary
/// into `dir`. Seeds that fail are listed in the summary rather than
/// aborting the others.
pub fn run_experiment(
    config: &RunConfig,
    seeds: &[u64],
    dir: &Path,
    opts: OutputOptions,
) -> Result<ExperimentSummary> {
    anyhow::ensure!(!seeds.is_empty(), "at least one seed is required");
    config.validate()?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), toml::to_string(config)?)?;
    let results: Vec<(u64, Result<f64>)> = seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(config, seed, dir, opts)))
        .collect();
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(final_score) => scores.push(SeedScore { seed, final_score }),
            Err(e) => {
                warn!("seed {seed}: {e:#}");
                failures.push(SeedFailure {
                    seed,
                    error: format!("{e:#}"),
                });
            }
        }
    }
    let summary = ExperimentSummary::new(scores, failures);
    fs::write(dir.join(SUMMARY_FILE), summary.to_toml())?;
    Ok(summary)
}

/// Recomputes the summary from the curve files found in `dir`. A curve
/// that cannot be read, has no rows, or stops short of the iteration count
/// in the directory's `config.toml` counts as a failed seed.
pub fn report(dir: &Path) -> Result<ExperimentSummary> {
    let config_path = dir.join("config.toml");
    let expected_iterations = if config_path.exists() {
        Some(parse_config(&config_path)?.iterations)
    } else {
        None
    };
    let mut seeds: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(seed) = name
            .strip_prefix("curve_seed")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse().ok())
        {
            seeds.push((seed, path));
        }
    }
    anyhow::ensure!(!seeds.is_empty(), "no curve files in {}", dir.display());
    seeds.sort();
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for (seed, path) in seeds {
        let rows = File::open(&path).map_err(anyhow::Error::from).and_then(read_curve);
        let outcome = match rows {
            Err(e) => Err(format!("{e:#}")),
            Ok(rows) => match (rows.last(), expected_iterations) {
                (None, _) => Err("empty curve".to_string()),
                (Some(_), Some(n)) if rows.len() < n => {
                    Err(format!("incomplete curve: {} of {n} iterations", rows.len()))
                }
                (Some(last), _) => Ok(last.best_eval()),
            },
        };
        match outcome {
            Ok(final_score) => scores.push(SeedScore { seed, final_score }),
            Err(error) => failures.push(SeedFailure { seed, error }),
        }
    }
    let summary = ExperimentSummary::new(scores, failures);
    fs::write(dir.join(SUMMARY_FILE), summary.to_toml())?;
    Ok(summary)
}
