//! Across-seed statistics of final scores, written as a TOML document.

use std::fmt::Write as _;

use anyhow::{Context, Result};

use crate::curves::fmt_real;

#[derive(Debug, Clone, PartialEq)]
pub struct SeedScore {
    pub seed: u64,
    /// Best of the final iteration's ES and TD3 evaluations.
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub scores: Vec<SeedScore>,
    pub failures: Vec<SeedFailure>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
}

impl ExperimentSummary {
    /// Statistics are NaN when no seed completed.
    pub fn new(scores: Vec<SeedScore>, failures: Vec<SeedFailure>) -> Self {
        let values: Vec<f64> = scores.iter().map(|s| s.final_score).collect();
        let (mean, std, median) = stats(&values);
        Self {
            scores,
            failures,
            mean,
            std,
            median,
        }
    }

    pub fn all_completed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        writeln!(out, "completed = {}", self.scores.len()).unwrap();
        writeln!(out, "failed = {}", self.failures.len()).unwrap();
        writeln!(out, "mean = {}", toml_real(self.mean)).unwrap();
        writeln!(out, "std = {}", toml_real(self.std)).unwrap();
        writeln!(out, "median = {}", toml_real(self.median)).unwrap();
        for s in &self.scores {
            writeln!(out, "\n[[seed]]\nseed = {}\nfinal_score = {}", s.seed, toml_real(s.final_score)).unwrap();
        }
        for f in &self.failures {
            let msg = toml::Value::String(f.error.clone());
            writeln!(out, "\n[[failure]]\nseed = {}\nerror = {msg}", f.seed).unwrap();
        }
        out
    }

    /// Reads back the per-seed lists and recomputes the statistics from
    /// them.
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: toml::Table = text.parse().context("summary is not valid TOML")?;
        let seed_of = |t: &toml::Table| -> Result<u64> {
            let v = t.get("seed").and_then(|v| v.as_integer()).context("entry without seed")?;
            u64::try_from(v).context("negative seed")
        };
        let mut scores = Vec::new();
        if let Some(arr) = doc.get("seed").and_then(|v| v.as_array()) {
            for t in arr.iter().filter_map(|v| v.as_table()) {
                let final_score = match t.get("final_score") {
                    Some(toml::Value::Float(x)) => *x,
                    Some(toml::Value::Integer(i)) => *i as f64,
                    _ => anyhow::bail!("seed entry without final_score"),
                };
                scores.push(SeedScore {
                    seed: seed_of(t)?,
                    final_score,
                });
            }
        }
        let mut failures = Vec::new();
        if let Some(arr) = doc.get("failure").and_then(|v| v.as_array()) {
            for t in arr.iter().filter_map(|v| v.as_table()) {
                failures.push(SeedFailure {
                    seed: seed_of(t)?,
                    error: t.get("error").and_then(|v| v.as_str()).unwrap_or("").to_string(),
                });
            }
        }
        Ok(Self::new(scores, failures))
    }
}

fn toml_real(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        fmt_real(x)
    }
}

/// `(mean, population std, median)`.
pub fn stats(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    (mean, var.sqrt(), median)
}
