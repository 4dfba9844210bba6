//! Per-seed learning curves as CSV, one row per iteration.
//!
//! Reals are written with 17 significant digits so that reading a file back
//! reproduces every value exactly.

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use estd3_core::{GenerationTrace, IterationReport};

pub const COLUMNS: [&str; 10] = [
    "iteration",
    "cumulative_frames",
    "cumulative_es_evals",
    "es_eval",
    "td3_eval",
    "threshold",
    "good_size",
    "bad_size",
    "noisy_size",
    "overwrite_applied",
];

pub const SMOOTHED_COLUMNS: [&str; 2] = ["es_eval_smoothed", "td3_eval_smoothed"];

pub const SMOOTHING_WINDOW: usize = 10;

pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        // `inf`, `-inf` and `NaN` all parse back with `str::parse`.
        format!("{x}")
    }
}

/// Trailing moving average: entry `i` averages `values[i+1-window..=i]`,
/// or everything so far near the start.
pub fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "window must be positive");
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            // incremental mean: a constant window averages to itself exactly
            let mut m = values[lo];
            for (k, &x) in values[lo + 1..=i].iter().enumerate() {
                m += (x - m) / (k + 2) as f64;
            }
            m
        })
        .collect()
}

pub fn write_curve<W: Write>(out: W, reports: &[IterationReport], smoothed: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = COLUMNS.to_vec();
    if smoothed {
        header.extend(SMOOTHED_COLUMNS);
    }
    w.write_record(&header)?;
    let es: Vec<f64> = reports.iter().map(|r| r.es_eval).collect();
    let td3: Vec<f64> = reports.iter().map(|r| r.td3_eval).collect();
    let es_s = trailing_mean(&es, SMOOTHING_WINDOW);
    let td3_s = trailing_mean(&td3, SMOOTHING_WINDOW);
    for (i, r) in reports.iter().enumerate() {
        let mut row = vec![
            r.iteration.to_string(),
            r.cumulative_frames.to_string(),
            r.cumulative_es_evals.to_string(),
            fmt_real(r.es_eval),
            fmt_real(r.td3_eval),
            fmt_real(r.threshold),
            r.good_size.to_string(),
            r.bad_size.to_string(),
            r.noisy_size.to_string(),
            r.overwrite_applied.to_string(),
        ];
        if smoothed {
            row.push(fmt_real(es_s[i]));
            row.push(fmt_real(td3_s[i]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed curve row. `td3_updates` is not part of the file format.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub iteration: usize,
    pub cumulative_frames: u64,
    pub cumulative_es_evals: u64,
    pub es_eval: f64,
    pub td3_eval: f64,
    pub threshold: f64,
    pub good_size: usize,
    pub bad_size: usize,
    pub noisy_size: usize,
    pub overwrite_applied: bool,
}

impl CurveRow {
    pub fn best_eval(&self) -> f64 {
        self.es_eval.max(self.td3_eval)
    }
}

pub fn read_curve<R: Read>(input: R) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let fixed: Vec<&str> = header.iter().take(COLUMNS.len()).collect();
    if fixed != COLUMNS {
        bail!("unexpected curve header: {}", header.iter().collect::<Vec<_>>().join(","));
    }
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let rec = record?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let ctx = || format!("curve row {}", line + 1);
        rows.push(CurveRow {
            iteration: field(0).parse().with_context(ctx)?,
            cumulative_frames: field(1).parse().with_context(ctx)?,
            cumulative_es_evals: field(2).parse().with_context(ctx)?,
            es_eval: field(3).parse().with_context(ctx)?,
            td3_eval: field(4).parse().with_context(ctx)?,
            threshold: field(5).parse().with_context(ctx)?,
            good_size: field(6).parse().with_context(ctx)?,
            bad_size: field(7).parse().with_context(ctx)?,
            noisy_size: field(8).parse().with_context(ctx)?,
            overwrite_applied: field(9).parse().with_context(ctx)?,
        });
    }
    Ok(rows)
}

pub fn write_trace<W: Write>(out: W, trace: &[GenerationTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "generation",
        "mean_fitness",
        "best_offspring",
        "routed_good",
        "routed_bad",
        "threshold",
    ])?;
    for t in trace {
        w.write_record([
            t.iteration.to_string(),
            t.generation.to_string(),
            fmt_real(t.mean_fitness),
            fmt_real(t.best_offspring),
            t.routed_good.to_string(),
            t.routed_bad.to_string(),
            fmt_real(t.threshold),
        ])?;
    }
    w.flush()?;
    Ok(())
}
