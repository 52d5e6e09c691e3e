//! CSV reports and the line-delimited exploration log.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use condenser_core::explorer::Candidate;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bench::BenchReport;
use crate::error::{HarnessError, Result};
use crate::specio::spec_digest;

/// One row of the benchmark report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub spec_digest: String,
    pub params: u64,
    pub macs: u64,
    pub batch: usize,
    pub threads: usize,
    pub images_per_sec: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Empty when no evaluation was run.
    pub top1: Option<f64>,
}

impl ReportRow {
    pub fn new(b: &BenchReport, top1: Option<f64>) -> Self {
        ReportRow {
            spec_digest: b.spec_digest.clone(),
            params: b.params,
            macs: b.macs,
            batch: b.batch,
            threads: b.threads,
            images_per_sec: b.images_per_sec,
            p50_ms: b.p50_ms,
            p95_ms: b.p95_ms,
            top1,
        }
    }
}

/// Appends `rows` to a CSV file, writing the header if the file is new or
/// empty. Returns the 0-based index of the first appended row.
pub fn append_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<usize> {
    let existing = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(HarnessError::io(path, e)),
    };
    let first = if existing.is_empty() {
        0
    } else {
        csv::Reader::from_reader(existing.as_slice()).records().count()
    };
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(existing.is_empty()).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(first)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

/// Raw timing sample of one benchmark iteration. `run` is the index of the
/// matching row in the report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub run: usize,
    pub spec_digest: String,
    pub iter: usize,
    pub ms: f64,
}

/// Sibling file holding raw timings: `report.csv` → `report.timings.csv`.
pub fn timings_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().unwrap_or_default().to_string_lossy();
    report.with_file_name(format!("{stem}.timings.csv"))
}

/// Appends one report row and its raw timings.
pub fn append_report(path: &Path, bench: &BenchReport, top1: Option<f64>) -> Result<usize> {
    let run = append_csv(path, &[ReportRow::new(bench, top1)])?;
    let timings: Vec<TimingRow> = bench
        .timings_ms
        .iter()
        .enumerate()
        .map(|(iter, ms)| TimingRow {
            run,
            spec_digest: bench.spec_digest.clone(),
            iter,
            ms: *ms,
        })
        .collect();
    append_csv(&timings_path(path), &timings)?;
    Ok(run)
}

/// Mean with a two-sided Student-t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Sample mean, sample standard deviation and the `level` (e.g. 0.95)
/// interval. A single sample gives a degenerate interval at the mean.
pub fn summarize(values: &[f64], level: f64) -> Result<Summary> {
    let n = values.len();
    if n == 0 {
        return Err(HarnessError::Usage("cannot summarize zero values".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(Summary {
            n,
            mean,
            std: 0.0,
            ci_low: mean,
            ci_high: mean,
        });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + level / 2.0);
    let half = t * std / (n as f64).sqrt();
    Ok(Summary {
        n,
        mean,
        std,
        ci_low: mean - half,
        ci_high: mean + half,
    })
}

/// Shift-consistency summary for one model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub variant: String,
    pub spec_digest: String,
    pub seeds: usize,
    pub max_shift: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub mean_top1: f64,
    /// Per-seed consistencies, `;`-separated.
    pub values: String,
}

impl RobustnessRow {
    pub fn new(variant: &str, digest: String, max_shift: usize, consistency: &[f64], top1: &[f64]) -> Result<Self> {
        let s = summarize(consistency, 0.95)?;
        Ok(RobustnessRow {
            variant: variant.to_string(),
            spec_digest: digest,
            seeds: s.n,
            max_shift,
            mean: s.mean,
            std: s.std,
            ci95_low: s.ci_low,
            ci95_high: s.ci_high,
            mean_top1: summarize(top1, 0.95)?.mean,
            values: consistency.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(";"),
        })
    }
}

/// One exploration log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub generation: usize,
    pub index: usize,
    pub seed: u64,
    pub spec_digest: String,
    pub params: u64,
    pub macs: u64,
    pub p: f64,
    pub m: f64,
    pub a: f64,
    pub latency_ms: f64,
    /// `null` when accuracy is zero (the score is then minus infinity).
    pub u: Option<f64>,
    pub verdicts: [Option<bool>; 4],
    pub feasible: bool,
}

impl LogLine {
    pub fn new(c: &Candidate) -> Result<Self> {
        Ok(LogLine {
            generation: c.generation,
            index: c.index,
            seed: c.seed,
            spec_digest: spec_digest(&c.spec)?,
            params: c.perf.params,
            macs: c.perf.macs,
            p: c.perf.p_millions,
            m: c.perf.m_billions,
            a: c.perf.a,
            latency_ms: c.perf.latency_ms,
            u: c.perf.u.is_finite().then_some(c.perf.u),
            verdicts: c.verdicts.0,
            feasible: c.feasible,
        })
    }
}

/// Writes one JSON object per candidate, one per line.
pub fn write_log(path: &Path, log: &[Candidate]) -> Result<()> {
    let mut out = Vec::new();
    for c in log {
        serde_json::to_writer(&mut out, &LogLine::new(c)?).map_err(|e| HarnessError::json("log line", e))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(&out).map_err(|e| HarnessError::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::json(path.display().to_string(), e)))
        .collect()
}
