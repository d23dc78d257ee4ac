use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// One held-out interaction: the ranked groups recommended for its item and
/// the group that actually took it.
#[derive(Debug, Clone, Copy)]
pub struct TestCase<'a> {
    pub ranked: &'a [String],
    pub truth: &'a str,
}

fn rank_of(case: &TestCase<'_>, k: usize) -> Option<usize> {
    case.ranked.iter().take(k).position(|g| g == case.truth)
}

/// Fraction of cases whose group appears in the first `k` entries.
pub fn hr_at_k(cases: &[TestCase<'_>], k: usize) -> f64 {
    if cases.is_empty() {
        return 0.0;
    }
    let hits = cases.iter().filter(|c| rank_of(c, k).is_some()).count();
    hits as f64 / cases.len() as f64
}

/// Mean `1/log₂(rank+1)` over hits, 0 for misses; ranks start at 1.
pub fn ndcg_at_k(cases: &[TestCase<'_>], k: usize) -> f64 {
    if cases.is_empty() {
        return 0.0;
    }
    let total: f64 = cases
        .iter()
        .filter_map(|c| rank_of(c, k))
        .map(|pos| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    total / cases.len() as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    /// Records a stage; durations are floored at one nanosecond so every
    /// entry is positive.
    pub fn record(&mut self, stage: &str, started: std::time::Instant) {
        let secs = started.elapsed().as_secs_f64().max(1e-9);
        self.stages.push((stage.to_owned(), secs));
    }

    pub fn extend(&mut self, other: &Timings) {
        self.stages.extend(other.stages.iter().cloned());
    }

    pub fn get(&self, stage: &str) -> Option<f64> {
        self.stages.iter().find(|(s, _)| s == stage).map(|&(_, t)| t)
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|(_, t)| t).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub sigma_inf: f64,
    /// List length used for σ_inf.
    pub sigma_k: usize,
    pub cases: usize,
    pub items: usize,
    pub timings: Timings,
}

impl MetricsReport {
    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.hr[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }
}

/// Long format `metric,k,value`; timings are kept out so reruns compare
/// byte for byte.
pub fn write_metrics_csv<W: Write>(report: &MetricsReport, mut out: W) -> Result<()> {
    writeln!(out, "metric,k,value")?;
    for (i, k) in report.ks.iter().enumerate() {
        writeln!(out, "hr,{k},{}", report.hr[i])?;
        writeln!(out, "ndcg,{k},{}", report.ndcg[i])?;
    }
    writeln!(out, "sigma_inf,{},{}", report.sigma_k, report.sigma_inf)?;
    writeln!(out, "cases,,{}", report.cases)?;
    writeln!(out, "items,,{}", report.items)?;
    Ok(())
}

/// Wide `k,hr,ndcg` table, one row per list length.
pub fn write_metrics_table<W: Write>(report: &MetricsReport, mut out: W) -> Result<()> {
    writeln!(out, "k,hr,ndcg")?;
    for (i, k) in report.ks.iter().enumerate() {
        writeln!(out, "{k},{},{}", report.hr[i], report.ndcg[i])?;
    }
    Ok(())
}

pub fn write_timings_csv<W: Write>(timings: &Timings, mut out: W) -> Result<()> {
    writeln!(out, "stage,seconds")?;
    for (stage, secs) in &timings.stages {
        writeln!(out, "{stage},{secs}")?;
    }
    Ok(())
}
