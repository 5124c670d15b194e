use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use thiserror::Error;

use super::{Outcome, TestRecord};
use crate::model::{ClockDomain, GuardbandTable};

/// Largest acceptable |slope * size range| of the per-size error rate.
pub const SIZE_EFFECT_THRESHOLD: f64 = 0.05;

pub const SUMMARY_HEADER: [&str; 17] = [
    "voltage_mv",
    "guardband_khz",
    "tests",
    "error_count",
    "lockup_count",
    "first_error_khz",
    "first_lockup_khz",
    "error_p5_khz",
    "error_p25_khz",
    "error_p50_khz",
    "error_p75_khz",
    "error_p95_khz",
    "lockup_p5_khz",
    "lockup_p25_khz",
    "lockup_p50_khz",
    "lockup_p75_khz",
    "lockup_p95_khz",
];

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("no records to summarize")]
    NoRecords,
    #[error("no errors or lockups observed")]
    NoFailuresObserved(FailureSummary),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quantiles {
    pub p5: u32,
    pub p25: u32,
    pub p50: u32,
    pub p75: u32,
    pub p95: u32,
}

impl Quantiles {
    fn of(sorted: &[u32]) -> Option<Self> {
        Some(Self {
            p5: nearest_rank(sorted, 5.0)?,
            p25: nearest_rank(sorted, 25.0)?,
            p50: nearest_rank(sorted, 50.0)?,
            p75: nearest_rank(sorted, 75.0)?,
            p95: nearest_rank(sorted, 95.0)?,
        })
    }

    pub fn spread_p5_p95(&self) -> u32 {
        self.p95 - self.p5
    }
}

/// Nearest-rank percentile of ascending `sorted`.
pub fn nearest_rank(sorted: &[u32], percentile: f64) -> Option<u32> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoltageFailures {
    pub voltage_mv: u32,
    pub tests: usize,
    pub error_count: usize,
    pub lockup_count: usize,
    pub first_error_khz: Option<u32>,
    pub first_lockup_khz: Option<u32>,
    pub errors: Option<Quantiles>,
    pub lockups: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureSummary {
    pub voltages: Vec<VoltageFailures>,
}

impl FailureSummary {
    pub fn voltage(&self, voltage_mv: u32) -> Option<&VoltageFailures> {
        self.voltages.iter().find(|v| v.voltage_mv == voltage_mv)
    }
}

/// Per-voltage first occurrences and quantiles of the frequencies at which
/// errors and lockups occurred. Each record counts once.
pub fn summarize(records: &[TestRecord]) -> Result<FailureSummary, SummaryError> {
    if records.is_empty() {
        return Err(SummaryError::NoRecords);
    }
    let mut by_voltage: BTreeMap<u32, (usize, Vec<u32>, Vec<u32>)> = BTreeMap::new();
    for r in records {
        let entry = by_voltage.entry(r.voltage_mv()).or_default();
        entry.0 += 1;
        match r.outcome {
            Outcome::Error => entry.1.push(r.freq_khz()),
            Outcome::Lockup => entry.2.push(r.freq_khz()),
            Outcome::Correct => {}
        }
    }
    let voltages: Vec<_> = by_voltage
        .into_iter()
        .map(|(voltage_mv, (tests, mut errs, mut locks))| {
            errs.sort_unstable();
            locks.sort_unstable();
            VoltageFailures {
                voltage_mv,
                tests,
                error_count: errs.len(),
                lockup_count: locks.len(),
                first_error_khz: errs.first().copied(),
                first_lockup_khz: locks.first().copied(),
                errors: Quantiles::of(&errs),
                lockups: Quantiles::of(&locks),
            }
        })
        .collect();
    let summary = FailureSummary { voltages };
    if summary.voltages.iter().all(|v| v.error_count == 0 && v.lockup_count == 0) {
        return Err(SummaryError::NoFailuresObserved(summary));
    }
    Ok(summary)
}

pub fn write_summary_csv<W: Write>(writer: W, summary: &FailureSummary, table: &GuardbandTable) -> std::io::Result<()> {
    let opt = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for v in &summary.voltages {
        let guardband = table.max_freq_khz(v.voltage_mv, ClockDomain::Cluster).ok();
        let mut row = vec![
            v.voltage_mv.to_string(),
            opt(guardband),
            v.tests.to_string(),
            v.error_count.to_string(),
            v.lockup_count.to_string(),
            opt(v.first_error_khz),
            opt(v.first_lockup_khz),
        ];
        for q in [v.errors, v.lockups] {
            row.extend([q.map(|q| q.p5), q.map(|q| q.p25), q.map(|q| q.p50), q.map(|q| q.p75), q.map(|q| q.p95)].map(opt));
        }
        w.write_record(&row)?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeIndependence {
    /// (problem size, error rate, records) at failure-prone points.
    pub per_size: Vec<(u64, f64, usize)>,
    pub slope_per_item: f64,
    pub size_range: u64,
    /// `slope_per_item * size_range`, in absolute error-rate units.
    pub effect: f64,
    pub passes: bool,
}

/// Tests whether the error rate depends on problem size.
///
/// Only (voltage, frequency) points where at least one error occurred are
/// used; the per-size error rate over those points is regressed on size.
pub fn size_independence_test(records: &[TestRecord]) -> Result<SizeIndependence, SummaryError> {
    let failing: HashSet<(u32, u32)> = records
        .iter()
        .filter(|r| r.outcome == Outcome::Error)
        .map(|r| (r.voltage_mv(), r.freq_khz()))
        .collect();
    if failing.is_empty() {
        return Err(SummaryError::InsufficientData("no errors observed".into()));
    }
    let mut by_size: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| failing.contains(&(r.voltage_mv(), r.freq_khz()))) {
        let e = by_size.entry(r.n_items).or_default();
        e.0 += usize::from(r.outcome == Outcome::Error);
        e.1 += 1;
    }
    if by_size.len() < 5 {
        return Err(SummaryError::InsufficientData(format!(
            "errors cover {} problem sizes, need at least 5",
            by_size.len()
        )));
    }
    let per_size: Vec<(u64, f64, usize)> =
        by_size.into_iter().map(|(n, (errs, total))| (n, errs as f64 / total as f64, total)).collect();
    let k = per_size.len() as f64;
    let mean_x = per_size.iter().map(|p| p.0 as f64).sum::<f64>() / k;
    let mean_y = per_size.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = per_size.iter().map(|p| (p.0 as f64 - mean_x) * (p.1 - mean_y)).sum();
    let sxx: f64 = per_size.iter().map(|p| (p.0 as f64 - mean_x).powi(2)).sum();
    let slope = sxy / sxx;
    let size_range = per_size.last().map(|p| p.0).unwrap_or(0) - per_size.first().map(|p| p.0).unwrap_or(0);
    let effect = slope * size_range as f64;
    Ok(SizeIndependence { per_size, slope_per_item: slope, size_range, effect, passes: effect.abs() < SIZE_EFFECT_THRESHOLD })
}
