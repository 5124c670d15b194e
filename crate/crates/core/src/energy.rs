//! Energy of a parallel workload across the voltage/frequency grid and the
//! iso-performance comparison: at each frequency, the cheapest error-free
//! point against the cheapest point inside the guardband.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, RunOutcome, RunRequest, DEFAULT_TIMEOUT_FACTOR};
use crate::model::{GuardbandTable, OperatingPoint, SUPPLY_STEPS_MV};
use crate::seed::run_seed;
use crate::sweep::frequency_grid;
use crate::workloads::{ParallelWorkloadSpec, Workload};

pub const ENERGY_HEADER: [&str; 6] = ["voltage_mv", "freq_khz", "elapsed_s", "avg_power_w", "energy_j", "error_free"];

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("energy grid is empty: {0}")]
    EmptyGrid(&'static str),
    #[error("invalid energy grid: {0}")]
    InvalidGrid(String),
    #[error("no frequency has both an in-guardband record and an error-free record")]
    NoCommonFrequency,
    #[error("no records at {0} mV")]
    NoRecords(u32),
    #[error("lowest frequency at {0} mV is not error-free")]
    NoErrorFreeFrequency(u32),
    #[error("energy at {voltage_mv} mV does not decrease from {lower_khz} kHz to {higher_khz} kHz")]
    NotMonotone { voltage_mv: u32, lower_khz: u32, higher_khz: u32 },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Voltage/frequency grid of an energy campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyGrid {
    pub voltages_mv: Vec<u32>,
    pub start_freq_khz: u32,
    pub freq_step_khz: u32,
    /// Last frequency, inclusive.
    pub stop_freq_khz: u32,
    /// Cluster cores running the workload; the FC is added on top.
    pub cluster_cores: u32,
    pub total_cycles: u64,
    pub timeout_factor: f64,
}

impl Default for EnergyGrid {
    fn default() -> Self {
        Self {
            voltages_mv: SUPPLY_STEPS_MV.to_vec(),
            start_freq_khz: 80_000,
            freq_step_khz: 2_000,
            stop_freq_khz: 200_000,
            cluster_cores: 8,
            total_cycles: 20_000_000,
            timeout_factor: DEFAULT_TIMEOUT_FACTOR,
        }
    }
}

impl EnergyGrid {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.voltages_mv.is_empty() {
            return Err(EnergyError::EmptyGrid("voltages_mv"));
        }
        if self.start_freq_khz == 0 || self.freq_step_khz == 0 {
            return Err(EnergyError::InvalidGrid("frequencies and step must be positive".into()));
        }
        if self.stop_freq_khz < self.start_freq_khz {
            return Err(EnergyError::EmptyGrid("frequencies"));
        }
        if !(self.timeout_factor > 1.0) {
            return Err(EnergyError::InvalidGrid(format!("timeout_factor {} must exceed 1", self.timeout_factor)));
        }
        for &v in &self.voltages_mv {
            OperatingPoint::cluster(v, self.start_freq_khz).map_err(|e| EnergyError::InvalidGrid(e.to_string()))?;
        }
        self.workload()?;
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<u32> {
        frequency_grid(self.start_freq_khz, self.freq_step_khz, self.stop_freq_khz)
    }

    pub fn workload(&self) -> Result<ParallelWorkloadSpec, EnergyError> {
        ParallelWorkloadSpec::new("parallel", self.cluster_cores, self.total_cycles)
            .map_err(|e| EnergyError::InvalidGrid(e.to_string()))
    }
}

/// Energy of one run of the parallel workload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    pub op: OperatingPoint,
    pub elapsed_s: f64,
    pub avg_power_w: f64,
    pub energy_j: f64,
    pub error_free: bool,
}

/// One run per (voltage, frequency), returned in (voltage, frequency) order.
///
/// A record is error-free when the run returned the workload's reference
/// signature; a mismatch or a timeout is not.
pub fn energy_sweep<B: Backend>(
    backend: &B,
    workload: &ParallelWorkloadSpec,
    voltages_mv: &[u32],
    freqs_khz: &[u32],
    timeout_factor: f64,
    campaign_seed: u64,
) -> Result<Vec<EnergyRecord>, EnergyError> {
    if voltages_mv.is_empty() {
        return Err(EnergyError::EmptyGrid("voltages_mv"));
    }
    if freqs_khz.is_empty() {
        return Err(EnergyError::EmptyGrid("frequencies"));
    }
    let mut points: Vec<(u32, u32)> =
        voltages_mv.iter().flat_map(|&v| freqs_khz.iter().map(move |&f| (v, f))).collect();
    points.sort_unstable();
    points.dedup();

    let expected = workload.reference_signature();
    points
        .into_par_iter()
        .map(|(v, f)| {
            let op = OperatingPoint::cluster(v, f).map_err(BackendError::from)?;
            let req = RunRequest::with_timeout_factor(op, Workload::Parallel(workload.clone()), 0, timeout_factor)?;
            let resp = backend.run(&req, run_seed(campaign_seed, v, f, workload.total_cycles(), 0))?;
            Ok(EnergyRecord {
                op,
                elapsed_s: resp.elapsed_s,
                avg_power_w: resp.avg_power_w,
                energy_j: resp.energy_j(),
                error_free: resp.outcome == RunOutcome::Value(expected),
            })
        })
        .collect()
}

fn keep_cheaper<'a>(slot: &mut Option<&'a EnergyRecord>, r: &'a EnergyRecord) {
    if slot.is_none_or(|s| r.energy_j < s.energy_j) {
        *slot = Some(r);
    }
}

/// Savings at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencySavings {
    pub freq_khz: u32,
    pub baseline_mv: u32,
    pub baseline_j: f64,
    pub candidate_mv: u32,
    pub candidate_j: f64,
    pub savings: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavingsReport {
    /// Ascending frequency; only frequencies with a baseline and a candidate.
    pub per_frequency: Vec<FrequencySavings>,
    pub max: FrequencySavings,
}

/// For each frequency, compares the lowest-energy in-guardband record
/// (baseline) with the lowest-energy error-free record (candidate) and
/// reports `1 - candidate / baseline` and its maximum over frequencies.
pub fn iso_performance_savings(records: &[EnergyRecord], table: &GuardbandTable) -> Result<SavingsReport, EnergyError> {
    let mut by_freq: BTreeMap<u32, (Option<&EnergyRecord>, Option<&EnergyRecord>)> = BTreeMap::new();
    for r in records {
        let entry = by_freq.entry(r.op.freq_khz()).or_default();
        if table.within_guardband(&r.op).unwrap_or(false) {
            keep_cheaper(&mut entry.0, r);
        }
        if r.error_free {
            keep_cheaper(&mut entry.1, r);
        }
    }
    let per_frequency: Vec<FrequencySavings> = by_freq
        .into_iter()
        .filter_map(|(freq_khz, pair)| match pair {
            (Some(b), Some(c)) => Some(FrequencySavings {
                freq_khz,
                baseline_mv: b.op.voltage_mv(),
                baseline_j: b.energy_j,
                candidate_mv: c.op.voltage_mv(),
                candidate_j: c.energy_j,
                savings: (1.0 - c.energy_j / b.energy_j).max(0.0),
            }),
            _ => None,
        })
        .collect();
    let max = per_frequency
        .iter()
        .copied()
        .reduce(|best, s| if s.savings > best.savings { s } else { best })
        .ok_or(EnergyError::NoCommonFrequency)?;
    Ok(SavingsReport { per_frequency, max })
}

/// Highest frequency at `voltage_mv` below which every record is error-free.
pub fn error_free_max_freq(records: &[EnergyRecord], voltage_mv: u32) -> Result<u32, EnergyError> {
    let mut at_v: Vec<&EnergyRecord> = records.iter().filter(|r| r.op.voltage_mv() == voltage_mv).collect();
    if at_v.is_empty() {
        return Err(EnergyError::NoRecords(voltage_mv));
    }
    at_v.sort_by_key(|r| r.op.freq_khz());
    at_v.iter()
        .take_while(|r| r.error_free)
        .last()
        .map(|r| r.op.freq_khz())
        .ok_or(EnergyError::NoErrorFreeFrequency(voltage_mv))
}

/// Checks that energy strictly decreases with frequency over each voltage's
/// error-free records.
pub fn check_energy_monotone(records: &[EnergyRecord]) -> Result<(), EnergyError> {
    let mut by_v: BTreeMap<u32, Vec<&EnergyRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.error_free) {
        by_v.entry(r.op.voltage_mv()).or_default().push(r);
    }
    for (voltage_mv, mut rs) in by_v {
        rs.sort_by_key(|r| r.op.freq_khz());
        for pair in rs.windows(2) {
            if !(pair[1].energy_j < pair[0].energy_j) {
                return Err(EnergyError::NotMonotone {
                    voltage_mv,
                    lower_khz: pair[0].op.freq_khz(),
                    higher_khz: pair[1].op.freq_khz(),
                });
            }
        }
    }
    Ok(())
}

pub fn write_energy_csv<W: Write>(writer: W, records: &[EnergyRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ENERGY_HEADER)?;
    for r in records {
        w.write_record([
            r.op.voltage_mv().to_string(),
            r.op.freq_khz().to_string(),
            r.elapsed_s.to_string(),
            r.avg_power_w.to_string(),
            r.energy_j.to_string(),
            r.error_free.to_string(),
        ])?;
    }
    w.flush()
}

/// Reads records written by [`write_energy_csv`]. Lines starting with `#`
/// are ignored.
pub fn read_energy_csv<R: Read>(reader: R) -> Result<Vec<EnergyRecord>, String> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header = rdr.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(ENERGY_HEADER) {
        return Err(format!("expected header {}", ENERGY_HEADER.join(",")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        fn num<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, line: u64) -> Result<T, String> {
            let s = row.get(i).ok_or_else(|| format!("line {line}: missing field {}", ENERGY_HEADER[i]))?;
            s.parse().map_err(|_| format!("line {line}: bad {} {s:?}", ENERGY_HEADER[i]))
        }
        let op = OperatingPoint::cluster(num(&row, 0, line)?, num(&row, 1, line)?).map_err(|e| format!("line {line}: {e}"))?;
        out.push(EnergyRecord {
            op,
            elapsed_s: num(&row, 2, line)?,
            avg_power_w: num(&row, 3, line)?,
            energy_j: num(&row, 4, line)?,
            error_free: num(&row, 5, line)?,
        });
    }
    Ok(out)
}

pub const SAVINGS_HEADER: [&str; 6] = ["freq_khz", "baseline_mv", "baseline_j", "candidate_mv", "candidate_j", "savings"];

pub fn write_savings_csv<W: Write>(writer: W, report: &SavingsReport) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SAVINGS_HEADER)?;
    for s in &report.per_frequency {
        w.write_record([
            s.freq_khz.to_string(),
            s.baseline_mv.to_string(),
            s.baseline_j.to_string(),
            s.candidate_mv.to_string(),
            s.candidate_j.to_string(),
            s.savings.to_string(),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::SimulatedBackend;
    use crate::model::{calibrate, CalibrationTargets};
    use approx::assert_relative_eq;

    fn record(v: u32, f: u32, energy_j: f64, error_free: bool) -> EnergyRecord {
        EnergyRecord { op: OperatingPoint::cluster(v, f).unwrap(), elapsed_s: 1.0, avg_power_w: energy_j, energy_j, error_free }
    }

    fn calibrated_backend() -> SimulatedBackend {
        SimulatedBackend::new(calibrate(&GuardbandTable::datasheet(), &CalibrationTargets::default()).unwrap().params)
    }

    #[test]
    fn four_record_fixture() {
        // 1200 mV within guardband at 170 MHz; 1000 mV beyond it but error-free.
        let records = vec![
            record(1200, 170_000, 1.0, true),
            record(1000, 170_000, 0.8, true),
            record(1200, 172_000, 1.1, false),
            record(1000, 172_000, 0.9, false),
        ];
        let report = iso_performance_savings(&records, &GuardbandTable::datasheet()).unwrap();
        assert_eq!(report.per_frequency.len(), 1);
        assert_relative_eq!(report.max.savings, 0.2, epsilon = 1e-12);
        assert_eq!((report.max.baseline_mv, report.max.candidate_mv), (1200, 1000));
    }

    #[test]
    fn identity_gives_zero() {
        let records = vec![record(1000, 80_000, 0.5, true), record(1200, 80_000, 0.7, true)];
        let report = iso_performance_savings(&records, &GuardbandTable::datasheet()).unwrap();
        assert_eq!(report.max.savings, 0.0);
    }

    #[test]
    fn no_common_frequency() {
        let records = vec![record(1000, 170_000, 0.5, true)];
        assert!(matches!(iso_performance_savings(&records, &GuardbandTable::datasheet()), Err(EnergyError::NoCommonFrequency)));
    }

    #[test]
    fn error_free_bound() {
        let mut records: Vec<_> = (0..=60).map(|i| record(1000, 80_000 + 2_000 * i, 1.0, true)).collect();
        assert_eq!(error_free_max_freq(&records, 1000).unwrap(), 200_000);
        records.iter_mut().find(|r| r.op.freq_khz() == 160_000).unwrap().error_free = false;
        assert_eq!(error_free_max_freq(&records, 1000).unwrap(), 158_000);
        assert!(matches!(error_free_max_freq(&records, 1200), Err(EnergyError::NoRecords(1200))));
        records[0].error_free = false;
        assert!(matches!(error_free_max_freq(&records, 1000), Err(EnergyError::NoErrorFreeFrequency(1000))));
    }

    #[test]
    fn default_grid_shape_and_savings() {
        let grid = EnergyGrid::default();
        grid.validate().unwrap();
        let backend = calibrated_backend();
        let records =
            energy_sweep(&backend, &grid.workload().unwrap(), &grid.voltages_mv, &grid.frequencies(), grid.timeout_factor, 7)
                .unwrap();
        assert_eq!(records.len(), 5 * 61);
        for r in &records {
            assert_relative_eq!(r.energy_j, r.avg_power_w * r.elapsed_s, max_relative = 1e-12);
        }
        check_energy_monotone(&records).unwrap();
        assert_eq!(error_free_max_freq(&records, 1000).unwrap(), 200_000);
        let report = iso_performance_savings(&records, &GuardbandTable::datasheet()).unwrap();
        assert_eq!(report.max.freq_khz, 170_000);
        assert!((report.max.savings - 0.27).abs() < 0.005, "{}", report.max.savings);
    }

    #[test]
    fn zero_static_power_ratio() {
        let mut params = calibrate(&GuardbandTable::datasheet(), &CalibrationTargets::default()).unwrap().params;
        params.p_static_coeff = 0.0;
        let backend = SimulatedBackend::new(params);
        let wl = ParallelWorkloadSpec::new("w", 8, 1_000_000).unwrap();
        let records = energy_sweep(&backend, &wl, &[1000, 1200], &[100_000], 3.0, 1).unwrap();
        assert_relative_eq!(records[1].energy_j / records[0].energy_j, 1.44, max_relative = 1e-12);
    }

    #[test]
    fn csv_header_and_order() {
        let records = vec![record(1000, 80_000, 0.5, true)];
        let mut out = Vec::new();
        write_energy_csv(&mut out, &records).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "voltage_mv,freq_khz,elapsed_s,avg_power_w,energy_j,error_free\n1000,80000,1,0.5,0.5,true\n");
        let back = read_energy_csv(format!("# provenance\n{text}").as_bytes()).unwrap();
        assert_eq!(back, records);
    }
}
