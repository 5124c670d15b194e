//! Subcommand implementations. Each writes its files under the configured
//! output directory and returns the in-memory results for callers that want
//! them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use marginscope::backend::SimulatedBackend;
use marginscope::controller::{run_episodes, write_episodes_csv, write_trace_csv, EpisodeReport};
use marginscope::energy::{
    check_energy_monotone, energy_sweep, iso_performance_savings, read_energy_csv, write_energy_csv, write_savings_csv,
    EnergyError, EnergyRecord, SavingsReport,
};
use marginscope::model::{calibrate, Calibration};
use marginscope::sweep::{
    execute_plan, read_records_csv, size_independence_test, summarize, write_records_csv, write_summary_csv,
    FailureSummary, SizeIndependence, SummaryError, SweepError, TestRecord,
};
use marginscope::{DeviceModelParams, GuardbandTable};
use serde::Serialize;

use crate::config::{CampaignConfig, ConfigError};

pub const TOOL: &str = "marginscope";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

/// First line of every CSV and report written by the tool.
pub fn provenance_line(cfg: &CampaignConfig) -> String {
    format!(
        "# tool={TOOL} version={} config_hash={} seed={}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.config_hash(),
        cfg.campaign_seed
    )
}

fn write_output(
    cfg: &CampaignConfig,
    name: &str,
    body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<PathBuf, CliError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut buf = provenance_line(cfg).into_bytes();
    body(&mut buf).with_context(|| format!("formatting {name}"))?;
    let path = dir.join(name);
    fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Device parameters from the config: fixed parameters, or a calibration.
pub fn resolve_model(cfg: &CampaignConfig) -> Result<(DeviceModelParams, Option<Calibration>), CliError> {
    if let Some(params) = &cfg.model.params {
        return Ok((params.clone(), None));
    }
    let targets = cfg.resolve_targets()?.unwrap_or_default();
    let cal = calibrate(&GuardbandTable::datasheet(), &targets).context("calibrating device model")?;
    Ok((cal.params.clone(), Some(cal)))
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    max_relative_residual: f64,
    reference_freq_khz: u32,
    reference_low_mv: u32,
    reference_high_mv: u32,
    predicted_savings: f64,
    edge_probability: f64,
    params: &'a DeviceModelParams,
    onsets: &'a [marginscope::model::OnsetFit],
}

pub fn cmd_calibrate(cfg: &CampaignConfig) -> Result<Calibration, CliError> {
    let targets = match cfg.resolve_targets()? {
        Some(t) => t,
        None => return Err(ConfigError::new("model", "calibrate needs calibration targets, not fixed params").into()),
    };
    let cal = calibrate(&GuardbandTable::datasheet(), &targets).context("calibrating device model")?;
    let report = CalibrationReport {
        max_relative_residual: cal.max_relative_residual,
        reference_freq_khz: cal.reference_freq_khz,
        reference_low_mv: cal.reference_low_mv,
        reference_high_mv: cal.reference_high_mv,
        predicted_savings: cal.predicted_savings,
        edge_probability: cal.edge_probability,
        params: &cal.params,
        onsets: &cal.onsets,
    };
    let text = toml::to_string(&report).context("serializing calibration report")?;
    write_output(cfg, "calibration.toml", |w| {
        w.extend_from_slice(text.as_bytes());
        Ok(())
    })?;
    Ok(cal)
}

#[derive(Debug)]
pub struct CharacterizeOutput {
    pub records: Vec<TestRecord>,
    pub summary: FailureSummary,
    pub size_independence: Result<SizeIndependence, String>,
}

pub fn cmd_characterize(cfg: &CampaignConfig) -> Result<CharacterizeOutput, CliError> {
    let (params, _) = resolve_model(cfg)?;
    let table = GuardbandTable::datasheet();
    let backend = SimulatedBackend::new(params);
    let records = match execute_plan(&backend, &cfg.sweep, cfg.campaign_seed) {
        Ok(records) => records,
        Err(SweepError::Backend { partial, source }) => {
            write_output(cfg, "records.csv", |w| write_records_csv(w, &partial))?;
            return Err(runtime(anyhow::anyhow!("sweep aborted after {} records: {source}", partial.len())));
        }
        Err(e) => return Err(ConfigError::new("sweep", e).into()),
    };
    write_output(cfg, "records.csv", |w| write_records_csv(w, &records))?;
    let summary = match summarize(&records) {
        Ok(s) | Err(SummaryError::NoFailuresObserved(s)) => s,
        Err(e) => return Err(runtime(e)),
    };
    write_output(cfg, "summary.csv", |w| write_summary_csv(w, &summary, &table))?;
    let size_independence = size_independence_test(&records).map_err(|e| e.to_string());
    let text = characterize_text(&records, &summary, &size_independence, &table);
    write_output(cfg, "characterize.txt", |w| {
        w.extend_from_slice(text.as_bytes());
        Ok(())
    })?;
    Ok(CharacterizeOutput { records, summary, size_independence })
}

fn mhz(khz: Option<u32>) -> String {
    khz.map(|k| format!("{:.1}", f64::from(k) / 1000.0)).unwrap_or_else(|| "-".into())
}

fn characterize_text(
    records: &[TestRecord],
    summary: &FailureSummary,
    size: &Result<SizeIndependence, String>,
    table: &GuardbandTable,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} runs", records.len());
    let _ = writeln!(out, "voltage  guardband  first-error  headroom  first-lockup  error p5..p95 (MHz)  lockup p50");
    for v in &summary.voltages {
        let gb = table.max_freq_khz(v.voltage_mv, marginscope::ClockDomain::Cluster).ok();
        let headroom = match (v.first_error_khz, gb) {
            (Some(e), Some(g)) => format!("{:.2}x", f64::from(e) / f64::from(g)),
            _ => "-".into(),
        };
        let band = v.errors.map(|q| format!("{}..{}", mhz(Some(q.p5)), mhz(Some(q.p95)))).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:>4} mV  {:>6} MHz  {:>8} MHz  {:>8}  {:>9} MHz  {:>19}  {}",
            v.voltage_mv,
            mhz(gb),
            mhz(v.first_error_khz),
            headroom,
            mhz(v.first_lockup_khz),
            band,
            mhz(v.lockups.map(|q| q.p50)),
        );
    }
    match size {
        Ok(s) => {
            let _ = writeln!(
                out,
                "size independence: {} (slope x range = {:+.4}, threshold {})",
                if s.passes { "pass" } else { "fail" },
                s.effect,
                marginscope::sweep::SIZE_EFFECT_THRESHOLD
            );
        }
        Err(e) => {
            let _ = writeln!(out, "size independence: not evaluated ({e})");
        }
    }
    out
}

#[derive(Debug)]
pub struct EnergyOutput {
    pub records: Vec<EnergyRecord>,
    /// `None` when no frequency offers a comparison pair.
    pub savings: Option<SavingsReport>,
}

impl EnergyOutput {
    pub fn max_savings(&self) -> f64 {
        self.savings.as_ref().map_or(0.0, |s| s.max.savings)
    }
}

pub fn cmd_energy(cfg: &CampaignConfig) -> Result<EnergyOutput, CliError> {
    let (params, _) = resolve_model(cfg)?;
    let backend = SimulatedBackend::new(params);
    let grid = &cfg.energy;
    let workload = grid.workload().map_err(|e| ConfigError::new("energy", e))?;
    let records = energy_sweep(&backend, &workload, &grid.voltages_mv, &grid.frequencies(), grid.timeout_factor, cfg.campaign_seed)
        .map_err(runtime)?;
    write_output(cfg, "energy.csv", |w| write_energy_csv(w, &records))?;
    check_energy_monotone(&records).map_err(runtime)?;
    let savings = savings_or_none(&records)?;
    if let Some(report) = &savings {
        write_output(cfg, "savings.csv", |w| write_savings_csv(w, report))?;
    }
    let text = energy_text(&records, savings.as_ref());
    write_output(cfg, "energy.txt", |w| {
        w.extend_from_slice(text.as_bytes());
        Ok(())
    })?;
    Ok(EnergyOutput { records, savings })
}

fn savings_or_none(records: &[EnergyRecord]) -> Result<Option<SavingsReport>, CliError> {
    match iso_performance_savings(records, &GuardbandTable::datasheet()) {
        Ok(r) => Ok(Some(r)),
        Err(EnergyError::NoCommonFrequency) => Ok(None),
        Err(e) => Err(runtime(e)),
    }
}

fn energy_text(records: &[EnergyRecord], savings: Option<&SavingsReport>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} energy records", records.len());
    let mut voltages: Vec<u32> = records.iter().map(|r| r.op.voltage_mv()).collect();
    voltages.dedup();
    for v in voltages {
        match marginscope::energy::error_free_max_freq(records, v) {
            Ok(f) => {
                let _ = writeln!(out, "{v} mV: error-free up to {} MHz", mhz(Some(f)));
            }
            Err(e) => {
                let _ = writeln!(out, "{v} mV: {e}");
            }
        }
    }
    match savings {
        Some(s) => {
            let m = s.max;
            let _ = writeln!(
                out,
                "max iso-performance savings: {:.2}% at {} MHz ({} mV vs {} mV)",
                100.0 * m.savings,
                mhz(Some(m.freq_khz)),
                m.candidate_mv,
                m.baseline_mv
            );
        }
        None => {
            let _ = writeln!(out, "max iso-performance savings: 0.00% (no comparison pair)");
        }
    }
    out
}

pub fn cmd_control(cfg: &CampaignConfig) -> Result<Vec<EpisodeReport>, CliError> {
    let (params, _) = resolve_model(cfg)?;
    let table = GuardbandTable::datasheet();
    let reports = run_episodes(&params, &table, &cfg.controller, cfg.campaign_seed, cfg.control.episodes, cfg.control.duration_windows)
        .map_err(runtime)?;
    write_output(cfg, "episodes.csv", |w| write_episodes_csv(w, &reports))?;
    write_output(cfg, "controller_trace.csv", |w| write_trace_csv(w, &reports))?;
    let text = control_text(cfg, &reports);
    write_output(cfg, "control.txt", |w| {
        w.extend_from_slice(text.as_bytes());
        Ok(())
    })?;
    Ok(reports)
}

fn control_text(cfg: &CampaignConfig, reports: &[EpisodeReport]) -> String {
    let c = &cfg.controller;
    let n = reports.len() as f64;
    let settled = reports.iter().filter(|r| r.settled()).count();
    let in_bounds = reports.iter().filter(|r| r.rate_within_bounds(c)).count();
    let lockups: u32 = reports.iter().map(|r| r.lockup_events).sum();
    let max_overhead = reports.iter().map(|r| r.overhead).fold(0.0, f64::max);
    let mean_savings = reports.iter().map(|r| r.net_savings).sum::<f64>() / n;
    let mut voltages: Vec<u32> = reports.iter().map(|r| r.final_voltage_mv).collect();
    voltages.sort_unstable();
    voltages.dedup();
    let mut out = String::new();
    let _ = writeln!(out, "{} episodes at {} MHz", reports.len(), mhz(Some(c.target_freq_khz)));
    let _ = writeln!(out, "settled: {settled}, rate within bounds: {in_bounds}, lockup events: {lockups}");
    let _ = writeln!(out, "final voltages (mV): {voltages:?}");
    let _ = writeln!(out, "max recovery overhead: {:.4}%", 100.0 * max_overhead);
    let _ = writeln!(out, "mean net savings vs guardband baseline: {:.2}%", 100.0 * mean_savings);
    if reports.iter().any(|r| !r.baseline_within_guardband) {
        let _ = writeln!(out, "note: target exceeds every guardband; baseline uses the highest supply step");
    }
    out
}

/// Re-reads `records.csv` and `energy.csv` from the output directory and
/// writes a combined `report.txt`. Missing inputs are skipped.
pub fn cmd_report(cfg: &CampaignConfig) -> Result<String, CliError> {
    let table = GuardbandTable::datasheet();
    let dir = &cfg.output_dir;
    let mut out = String::new();
    let mut found = false;
    if let Some(text) = read_optional(&dir.join("records.csv"))? {
        found = true;
        let records = read_records_csv(text.as_bytes()).map_err(|e| runtime(anyhow::anyhow!("records.csv: {e}")))?;
        let summary = match summarize(&records) {
            Ok(s) | Err(SummaryError::NoFailuresObserved(s)) => s,
            Err(e) => return Err(runtime(e)),
        };
        let size = size_independence_test(&records).map_err(|e| e.to_string());
        out.push_str("== characterization ==\n");
        out.push_str(&characterize_text(&records, &summary, &size, &table));
    }
    if let Some(text) = read_optional(&dir.join("energy.csv"))? {
        found = true;
        let records = read_energy_csv(text.as_bytes()).map_err(|e| runtime(anyhow::anyhow!("energy.csv: {e}")))?;
        out.push_str("== energy ==\n");
        out.push_str(&energy_text(&records, savings_or_none(&records)?.as_ref()));
    }
    if !found {
        return Err(runtime(anyhow::anyhow!("no records.csv or energy.csv in {}", dir.display())));
    }
    write_output(cfg, "report.txt", |w| {
        w.extend_from_slice(out.as_bytes());
        Ok(())
    })?;
    Ok(out)
}

fn read_optional(path: &Path) -> Result<Option<String>, CliError> {
    match fs::read_to_string(path) {
        Ok(text) => Ok(Some(text)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(runtime(anyhow::Error::new(e).context(format!("reading {}", path.display())))),
    }
}
