//! Error-rate-driven adaptive voltage scaling.
//!
//! The loop observes windows of `W` runs at a fixed frequency. A window whose
//! error rate exceeds the upper bound raises the supply one step; a window
//! below the lower bound lowers it one step. Every errored run is rolled back
//! and re-executed at a cost of `T_rec` cycles, which the episode accounts in
//! time and energy.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, RunOutcome, RunRequest, SimulatedBackend, DEFAULT_TIMEOUT_FACTOR};
use crate::model::{ClockDomain, DeviceModelParams, GuardbandTable, ModelError, OperatingPoint};
use crate::seed::derive;
use crate::workloads::{GoldenCache, PrngSpec, Workload, DEFAULT_CYCLES_PER_ITEM};

/// Cores drawing power under dual-modular redundancy: a lockstep pair of
/// cluster cores plus the FC.
pub const DMR_ACTIVE_CORES: u32 = 3;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("no supply step keeps {target_khz} kHz at least {margin_khz} kHz below lockup onset")]
    InfeasibleTarget { target_khz: u32, margin_khz: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub target_freq_khz: u32,
    /// Runs per observation window, `W`.
    pub window_runs: u32,
    pub error_rate_lo: f64,
    pub error_rate_hi: f64,
    /// Cycles to restore state and re-execute one errored run, `T_rec`.
    /// `None` means two run lengths.
    pub recovery_cost_cycles: Option<u64>,
    pub settle_windows: u32,
    /// Items generated per run of the stress workload.
    pub run_items: u64,
    pub workload_seed: u64,
    pub cycles_per_item: u64,
    /// Minimum distance between the target frequency and a step's lockup
    /// onset for the step to be usable.
    pub safety_margin_khz: u32,
    /// Supply at episode start; `None` starts at the highest usable step.
    pub initial_voltage_mv: Option<u32>,
    pub timeout_factor: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            target_freq_khz: 170_000,
            window_runs: 200,
            error_rate_lo: 0.001,
            error_rate_hi: 0.01,
            recovery_cost_cycles: None,
            settle_windows: 3,
            run_items: 50_000,
            workload_seed: 1,
            cycles_per_item: DEFAULT_CYCLES_PER_ITEM,
            safety_margin_khz: 20_000,
            initial_voltage_mv: None,
            timeout_factor: DEFAULT_TIMEOUT_FACTOR,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: String| Err(ControllerError::InvalidConfig(m));
        if !(0.0 <= self.error_rate_lo && self.error_rate_lo < self.error_rate_hi && self.error_rate_hi < 1.0) {
            return bad(format!("error-rate bounds ({}, {}) must satisfy 0 <= lo < hi < 1", self.error_rate_lo, self.error_rate_hi));
        }
        if self.window_runs < 10 {
            return bad(format!("window_runs {} must be at least 10", self.window_runs));
        }
        if self.settle_windows == 0 {
            return bad("settle_windows must be positive".into());
        }
        if self.run_items == 0 || self.cycles_per_item == 0 {
            return bad("run_items and cycles_per_item must be positive".into());
        }
        if self.target_freq_khz == 0 {
            return bad("target_freq_khz must be positive".into());
        }
        if !(self.timeout_factor > 1.0) {
            return bad(format!("timeout_factor {} must exceed 1", self.timeout_factor));
        }
        Ok(())
    }

    pub fn run_cycles(&self) -> u64 {
        self.run_items * self.cycles_per_item
    }

    pub fn recovery_cycles(&self) -> u64 {
        self.recovery_cost_cycles.unwrap_or(2 * self.run_cycles())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Seeking,
    Settled,
    SafetyHold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    StepDown,
    StepUp,
    Hold,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::StepDown => "step-down",
            Action::StepUp => "step-up",
            Action::Hold => "hold",
        }
    }
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Seeking => "seeking",
            Status::Settled => "settled",
            Status::SafetyHold => "safety-hold",
        }
    }
}

/// Outcome counts of one completed window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WindowObservation {
    pub errors: u32,
    pub lockups: u32,
}

/// Loop state. Steps index an ascending list of usable supply voltages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerState {
    pub step: usize,
    pub n_steps: usize,
    pub window_errors: u32,
    pub windows_elapsed: u32,
    pub status: Status,
    /// Consecutive windows ending in `Hold`.
    pub consecutive_holds: u32,
    /// Windows left in `SafetyHold`.
    pub hold_remaining: u32,
    /// Highest step whose error rate has exceeded the upper bound; the loop
    /// does not step down onto it again.
    pub error_floor: Option<usize>,
}

impl ControllerState {
    pub fn new(step: usize, n_steps: usize) -> Self {
        assert!(step < n_steps, "step {step} outside 0..{n_steps}");
        Self {
            step,
            n_steps,
            window_errors: 0,
            windows_elapsed: 0,
            status: Status::Seeking,
            consecutive_holds: 0,
            hold_remaining: 0,
            error_floor: None,
        }
    }

    fn can_step_down(&self) -> bool {
        self.step > 0 && self.error_floor.is_none_or(|floor| self.step - 1 > floor)
    }
}

/// One decision after a complete window of `config.window_runs` runs.
///
/// A lockup raises the supply and enters `SafetyHold` for `settle_windows`
/// windows, during which the loop does not step down. Otherwise a rate above
/// `hi` steps up, a rate below `lo` steps down when a lower step is
/// available, and anything else holds. Steps clamp at both ends with `Hold`.
/// `settle_windows` consecutive holds outside a safety hold mean `Settled`.
pub fn controller_step(state: &ControllerState, config: &ControllerConfig, obs: WindowObservation) -> (ControllerState, Action) {
    let mut next = state.clone();
    next.window_errors = obs.errors;
    next.windows_elapsed += 1;
    let rate = f64::from(obs.errors) / f64::from(config.window_runs);
    let top = state.n_steps - 1;

    let action = if obs.lockups > 0 {
        next.error_floor = Some(state.error_floor.map_or(state.step, |f| f.max(state.step)));
        next.hold_remaining = config.settle_windows;
        next.status = Status::SafetyHold;
        if state.step < top { Action::StepUp } else { Action::Hold }
    } else if rate > config.error_rate_hi {
        next.error_floor = Some(state.error_floor.map_or(state.step, |f| f.max(state.step)));
        if state.step < top { Action::StepUp } else { Action::Hold }
    } else if rate < config.error_rate_lo && state.hold_remaining == 0 && state.can_step_down() {
        Action::StepDown
    } else {
        Action::Hold
    };

    match action {
        Action::StepUp => next.step += 1,
        Action::StepDown => next.step -= 1,
        Action::Hold => {}
    }
    if obs.lockups == 0 && state.hold_remaining > 0 {
        next.hold_remaining = state.hold_remaining - 1;
    }
    next.consecutive_holds = if action == Action::Hold { state.consecutive_holds + 1 } else { 0 };
    if obs.lockups == 0 {
        next.status = if next.hold_remaining > 0 {
            Status::SafetyHold
        } else if next.consecutive_holds >= config.settle_windows {
            Status::Settled
        } else {
            Status::Seeking
        };
    }
    (next, action)
}

/// One window of an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowTrace {
    pub window: u32,
    pub voltage_mv: u32,
    pub errors: u32,
    pub lockups: u32,
    pub rate: f64,
    pub status_before: Status,
    pub action: Action,
    pub status_after: Status,
    pub useful_cycles: u64,
    pub recovery_cycles: u64,
    pub power_w: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub seed: u64,
    pub target_freq_khz: u32,
    pub energy_j: f64,
    pub useful_cycles: u64,
    /// Rollback and re-execution cycles, including time lost to lockups.
    pub recovery_cycles: u64,
    /// `recovery / (useful + recovery)`.
    pub overhead: f64,
    pub lockup_events: u32,
    pub errored_runs: u64,
    pub final_state: ControllerState,
    pub final_voltage_mv: u32,
    /// Lowest usable supply step.
    pub min_voltage_mv: u32,
    /// Windows until the loop first reported `Settled`.
    pub windows_to_settle: Option<u32>,
    /// Error rate over windows that began in `Settled`.
    pub settled_rate: Option<f64>,
    /// Energy for the same useful work at the guardband-compliant voltage.
    pub baseline_energy_j: f64,
    pub baseline_voltage_mv: u32,
    /// False when the target exceeds every guardband and the baseline uses
    /// the highest supply step instead.
    pub baseline_within_guardband: bool,
    pub net_savings: f64,
    /// Savings over windows that began in `Settled`, against the baseline
    /// for the same useful work.
    pub steady_state_savings: Option<f64>,
    pub trace: Vec<WindowTrace>,
}

impl EpisodeReport {
    pub fn settled(&self) -> bool {
        self.windows_to_settle.is_some()
    }

    pub fn settled_at_floor(&self) -> bool {
        self.final_voltage_mv == self.min_voltage_mv
    }

    /// Settled rate inside `[lo, hi]`, or at most `hi` when the loop is
    /// clamped at the lowest usable step.
    pub fn rate_within_bounds(&self, config: &ControllerConfig) -> bool {
        self.settled_rate.is_some_and(|r| {
            r <= config.error_rate_hi && (r >= config.error_rate_lo || self.settled_at_floor())
        })
    }
}

/// Ascending supply steps whose lockup onset is at least `margin` above the
/// target frequency.
pub fn usable_steps(params: &DeviceModelParams, table: &GuardbandTable, config: &ControllerConfig) -> Result<Vec<u32>, ControllerError> {
    let mut steps = Vec::new();
    for row in table.rows() {
        let onset = params.onset_frequencies(row.voltage_mv)?;
        if onset.lockup_khz - f64::from(config.target_freq_khz) >= f64::from(config.safety_margin_khz) {
            steps.push(row.voltage_mv);
        }
    }
    steps.sort_unstable();
    if steps.is_empty() {
        return Err(ControllerError::InfeasibleTarget { target_khz: config.target_freq_khz, margin_khz: config.safety_margin_khz });
    }
    Ok(steps)
}

/// Runs one episode against the calibrated device model.
pub fn run_episode(
    params: &DeviceModelParams,
    table: &GuardbandTable,
    config: &ControllerConfig,
    episode_seed: u64,
    duration_windows: u32,
) -> Result<EpisodeReport, ControllerError> {
    let backend = SimulatedBackend::new(params.clone());
    run_episode_with(&backend, params, table, config, episode_seed, duration_windows)
}

/// Runs one episode, drawing run outcomes from `backend` and power from
/// `params`.
pub fn run_episode_with<B: Backend>(
    backend: &B,
    params: &DeviceModelParams,
    table: &GuardbandTable,
    config: &ControllerConfig,
    episode_seed: u64,
    duration_windows: u32,
) -> Result<EpisodeReport, ControllerError> {
    config.validate()?;
    let steps = usable_steps(params, table, config)?;
    let start = match config.initial_voltage_mv {
        None => steps.len() - 1,
        Some(v) => steps.iter().position(|&s| s == v).ok_or_else(|| {
            ControllerError::InvalidConfig(format!("initial_voltage_mv {v} is not a usable supply step {steps:?}"))
        })?,
    };
    let f = config.target_freq_khz;
    let f_hz = f64::from(f) * 1e3;
    let spec = PrngSpec::new(config.workload_seed, config.run_items).map_err(BackendError::from)?;
    let golden = GoldenCache::new().golden_value(&spec);
    let run_cycles = config.run_cycles();
    let timeout_cycles = (config.timeout_factor * run_cycles as f64).ceil() as u64;

    let mut state = ControllerState::new(start, steps.len());
    let mut trace = Vec::with_capacity(duration_windows as usize);
    let mut windows_to_settle = None;
    for window in 0..duration_windows {
        let voltage_mv = steps[state.step];
        let op = OperatingPoint::cluster(voltage_mv, f)?;
        let req = RunRequest::with_timeout_factor(op, Workload::Prng(spec), config.cycles_per_item, config.timeout_factor)?;
        let mut obs = WindowObservation::default();
        for run in 0..config.window_runs {
            let seed = derive(episode_seed, &[u64::from(window), u64::from(run)]);
            match backend.run(&req, seed)?.outcome {
                RunOutcome::Timeout => obs.lockups += 1,
                RunOutcome::Value(v) if v != golden => obs.errors += 1,
                RunOutcome::Value(_) => {}
            }
        }
        let useful_cycles = u64::from(config.window_runs) * run_cycles;
        let recovery_cycles = u64::from(obs.errors) * config.recovery_cycles()
            + u64::from(obs.lockups) * (timeout_cycles + config.recovery_cycles());
        let power_w = params.power(&op, DMR_ACTIVE_CORES)?;
        let energy_j = power_w * (useful_cycles + recovery_cycles) as f64 / f_hz;

        let status_before = state.status;
        let (next, action) = controller_step(&state, config, obs);
        if windows_to_settle.is_none() && next.status == Status::Settled {
            windows_to_settle = Some(window + 1);
        }
        trace.push(WindowTrace {
            window,
            voltage_mv,
            errors: obs.errors,
            lockups: obs.lockups,
            rate: f64::from(obs.errors) / f64::from(config.window_runs),
            status_before,
            action,
            status_after: next.status,
            useful_cycles,
            recovery_cycles,
            power_w,
            energy_j,
        });
        state = next;
    }

    let (baseline_voltage_mv, baseline_within_guardband) = match table.min_compliant_voltage(f, ClockDomain::Cluster) {
        Some(v) => (v, true),
        None => (table.max_voltage_mv(), false),
    };
    let baseline_power_w = params.power(&OperatingPoint::cluster(baseline_voltage_mv, f)?, DMR_ACTIVE_CORES)?;
    let baseline_for = |cycles: u64| baseline_power_w * cycles as f64 / f_hz;

    let energy_j: f64 = trace.iter().map(|w| w.energy_j).sum();
    let useful_cycles: u64 = trace.iter().map(|w| w.useful_cycles).sum();
    let recovery_cycles: u64 = trace.iter().map(|w| w.recovery_cycles).sum();
    let total = useful_cycles + recovery_cycles;
    let steady: Vec<&WindowTrace> = trace.iter().filter(|w| w.status_before == Status::Settled).collect();
    let steady_useful: u64 = steady.iter().map(|w| w.useful_cycles).sum();
    let (settled_rate, steady_state_savings) = if steady.is_empty() {
        (None, None)
    } else {
        let errors: u64 = steady.iter().map(|w| u64::from(w.errors)).sum();
        let steady_energy: f64 = steady.iter().map(|w| w.energy_j).sum();
        (
            Some(errors as f64 / (steady.len() as f64 * f64::from(config.window_runs))),
            Some(1.0 - steady_energy / baseline_for(steady_useful)),
        )
    };
    let baseline_energy_j = baseline_for(useful_cycles);
    Ok(EpisodeReport {
        seed: episode_seed,
        target_freq_khz: f,
        energy_j,
        useful_cycles,
        recovery_cycles,
        overhead: if total == 0 { 0.0 } else { recovery_cycles as f64 / total as f64 },
        lockup_events: trace.iter().map(|w| w.lockups).sum(),
        errored_runs: trace.iter().map(|w| u64::from(w.errors)).sum(),
        final_voltage_mv: steps[state.step],
        final_state: state,
        min_voltage_mv: steps[0],
        windows_to_settle,
        settled_rate,
        baseline_energy_j,
        baseline_voltage_mv,
        baseline_within_guardband,
        net_savings: if baseline_energy_j > 0.0 { 1.0 - energy_j / baseline_energy_j } else { 0.0 },
        steady_state_savings,
        trace,
    })
}

/// Runs `episodes` independent episodes in parallel; episode `i` uses seed
/// `derive(campaign_seed, [i])`. Reports are in episode order.
pub fn run_episodes(
    params: &DeviceModelParams,
    table: &GuardbandTable,
    config: &ControllerConfig,
    campaign_seed: u64,
    episodes: u32,
    duration_windows: u32,
) -> Result<Vec<EpisodeReport>, ControllerError> {
    let backend = SimulatedBackend::new(params.clone());
    (0..episodes)
        .into_par_iter()
        .map(|i| run_episode_with(&backend, params, table, config, derive(campaign_seed, &[u64::from(i)]), duration_windows))
        .collect()
}

pub const EPISODE_HEADER: [&str; 17] = [
    "episode",
    "seed",
    "target_freq_khz",
    "energy_j",
    "useful_cycles",
    "recovery_cycles",
    "overhead",
    "lockup_events",
    "errored_runs",
    "final_voltage_mv",
    "final_status",
    "windows_to_settle",
    "settled_rate",
    "baseline_voltage_mv",
    "baseline_within_guardband",
    "net_savings",
    "steady_state_savings",
];

pub fn write_episodes_csv<W: Write>(writer: W, reports: &[EpisodeReport]) -> std::io::Result<()> {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EPISODE_HEADER)?;
    for (i, r) in reports.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.seed.to_string(),
            r.target_freq_khz.to_string(),
            r.energy_j.to_string(),
            r.useful_cycles.to_string(),
            r.recovery_cycles.to_string(),
            r.overhead.to_string(),
            r.lockup_events.to_string(),
            r.errored_runs.to_string(),
            r.final_voltage_mv.to_string(),
            r.final_state.status.as_str().to_string(),
            opt(r.windows_to_settle.map(|x| x.to_string())),
            opt(r.settled_rate.map(|x| x.to_string())),
            r.baseline_voltage_mv.to_string(),
            r.baseline_within_guardband.to_string(),
            r.net_savings.to_string(),
            opt(r.steady_state_savings.map(|x| x.to_string())),
        ])?;
    }
    w.flush()
}

pub const TRACE_HEADER: [&str; 11] = [
    "episode",
    "window",
    "voltage_mv",
    "errors",
    "lockups",
    "rate",
    "action",
    "status",
    "useful_cycles",
    "recovery_cycles",
    "energy_j",
];

pub fn write_trace_csv<W: Write>(writer: W, reports: &[EpisodeReport]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for (i, r) in reports.iter().enumerate() {
        for t in &r.trace {
            w.write_record([
                i.to_string(),
                t.window.to_string(),
                t.voltage_mv.to_string(),
                t.errors.to_string(),
                t.lockups.to_string(),
                t.rate.to_string(),
                t.action.as_str().to_string(),
                t.status_after.as_str().to_string(),
                t.useful_cycles.to_string(),
                t.recovery_cycles.to_string(),
                t.energy_j.to_string(),
            ])?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{calibrate, CalibrationTargets};
    use approx::assert_relative_eq;

    fn calibrated() -> DeviceModelParams {
        calibrate(&GuardbandTable::datasheet(), &CalibrationTargets::default()).unwrap().params
    }

    fn obs(errors: u32) -> WindowObservation {
        WindowObservation { errors, lockups: 0 }
    }

    #[test]
    fn decision_examples() {
        let cfg = ControllerConfig::default();
        let top = ControllerState::new(4, 5);
        assert_eq!(controller_step(&top, &cfg, obs(0)).1, Action::StepDown);
        assert_eq!(controller_step(&top, &cfg, obs(10)).1, Action::Hold); // clamp at the top
        let mid = ControllerState::new(2, 5);
        assert_eq!(controller_step(&mid, &cfg, obs(10)).1, Action::StepUp); // 0.05 > hi
        let bottom = ControllerState::new(0, 5);
        assert_eq!(controller_step(&bottom, &cfg, obs(0)).1, Action::Hold);
        assert_eq!(controller_step(&mid, &cfg, obs(1)).1, Action::Hold); // 0.005 within bounds
    }

    #[test]
    fn lockup_forces_safety_hold() {
        let cfg = ControllerConfig::default();
        let s = ControllerState::new(1, 5);
        let (s, a) = controller_step(&s, &cfg, WindowObservation { errors: 0, lockups: 1 });
        assert_eq!((a, s.status, s.step), (Action::StepUp, Status::SafetyHold, 2));
        let (s, a) = controller_step(&s, &cfg, obs(0));
        assert_eq!((a, s.status), (Action::Hold, Status::SafetyHold));
        let (s, _) = controller_step(&s, &cfg, obs(0));
        let (s, _) = controller_step(&s, &cfg, obs(0));
        assert_eq!(s.status, Status::Settled);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn error_free_limit_descends_to_minimum() {
        let mut params = calibrated();
        params.k_err *= 100.0;
        let cfg = ControllerConfig { window_runs: 20, run_items: 100, ..ControllerConfig::default() };
        let r = run_episode(&params, &GuardbandTable::datasheet(), &cfg, 5, 12).unwrap();
        assert_eq!(r.final_voltage_mv, 1000);
        assert_eq!(r.overhead, 0.0);
        assert_eq!(r.windows_to_settle, Some(4 + 3));
        assert!(r.rate_within_bounds(&cfg));
    }

    #[test]
    fn zero_recovery_cost_matches_iso_performance_savings() {
        let params = calibrated();
        let table = GuardbandTable::datasheet();
        let cfg = ControllerConfig { window_runs: 20, run_items: 100, recovery_cost_cycles: Some(0), ..ControllerConfig::default() };
        let r = run_episode(&params, &table, &cfg, 1, 12).unwrap();
        let p = |v| params.power(&OperatingPoint::cluster(v, 170_000).unwrap(), DMR_ACTIVE_CORES).unwrap();
        assert_relative_eq!(r.steady_state_savings.unwrap(), 1.0 - p(r.final_voltage_mv) / p(1200), max_relative = 1e-12);
    }

    #[test]
    fn infeasible_target() {
        let cfg = ControllerConfig { target_freq_khz: 500_000, ..ControllerConfig::default() };
        assert!(matches!(
            run_episode(&calibrated(), &GuardbandTable::datasheet(), &cfg, 1, 1),
            Err(ControllerError::InfeasibleTarget { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let bad = ControllerConfig { error_rate_lo: 0.02, ..ControllerConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ControllerConfig { window_runs: 9, ..ControllerConfig::default() };
        assert!(bad.validate().is_err());
        assert_eq!(ControllerConfig::default().recovery_cycles(), 2 * 50_000 * 140);
    }
}
