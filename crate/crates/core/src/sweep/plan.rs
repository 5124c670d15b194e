use serde::{Deserialize, Serialize};

use super::SweepError;
use crate::backend::DEFAULT_TIMEOUT_FACTOR;
use crate::model::SUPPLY_STEPS_MV;
use crate::workloads::DEFAULT_CYCLES_PER_ITEM;

/// When a voltage's frequency sweep ends before `ceiling_khz`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// After the first frequency step with any lockup.
    StopOnFirstLockup,
    /// After the first frequency step where every run locks up.
    StopOnUnresponsive,
    /// Never; sweep up to the ceiling.
    FixedCeiling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    pub voltages_mv: Vec<u32>,
    pub start_freq_khz: u32,
    pub freq_step_khz: u32,
    /// Last frequency considered, inclusive.
    pub ceiling_khz: u32,
    pub sizes: Vec<u64>,
    pub repetitions: u32,
    pub stop_rule: StopRule,
    pub workload_seed: u64,
    /// Host-side cost estimate used to size run timeouts.
    pub cycles_per_item: u64,
    pub timeout_factor: f64,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            voltages_mv: SUPPLY_STEPS_MV.to_vec(),
            start_freq_khz: 200_000,
            freq_step_khz: 2_000,
            ceiling_khz: 600_000,
            sizes: (1..=20).map(|i| i * 50_000).collect(),
            repetitions: 10,
            stop_rule: StopRule::StopOnUnresponsive,
            workload_seed: 1,
            cycles_per_item: DEFAULT_CYCLES_PER_ITEM,
            timeout_factor: DEFAULT_TIMEOUT_FACTOR,
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.voltages_mv.is_empty() {
            return Err(SweepError::EmptyPlan("voltages_mv"));
        }
        if self.sizes.is_empty() {
            return Err(SweepError::EmptyPlan("sizes"));
        }
        if self.repetitions == 0 {
            return Err(SweepError::EmptyPlan("repetitions"));
        }
        if self.start_freq_khz > self.ceiling_khz {
            return Err(SweepError::EmptyPlan("frequencies"));
        }
        let invalid = |m: String| Err(SweepError::InvalidPlan(m));
        if let Some(v) = self.voltages_mv.iter().find(|v| !SUPPLY_STEPS_MV.contains(v)) {
            return invalid(format!("voltage {v} mV is not a supply step"));
        }
        if self.freq_step_khz == 0 || self.start_freq_khz == 0 {
            return invalid("frequency start and step must be positive".into());
        }
        if self.sizes.contains(&0) {
            return invalid("problem sizes must be positive".into());
        }
        if self.workload_seed == 0 {
            return invalid("workload_seed must be non-zero".into());
        }
        if self.cycles_per_item == 0 {
            return invalid("cycles_per_item must be positive".into());
        }
        if !(self.timeout_factor > 1.0) {
            return invalid("timeout_factor must exceed 1".into());
        }
        Ok(())
    }

    pub(crate) fn sorted_voltages(&self) -> Vec<u32> {
        let mut v = self.voltages_mv.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub(crate) fn sorted_sizes(&self) -> Vec<u64> {
        let mut s = self.sizes.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// `start, start + step, ...` up to and including `ceiling`.
pub fn frequency_grid(start_khz: u32, step_khz: u32, ceiling_khz: u32) -> Vec<u32> {
    if step_khz == 0 {
        return Vec::new();
    }
    (start_khz..=ceiling_khz).step_by(step_khz as usize).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PlanPoint {
    pub voltage_mv: u32,
    pub freq_khz: u32,
    pub n_items: u64,
    pub repetition: u32,
}

/// Every point the plan could execute, in (voltage, frequency, size,
/// repetition) order. Stop rules may truncate the frequency axis at run time.
pub fn enumerate_plan(plan: &SweepPlan) -> Result<Vec<PlanPoint>, SweepError> {
    plan.validate()?;
    let freqs = frequency_grid(plan.start_freq_khz, plan.freq_step_khz, plan.ceiling_khz);
    let sizes = plan.sorted_sizes();
    let mut points = Vec::new();
    for voltage_mv in plan.sorted_voltages() {
        for &freq_khz in &freqs {
            for &n_items in &sizes {
                for repetition in 0..plan.repetitions {
                    points.push(PlanPoint { voltage_mv, freq_khz, n_items, repetition });
                }
            }
        }
    }
    Ok(points)
}
