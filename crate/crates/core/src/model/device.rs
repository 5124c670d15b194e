use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ModelError, OperatingPoint};

/// Parameters of the device model.
///
/// Timing failures follow the alpha-power critical-frequency law
/// `f = k * (V - V_th)^alpha / V` (kHz, with V in mV), wrapped in a logistic
/// transition per attempt. Lockup shares the law with its own scale constant
/// plus a linear offset `slope * (crossover - V)`, which puts lockups after
/// errors below the crossover voltage and before them above it.
///
/// Power is `c_eff * n * V^2 * f + p_static_coeff * V` (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceModelParams {
    pub v_th_mv: f64,
    pub alpha: f64,
    pub k_err: f64,
    pub k_lock: f64,
    pub w_err_khz: f64,
    pub w_lock_khz: f64,
    pub crossover_mv: f64,
    /// Lockup onset offset in kHz per mV below `crossover_mv`.
    pub lockup_offset_slope_khz_per_mv: f64,
    /// J per V^2 per cycle per active core.
    pub c_eff: f64,
    /// W per V.
    pub p_static_coeff: f64,
    pub cycles_per_item: u64,
    /// Effective-supply correction per voltage step (mV), applied to the power
    /// model only. Empty unless explicitly configured.
    #[serde(default)]
    pub supply_offset_mv: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetFrequencies {
    /// Logistic midpoint of the per-run error probability.
    pub error_khz: f64,
    /// Logistic midpoint of the per-run lockup probability.
    pub lockup_khz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeProbabilities {
    pub p_error: f64,
    pub p_lockup: f64,
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn energy(avg_power_w: f64, elapsed_s: f64) -> f64 {
    avg_power_w * elapsed_s
}

impl DeviceModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParams(m.to_string()));
        if !(self.v_th_mv < 1000.0) || !self.v_th_mv.is_finite() {
            return bad("v_th_mv must be below 1000 mV");
        }
        if !(1.0..=2.0).contains(&self.alpha) {
            return bad("alpha must lie in [1, 2]");
        }
        for (name, v) in [
            ("k_err", self.k_err),
            ("k_lock", self.k_lock),
            ("w_err_khz", self.w_err_khz),
            ("w_lock_khz", self.w_lock_khz),
            ("c_eff", self.c_eff),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.p_static_coeff >= 0.0) {
            return bad("p_static_coeff must be non-negative");
        }
        if self.cycles_per_item == 0 {
            return bad("cycles_per_item must be positive");
        }
        Ok(())
    }

    fn critical_khz(&self, k: f64, voltage_mv: u32) -> Result<f64, ModelError> {
        let v = f64::from(voltage_mv);
        if v <= self.v_th_mv {
            return Err(ModelError::DegenerateVoltage { voltage_mv, v_th_mv: self.v_th_mv });
        }
        Ok(k * (v - self.v_th_mv).powf(self.alpha) / v)
    }

    /// Lockup onset offset relative to the alpha-power term.
    pub fn lockup_offset_khz(&self, voltage_mv: u32) -> f64 {
        self.lockup_offset_slope_khz_per_mv * (self.crossover_mv - f64::from(voltage_mv))
    }

    pub fn onset_frequencies(&self, voltage_mv: u32) -> Result<OnsetFrequencies, ModelError> {
        Ok(OnsetFrequencies {
            error_khz: self.critical_khz(self.k_err, voltage_mv)?,
            lockup_khz: self.critical_khz(self.k_lock, voltage_mv)? + self.lockup_offset_khz(voltage_mv),
        })
    }

    /// Per-run outcome probabilities. Independent of problem size.
    pub fn outcome_probabilities(&self, op: &OperatingPoint) -> Result<OutcomeProbabilities, ModelError> {
        let onset = self.onset_frequencies(op.voltage_mv())?;
        let f = f64::from(op.freq_khz());
        Ok(OutcomeProbabilities {
            p_error: logistic((f - onset.error_khz) / self.w_err_khz),
            p_lockup: logistic((f - onset.lockup_khz) / self.w_lock_khz),
        })
    }

    /// Frequency at which the per-run error probability equals `p`.
    pub fn error_frequency_at(&self, voltage_mv: u32, p: f64) -> Result<f64, ModelError> {
        let onset = self.onset_frequencies(voltage_mv)?;
        Ok(onset.error_khz + self.w_err_khz * (p / (1.0 - p)).ln())
    }

    fn effective_voltage_v(&self, op: &OperatingPoint) -> f64 {
        let offset = self.supply_offset_mv.get(&op.voltage_mv()).copied().unwrap_or(0.0);
        (f64::from(op.voltage_mv()) + offset) / 1000.0
    }

    pub fn power(&self, op: &OperatingPoint, n_active_cores: u32) -> Result<f64, ModelError> {
        if !(1..=9).contains(&n_active_cores) {
            return Err(ModelError::InvalidCoreCount(n_active_cores));
        }
        let v = self.effective_voltage_v(op);
        Ok(self.c_eff * f64::from(n_active_cores) * v * v * op.freq_hz() + self.p_static_coeff * v)
    }

    /// Energy for `cycles` wall-clock cycles at `op`.
    pub fn energy_for_cycles(&self, op: &OperatingPoint, n_active_cores: u32, cycles: u64) -> Result<f64, ModelError> {
        let p = self.power(op, n_active_cores)?;
        Ok(energy(p, cycles as f64 / op.freq_hz()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> DeviceModelParams {
        DeviceModelParams {
            v_th_mv: 700.0,
            alpha: 1.3,
            k_err: 4.0e4,
            k_lock: 4.1e4,
            w_err_khz: 2000.0,
            w_lock_khz: 2000.0,
            crossover_mv: 1100.0,
            lockup_offset_slope_khz_per_mv: 40.0,
            c_eff: 3e-11,
            p_static_coeff: 0.01,
            cycles_per_item: 140,
            supply_offset_mv: BTreeMap::new(),
        }
    }

    #[test]
    fn onset_increases_with_voltage() {
        let p = params();
        let lo = p.onset_frequencies(1000).unwrap();
        let hi = p.onset_frequencies(1200).unwrap();
        assert!(hi.error_khz > lo.error_khz);
        assert!(hi.lockup_khz > lo.lockup_khz);
    }

    #[test]
    fn degenerate_voltage() {
        let mut p = params();
        p.v_th_mv = 1000.0;
        assert!(matches!(p.onset_frequencies(1000), Err(ModelError::DegenerateVoltage { .. })));
        assert!(p.onset_frequencies(1050).is_ok());
    }

    #[test]
    fn midpoint_is_half() {
        let p = params();
        let onset = p.onset_frequencies(1000).unwrap();
        // Round-trip through the quantile function lands on the midpoint.
        assert_relative_eq!(p.error_frequency_at(1000, 0.5).unwrap(), onset.error_khz);
        assert_eq!(logistic(0.0), 0.5);
    }

    #[test]
    fn logistic_is_stable_in_the_tails() {
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
        assert!(logistic(-30.0) > 0.0);
    }

    #[test]
    fn power_scaling() {
        let p = params();
        let a = OperatingPoint::cluster(1000, 100_000).unwrap();
        let b = OperatingPoint::cluster(1000, 200_000).unwrap();
        let static_w = p.p_static_coeff * 1.0;
        assert_relative_eq!(
            p.power(&b, 8).unwrap() - static_w,
            2.0 * (p.power(&a, 8).unwrap() - static_w),
            max_relative = 1e-12
        );

        let mut dynamic_only = params();
        dynamic_only.p_static_coeff = 0.0;
        let hi = OperatingPoint::cluster(1200, 100_000).unwrap();
        assert_relative_eq!(
            dynamic_only.power(&hi, 4).unwrap() / dynamic_only.power(&a, 4).unwrap(),
            1.44,
            max_relative = 1e-12
        );
    }

    #[test]
    fn core_count_bounds() {
        let p = params();
        let op = OperatingPoint::cluster(1000, 100_000).unwrap();
        assert_eq!(p.power(&op, 0), Err(ModelError::InvalidCoreCount(0)));
        assert_eq!(p.power(&op, 10), Err(ModelError::InvalidCoreCount(10)));
        assert!(p.power(&op, 9).is_ok());
    }

    #[test]
    fn energy_product() {
        assert_relative_eq!(energy(0.1, 2.0), 0.2);
        assert_eq!(energy(0.0, 123.0), 0.0);
    }

    #[test]
    fn supply_offset_hook_affects_power_only() {
        let mut p = params();
        let op = OperatingPoint::cluster(1150, 100_000).unwrap();
        let before = p.power(&op, 2).unwrap();
        let onset_before = p.onset_frequencies(1150).unwrap();
        p.supply_offset_mv.insert(1150, 25.0);
        assert!(p.power(&op, 2).unwrap() > before);
        assert_eq!(p.onset_frequencies(1150).unwrap(), onset_before);
    }

    #[test]
    fn validation() {
        assert!(params().validate().is_ok());
        let mut p = params();
        p.alpha = 2.5;
        assert!(p.validate().is_err());
        let mut p = params();
        p.v_th_mv = 1000.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.w_err_khz = 0.0;
        assert!(p.validate().is_err());
    }
}
