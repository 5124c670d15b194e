use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{logistic, ClockDomain, DeviceModelParams, GuardbandTable, ModelError, OperatingPoint};

/// What the calibrated model must reproduce.
///
/// Headroom multipliers are interpolated linearly in voltage between the
/// lowest and highest table step and apply to the *failure edge*: the
/// frequency `edge_margin_widths` logistic widths below the error midpoint,
/// where a campaign starts observing errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationTargets {
    pub headroom_at_min_voltage: f64,
    pub headroom_at_max_voltage: f64,
    pub edge_margin_widths: f64,
    pub w_err_khz: f64,
    pub w_lock_khz: f64,
    pub crossover_mv: f64,
    /// Magnitude of the lockup onset offset at the table's extreme voltages.
    pub lockup_offset_khz: f64,
    pub savings_target: f64,
    pub savings_active_cores: u32,
    pub c_eff: f64,
    pub cycles_per_item: u64,
    pub fit_tolerance: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            headroom_at_min_voltage: 2.5,
            headroom_at_max_voltage: 2.0,
            edge_margin_widths: 4.0,
            w_err_khz: 2000.0,
            w_lock_khz: 2000.0,
            crossover_mv: 1100.0,
            lockup_offset_khz: 4000.0,
            savings_target: 0.27,
            savings_active_cores: 9,
            c_eff: 3.0e-11,
            cycles_per_item: crate::workloads::DEFAULT_CYCLES_PER_ITEM,
            fit_tolerance: 0.015,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OnsetFit {
    pub voltage_mv: u32,
    pub guardband_khz: u32,
    pub headroom: f64,
    pub target_edge_khz: f64,
    pub fitted_edge_khz: f64,
    pub error_midpoint_khz: f64,
    pub lockup_midpoint_khz: f64,
    pub relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub params: DeviceModelParams,
    pub onsets: Vec<OnsetFit>,
    pub max_relative_residual: f64,
    pub reference_freq_khz: u32,
    pub reference_low_mv: u32,
    pub reference_high_mv: u32,
    pub predicted_savings: f64,
    /// Per-run error probability at the fitted failure edge.
    pub edge_probability: f64,
}

impl CalibrationTargets {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidTargets(m.to_string()));
        if !(self.headroom_at_min_voltage > 1.0 && self.headroom_at_max_voltage > 1.0) {
            return bad("headroom multipliers must exceed 1");
        }
        if !(self.w_err_khz > 0.0 && self.w_lock_khz > 0.0) {
            return bad("logistic widths must be positive");
        }
        if !(self.edge_margin_widths >= 0.0) {
            return bad("edge_margin_widths must be non-negative");
        }
        if !(self.lockup_offset_khz >= 0.0) {
            return bad("lockup_offset_khz must be non-negative");
        }
        if !(0.0..1.0).contains(&self.savings_target) {
            return bad("savings_target must lie in [0, 1)");
        }
        if !(1..=9).contains(&self.savings_active_cores) {
            return bad("savings_active_cores must lie in 1..=9");
        }
        if !(self.c_eff > 0.0) || self.cycles_per_item == 0 {
            return bad("c_eff and cycles_per_item must be positive");
        }
        if !(self.fit_tolerance > 0.0) {
            return bad("fit_tolerance must be positive");
        }
        Ok(())
    }

    fn headroom(&self, table: &GuardbandTable, voltage_mv: u32) -> f64 {
        let lo = f64::from(table.min_voltage_mv());
        let hi = f64::from(table.max_voltage_mv());
        let t = (f64::from(voltage_mv) - lo) / (hi - lo);
        self.headroom_at_min_voltage + t * (self.headroom_at_max_voltage - self.headroom_at_min_voltage)
    }
}

struct FitPoint {
    voltage: f64,
    target: f64,
}

/// Optimal scale for fixed (v_th, alpha) and the resulting sum of squared
/// relative residuals on the edge frequencies.
fn profile(points: &[FitPoint], margin: f64, v_th: f64, alpha: f64) -> (f64, f64) {
    let (mut ab, mut aa) = (0.0, 0.0);
    for p in points {
        let a = (p.voltage - v_th).powf(alpha) / p.voltage / p.target;
        let b = (p.target + margin) / p.target;
        ab += a * b;
        aa += a * a;
    }
    let k = ab / aa;
    let sse = points
        .iter()
        .map(|p| {
            let r = (k * (p.voltage - v_th).powf(alpha) / p.voltage - margin - p.target) / p.target;
            r * r
        })
        .sum();
    (k, sse)
}

fn fit_alpha_power(points: &[FitPoint], margin: f64, v_th_max: f64) -> (f64, f64, f64) {
    let (alpha_lo, alpha_hi) = (1.0, 2.0);
    let mut best = (f64::INFINITY, 0.0, 1.0);
    for i in 0..=100 {
        let v_th = v_th_max * f64::from(i) / 100.0;
        for j in 0..=20 {
            let alpha = alpha_lo + (alpha_hi - alpha_lo) * f64::from(j) / 20.0;
            let (_, sse) = profile(points, margin, v_th, alpha);
            if sse < best.0 {
                best = (sse, v_th, alpha);
            }
        }
    }
    // Pattern search refinement, clamped to the feasible box.
    let (mut step_v, mut step_a) = (v_th_max / 100.0, 0.05);
    while step_v > 1e-6 {
        let mut improved = false;
        for (dv, da) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
            let v_th = (best.1 + dv * step_v).clamp(0.0, v_th_max);
            let alpha = (best.2 + da * step_a).clamp(alpha_lo, alpha_hi);
            let (_, sse) = profile(points, margin, v_th, alpha);
            if sse < best.0 {
                best = (sse, v_th, alpha);
                improved = true;
            }
        }
        if !improved {
            step_v *= 0.5;
            step_a *= 0.5;
        }
    }
    let (k, _) = profile(points, margin, best.1, best.2);
    (best.1, best.2, k)
}

/// Fits the device model to the guardband table and calibration targets.
pub fn calibrate(table: &GuardbandTable, targets: &CalibrationTargets) -> Result<Calibration, ModelError> {
    targets.validate()?;
    let v_min = table.min_voltage_mv();
    let v_max = table.max_voltage_mv();
    let crossover = targets.crossover_mv;
    if !(crossover > f64::from(v_min) && crossover < f64::from(v_max)) {
        return Err(ModelError::InvalidTargets(format!(
            "crossover_mv {crossover} must lie strictly between {v_min} and {v_max}"
        )));
    }

    let points: Vec<FitPoint> = table
        .rows()
        .iter()
        .map(|r| FitPoint {
            voltage: f64::from(r.voltage_mv),
            target: targets.headroom(table, r.voltage_mv) * f64::from(r.cluster_max_khz),
        })
        .collect();
    let margin = targets.edge_margin_widths * targets.w_err_khz;
    let (v_th, alpha, k) = fit_alpha_power(&points, margin, f64::from(v_min) - 1.0);

    let extreme = (crossover - f64::from(v_min)).max(f64::from(v_max) - crossover);
    let mut params = DeviceModelParams {
        v_th_mv: v_th,
        alpha,
        k_err: k,
        k_lock: k,
        w_err_khz: targets.w_err_khz,
        w_lock_khz: targets.w_lock_khz,
        crossover_mv: crossover,
        lockup_offset_slope_khz_per_mv: targets.lockup_offset_khz / extreme,
        c_eff: targets.c_eff,
        p_static_coeff: 0.0,
        cycles_per_item: targets.cycles_per_item,
        supply_offset_mv: BTreeMap::new(),
    };

    let mut onsets = Vec::with_capacity(points.len());
    let mut max_residual: f64 = 0.0;
    for row in table.rows().iter().rev() {
        let onset = params.onset_frequencies(row.voltage_mv)?;
        let headroom = targets.headroom(table, row.voltage_mv);
        let target = headroom * f64::from(row.cluster_max_khz);
        let edge = onset.error_khz - margin;
        let residual = (edge - target) / target;
        max_residual = max_residual.max(residual.abs());
        onsets.push(OnsetFit {
            voltage_mv: row.voltage_mv,
            guardband_khz: row.cluster_max_khz,
            headroom,
            target_edge_khz: target,
            fitted_edge_khz: edge,
            error_midpoint_khz: onset.error_khz,
            lockup_midpoint_khz: onset.lockup_khz,
            relative_residual: residual,
        });
    }
    if max_residual > targets.fit_tolerance {
        return Err(ModelError::CalibrationDiverged { residual: max_residual, tolerance: targets.fit_tolerance });
    }

    // Static coefficient from the iso-performance savings at the highest
    // guardband frequency: lowest supply step versus highest.
    let reference_freq_khz = table.max_freq_khz(v_max, ClockDomain::Cluster)?;
    let f_hz = f64::from(reference_freq_khz) * 1000.0;
    let (v_lo, v_hi) = (f64::from(v_min) / 1000.0, f64::from(v_max) / 1000.0);
    let keep = 1.0 - targets.savings_target;
    let dynamic = targets.c_eff * f64::from(targets.savings_active_cores) * f_hz;
    let denom = keep * v_hi - v_lo;
    let mut p_static = dynamic * (v_lo * v_lo - keep * v_hi * v_hi) / denom;
    if p_static.abs() < 1e-12 * dynamic {
        p_static = 0.0;
    }
    if !(p_static >= 0.0) || !p_static.is_finite() {
        return Err(ModelError::InvalidTargets(format!(
            "savings target {} exceeds the pure-dynamic limit {:.4}",
            targets.savings_target,
            1.0 - (v_lo / v_hi).powi(2)
        )));
    }
    params.p_static_coeff = p_static;
    params.validate()?;

    let lo = OperatingPoint::cluster(v_min, reference_freq_khz)?;
    let hi = OperatingPoint::cluster(v_max, reference_freq_khz)?;
    let n = targets.savings_active_cores;
    let predicted_savings = 1.0 - params.power(&lo, n)? / params.power(&hi, n)?;

    Ok(Calibration {
        params,
        onsets,
        max_relative_residual: max_residual,
        reference_freq_khz,
        reference_low_mv: v_min,
        reference_high_mv: v_max,
        predicted_savings,
        edge_probability: logistic(-targets.edge_margin_widths),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_calibration_reproduces_headroom() {
        let cal = calibrate(&GuardbandTable::datasheet(), &CalibrationTargets::default()).unwrap();
        let at_1v = &cal.onsets[0];
        assert_eq!(at_1v.voltage_mv, 1000);
        assert_relative_eq!(at_1v.target_edge_khz, 217_500.0);
        assert!((at_1v.fitted_edge_khz / 217_500.0 - 1.0).abs() < 0.01, "{at_1v:?}");
        let at_max = cal.onsets.last().unwrap();
        assert_relative_eq!(at_max.target_edge_khz, 340_000.0);
        assert!(cal.max_relative_residual <= 0.015);
    }

    #[test]
    fn default_calibration_hits_savings_target() {
        let cal = calibrate(&GuardbandTable::datasheet(), &CalibrationTargets::default()).unwrap();
        assert_eq!(cal.reference_freq_khz, 170_000);
        assert!((cal.predicted_savings - 0.27).abs() < 0.005);
        assert!(cal.params.p_static_coeff > 0.0);
    }

    #[test]
    fn crossover_sign() {
        let cal = calibrate(&GuardbandTable::datasheet(), &CalibrationTargets::default()).unwrap();
        assert!(cal.params.lockup_offset_khz(1000) > 0.0);
        assert!(cal.params.lockup_offset_khz(1200) < 0.0);
        assert_eq!(cal.params.lockup_offset_khz(1100), 0.0);
    }

    #[test]
    fn pure_dynamic_limit_gives_zero_static_power() {
        let targets = CalibrationTargets { savings_target: 1.0 - (1.0f64 / 1.2).powi(2), ..Default::default() };
        let cal = calibrate(&GuardbandTable::datasheet(), &targets).unwrap();
        assert!(cal.params.p_static_coeff.abs() < 1e-12);
    }

    #[test]
    fn savings_beyond_dynamic_limit_rejected() {
        let targets = CalibrationTargets { savings_target: 0.4, ..Default::default() };
        assert!(matches!(
            calibrate(&GuardbandTable::datasheet(), &targets),
            Err(ModelError::InvalidTargets(_))
        ));
    }

    #[test]
    fn tight_tolerance_diverges() {
        let targets = CalibrationTargets { fit_tolerance: 1e-4, ..Default::default() };
        assert!(matches!(
            calibrate(&GuardbandTable::datasheet(), &targets),
            Err(ModelError::CalibrationDiverged { .. })
        ));
    }

    #[test]
    fn crossover_outside_range_rejected() {
        let targets = CalibrationTargets { crossover_mv: 1250.0, ..Default::default() };
        assert!(calibrate(&GuardbandTable::datasheet(), &targets).is_err());
    }

    #[test]
    fn deterministic() {
        let a = calibrate(&GuardbandTable::datasheet(), &CalibrationTargets::default()).unwrap();
        let b = calibrate(&GuardbandTable::datasheet(), &CalibrationTargets::default()).unwrap();
        assert_eq!(a, b);
    }
}
