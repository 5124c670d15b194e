//! Operating envelope, device failure/power model and its calibration.

mod calibrate;
mod device;
mod guardband;

pub use calibrate::{calibrate, Calibration, CalibrationTargets, OnsetFit};
pub use device::{energy, logistic, DeviceModelParams, OnsetFrequencies, OutcomeProbabilities};
pub use guardband::{ClockDomain, GuardbandRow, GuardbandTable, OperatingPoint, SUPPLY_STEPS_MV};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unsupported supply voltage {0} mV")]
    UnsupportedVoltage(u32),
    #[error("frequency must be positive")]
    ZeroFrequency,
    #[error("voltage {voltage_mv} mV is not above the threshold voltage {v_th_mv} mV")]
    DegenerateVoltage { voltage_mv: u32, v_th_mv: f64 },
    #[error("active core count {0} outside 1..=9")]
    InvalidCoreCount(u32),
    #[error("invalid guardband table: {0}")]
    InvalidTable(String),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("invalid calibration targets: {0}")]
    InvalidTargets(String),
    #[error("calibration diverged: max relative residual {residual:.4} exceeds {tolerance:.4}")]
    CalibrationDiverged { residual: f64, tolerance: f64 },
}
