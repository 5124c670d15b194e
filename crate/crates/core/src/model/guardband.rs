use serde::{Deserialize, Serialize};

use super::ModelError;

/// Voltages the on-board DC-DC converter can produce, ascending.
pub const SUPPLY_STEPS_MV: [u32; 5] = [1000, 1050, 1100, 1150, 1200];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClockDomain {
    FabricController,
    Cluster,
}

/// A (voltage, frequency, clock domain) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OperatingPoint {
    voltage_mv: u32,
    freq_khz: u32,
    domain: ClockDomain,
}

impl OperatingPoint {
    pub fn new(voltage_mv: u32, freq_khz: u32, domain: ClockDomain) -> Result<Self, ModelError> {
        if !SUPPLY_STEPS_MV.contains(&voltage_mv) {
            return Err(ModelError::UnsupportedVoltage(voltage_mv));
        }
        if freq_khz == 0 {
            return Err(ModelError::ZeroFrequency);
        }
        Ok(Self { voltage_mv, freq_khz, domain })
    }

    pub fn cluster(voltage_mv: u32, freq_khz: u32) -> Result<Self, ModelError> {
        Self::new(voltage_mv, freq_khz, ClockDomain::Cluster)
    }

    pub fn voltage_mv(&self) -> u32 {
        self.voltage_mv
    }

    pub fn freq_khz(&self) -> u32 {
        self.freq_khz
    }

    pub fn domain(&self) -> ClockDomain {
        self.domain
    }

    pub fn voltage_v(&self) -> f64 {
        f64::from(self.voltage_mv) / 1000.0
    }

    pub fn freq_hz(&self) -> f64 {
        f64::from(self.freq_khz) * 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardbandRow {
    pub voltage_mv: u32,
    pub fc_max_khz: u32,
    pub cluster_max_khz: u32,
}

/// Datasheet maximum frequency per supply voltage and clock domain.
///
/// Rows are kept in descending voltage order, one per supply step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GuardbandTable {
    rows: Vec<GuardbandRow>,
}

impl GuardbandTable {
    /// GAP8 datasheet envelope.
    pub fn datasheet() -> Self {
        let rows = [
            (1200, 250_000, 170_000),
            (1150, 225_000, 149_000),
            (1100, 200_000, 129_000),
            (1050, 175_000, 108_000),
            (1000, 150_000, 87_000),
        ]
        .into_iter()
        .map(|(voltage_mv, fc_max_khz, cluster_max_khz)| GuardbandRow {
            voltage_mv,
            fc_max_khz,
            cluster_max_khz,
        })
        .collect();
        Self { rows }
    }

    /// Builds a table from arbitrary rows; rows are sorted by descending
    /// voltage before validation.
    pub fn from_rows(mut rows: Vec<GuardbandRow>) -> Result<Self, ModelError> {
        rows.sort_by_key(|r| std::cmp::Reverse(r.voltage_mv));
        if rows.len() != SUPPLY_STEPS_MV.len() {
            return Err(ModelError::InvalidTable(format!(
                "expected {} rows, got {}",
                SUPPLY_STEPS_MV.len(),
                rows.len()
            )));
        }
        for (row, step) in rows.iter().zip(SUPPLY_STEPS_MV.iter().rev()) {
            if row.voltage_mv != *step {
                return Err(ModelError::InvalidTable(format!(
                    "row voltage {} mV does not match supply step {} mV",
                    row.voltage_mv, step
                )));
            }
        }
        for pair in rows.windows(2) {
            let (hi, lo) = (&pair[0], &pair[1]);
            if hi.fc_max_khz <= lo.fc_max_khz || hi.cluster_max_khz <= lo.cluster_max_khz {
                return Err(ModelError::InvalidTable(format!(
                    "frequencies must strictly increase with voltage ({} mV vs {} mV)",
                    lo.voltage_mv, hi.voltage_mv
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[GuardbandRow] {
        &self.rows
    }

    pub fn row(&self, voltage_mv: u32) -> Result<&GuardbandRow, ModelError> {
        self.rows
            .iter()
            .find(|r| r.voltage_mv == voltage_mv)
            .ok_or(ModelError::UnsupportedVoltage(voltage_mv))
    }

    pub fn max_freq_khz(&self, voltage_mv: u32, domain: ClockDomain) -> Result<u32, ModelError> {
        let row = self.row(voltage_mv)?;
        Ok(match domain {
            ClockDomain::FabricController => row.fc_max_khz,
            ClockDomain::Cluster => row.cluster_max_khz,
        })
    }

    pub fn within_guardband(&self, op: &OperatingPoint) -> Result<bool, ModelError> {
        Ok(op.freq_khz() <= self.max_freq_khz(op.voltage_mv(), op.domain())?)
    }

    /// Lowest supply step whose guardband admits `freq_khz`, if any.
    pub fn min_compliant_voltage(&self, freq_khz: u32, domain: ClockDomain) -> Option<u32> {
        self.rows
            .iter()
            .rev()
            .find(|r| {
                let max = match domain {
                    ClockDomain::FabricController => r.fc_max_khz,
                    ClockDomain::Cluster => r.cluster_max_khz,
                };
                freq_khz <= max
            })
            .map(|r| r.voltage_mv)
    }

    pub fn min_voltage_mv(&self) -> u32 {
        self.rows.last().map(|r| r.voltage_mv).unwrap_or(SUPPLY_STEPS_MV[0])
    }

    pub fn max_voltage_mv(&self) -> u32 {
        self.rows.first().map(|r| r.voltage_mv).unwrap_or(SUPPLY_STEPS_MV[4])
    }
}

impl Default for GuardbandTable {
    fn default() -> Self {
        Self::datasheet()
    }
}
