//! Test workloads: the xorshift64* stress generator and a parallel
//! application stand-in.

mod golden;
mod prng;

pub use golden::GoldenCache;
pub use prng::{inject_corruption, prng_run, PrngSpec, Xorshift64Star};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::OperatingPoint;

pub const XORSHIFT_SHIFTS: (u32, u32, u32) = (12, 25, 27);
pub const XORSHIFT_MULTIPLIER: u64 = 0x2545_F491_4F6C_DD1D;
/// Cycles spent per generated item on one cluster core.
pub const DEFAULT_CYCLES_PER_ITEM: u64 = 140;
/// Source of truth shared with device firmware.
pub const CONSTANTS_FILE: &str = include_str!("../../constants/workload-v1.toml");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("generator seed must be non-zero")]
    InvalidSeed,
    #[error("problem size must be at least one item")]
    EmptyProblem,
    #[error("parallel workload needs 1..=8 cores, got {0}")]
    InvalidCoreCount(u32),
    #[error("parallel workload needs a positive cycle count")]
    ZeroCycles,
    #[error("{what} {value} out of range {lo}..={hi}")]
    IndexOutOfRange { what: &'static str, value: u64, lo: u64, hi: u64 },
}

/// Cycle-count stand-in for a parallel application spread over the cluster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParallelWorkloadSpec {
    name: String,
    n_cores: u32,
    total_cycles: u64,
}

impl ParallelWorkloadSpec {
    pub fn new(name: impl Into<String>, n_cores: u32, total_cycles: u64) -> Result<Self, WorkloadError> {
        if !(1..=8).contains(&n_cores) {
            return Err(WorkloadError::InvalidCoreCount(n_cores));
        }
        if total_cycles == 0 {
            return Err(WorkloadError::ZeroCycles);
        }
        Ok(Self { name: name.into(), n_cores, total_cycles })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_cores(&self) -> u32 {
        self.n_cores
    }

    pub fn total_cycles(&self) -> u64 {
        self.total_cycles
    }

    /// Wall-clock cycles divided by frequency.
    pub fn duration_s(&self, op: &OperatingPoint) -> f64 {
        self.total_cycles as f64 / op.freq_hz()
    }

    /// Result signature a correct run reports. The application itself is not
    /// modeled, so this is a fixed digest of the spec.
    pub fn reference_signature(&self) -> u64 {
        let mut h = crate::seed::mix(self.total_cycles ^ (u64::from(self.n_cores) << 56));
        for b in self.name.bytes() {
            h = crate::seed::mix(h ^ u64::from(b));
        }
        h
    }
}

/// Work executed by one run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Workload {
    Prng(PrngSpec),
    Parallel(ParallelWorkloadSpec),
}

impl Workload {
    pub fn cycles(&self, cycles_per_item: u64) -> u64 {
        match self {
            Workload::Prng(spec) => spec.n_items() * cycles_per_item,
            Workload::Parallel(spec) => spec.total_cycles(),
        }
    }

    pub fn duration_s(&self, op: &OperatingPoint, cycles_per_item: u64) -> f64 {
        self.cycles(cycles_per_item) as f64 / op.freq_hz()
    }

    /// Cores drawing dynamic power: the workload's cluster cores plus the FC.
    pub fn active_cores(&self) -> u32 {
        match self {
            Workload::Prng(_) => 2,
            Workload::Parallel(spec) => spec.n_cores() + 1,
        }
    }

    pub fn n_items(&self) -> u64 {
        match self {
            Workload::Prng(spec) => spec.n_items(),
            Workload::Parallel(_) => 0,
        }
    }
}
