//! Run execution.
//!
//! A [`Backend`] executes one [`RunRequest`] and reports either the value the
//! workload produced or a timeout. [`SimulatedBackend`] samples outcomes from
//! the device model; [`SerialBackend`] drives a device over the line protocol
//! in [`protocol`]. Shunt power traces are reduced by [`trace`].

pub mod protocol;
mod serial;
mod simulated;
pub mod trace;

pub use serial::SerialBackend;
pub use simulated::{PerCycleBackend, SimulatedBackend};

use thiserror::Error;

use crate::model::{ModelError, OperatingPoint};
use crate::workloads::{Workload, WorkloadError};

/// Multiple of the expected duration after which the host declares a lockup.
pub const DEFAULT_TIMEOUT_FACTOR: f64 = 3.0;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("timeout {timeout_s} s does not exceed expected duration {expected_s} s")]
    TimeoutTooShort { timeout_s: f64, expected_s: f64 },
    #[error(transparent)]
    Protocol(#[from] protocol::ProtocolError),
    #[error("device reported error code {0}")]
    Device(u32),
    #[error("unexpected device response {0:?}")]
    UnexpectedResponse(protocol::Response),
    #[error("backend does not support workload {0}")]
    UnsupportedWorkload(&'static str),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRequest {
    op: OperatingPoint,
    workload: Workload,
    timeout_s: f64,
}

impl RunRequest {
    pub fn new(op: OperatingPoint, workload: Workload, timeout_s: f64, cycles_per_item: u64) -> Result<Self, BackendError> {
        let expected_s = workload.duration_s(&op, cycles_per_item);
        if !(timeout_s > expected_s) {
            return Err(BackendError::TimeoutTooShort { timeout_s, expected_s });
        }
        Ok(Self { op, workload, timeout_s })
    }

    /// Request with the timeout set to `factor` times the expected duration.
    pub fn with_timeout_factor(op: OperatingPoint, workload: Workload, cycles_per_item: u64, factor: f64) -> Result<Self, BackendError> {
        let timeout_s = factor * workload.duration_s(&op, cycles_per_item);
        Self::new(op, workload, timeout_s, cycles_per_item)
    }

    pub fn op(&self) -> &OperatingPoint {
        &self.op
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    pub fn timeout_s(&self) -> f64 {
        self.timeout_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunOutcome {
    Value(u64),
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunResponse {
    pub outcome: RunOutcome,
    pub elapsed_s: f64,
    pub avg_power_w: f64,
}

impl RunResponse {
    pub fn energy_j(&self) -> f64 {
        crate::model::energy(self.avg_power_w, self.elapsed_s)
    }
}

/// Executes runs. Implementations that can be shared across threads allow
/// the sweep and energy campaigns to run voltages concurrently.
pub trait Backend: Sync {
    fn run(&self, req: &RunRequest, rng_seed: u64) -> Result<RunResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn run(&self, req: &RunRequest, rng_seed: u64) -> Result<RunResponse, BackendError> {
        (**self).run(req, rng_seed)
    }
}
