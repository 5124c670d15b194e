//! Guardband-violation characterization of an MPSoC against a calibrated
//! device model.
//!
//! The crate is organized the same way a hardware campaign is:
//!
//! - [`model`]: datasheet guardbands, the timing-failure and power model, and
//!   its calibration against observed headroom and energy savings.
//! - [`workloads`]: the xorshift64* stress workload with its golden-value
//!   oracle, plus a cycle-count stand-in for a parallel application.
//! - [`backend`]: how runs are executed (simulated, or over the line protocol
//!   to a device) and how shunt power traces are reduced to average power.
//! - [`sweep`]: voltage/frequency/problem-size characterization and the
//!   failure-distribution summary.
//! - [`energy`]: energy sweeps and iso-performance savings.
//! - [`controller`]: the error-rate-driven adaptive voltage scaling loop with
//!   rollback recovery accounting.

// Validation negates comparisons on purpose so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod controller;
pub mod energy;
pub mod model;
pub mod seed;
pub mod sweep;
pub mod workloads;

pub use model::{
    ClockDomain, DeviceModelParams, GuardbandTable, ModelError, OperatingPoint,
    OutcomeProbabilities, SUPPLY_STEPS_MV,
};
