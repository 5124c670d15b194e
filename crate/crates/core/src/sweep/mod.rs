//! Voltage/frequency/problem-size characterization.
//!
//! A [`SweepPlan`] is expanded into ordered points, executed against a
//! [`Backend`](crate::backend::Backend), and every run is classified against
//! the golden value: mismatch is an error, no response within the timeout is
//! a lockup. [`summarize`] reduces the records to per-voltage failure
//! statistics.

mod execute;
mod plan;
mod record;
mod summary;

pub use execute::execute_plan;
pub use plan::{enumerate_plan, frequency_grid, PlanPoint, StopRule, SweepPlan};
pub use record::{read_records_csv, write_records_csv, Outcome, TestRecord, RECORD_HEADER};
pub use summary::{
    nearest_rank, size_independence_test, summarize, write_summary_csv, FailureSummary, Quantiles,
    SizeIndependence, SummaryError, VoltageFailures, SIZE_EFFECT_THRESHOLD, SUMMARY_HEADER,
};

use thiserror::Error;

use crate::backend::BackendError;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep plan has an empty grid: {0}")]
    EmptyPlan(&'static str),
    #[error("invalid sweep plan: {0}")]
    InvalidPlan(String),
    #[error("backend failure after {} records: {source}", partial.len())]
    Backend {
        partial: Vec<TestRecord>,
        #[source]
        source: BackendError,
    },
}
