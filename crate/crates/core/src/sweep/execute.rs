use rayon::prelude::*;

use super::plan::frequency_grid;
use super::{Outcome, StopRule, SweepError, SweepPlan, TestRecord};
use crate::backend::{Backend, BackendError, RunOutcome, RunRequest};
use crate::model::OperatingPoint;
use crate::seed::run_seed;
use crate::workloads::{GoldenCache, PrngSpec, Workload};

fn sweep_voltage<B: Backend>(
    backend: &B,
    plan: &SweepPlan,
    voltage_mv: u32,
    sizes: &[u64],
    golden: &GoldenCache,
    campaign_seed: u64,
) -> (Vec<TestRecord>, Option<BackendError>) {
    let mut records = Vec::new();
    for freq_khz in frequency_grid(plan.start_freq_khz, plan.freq_step_khz, plan.ceiling_khz) {
        let (mut lockups, mut runs) = (0usize, 0usize);
        for &n_items in sizes {
            let result = (|| {
                let op = OperatingPoint::cluster(voltage_mv, freq_khz)?;
                let spec = PrngSpec::new(plan.workload_seed, n_items)?;
                let req = RunRequest::with_timeout_factor(op, Workload::Prng(spec), plan.cycles_per_item, plan.timeout_factor)?;
                Ok::<_, BackendError>((op, spec, req))
            })();
            let (op, spec, req) = match result {
                Ok(x) => x,
                Err(e) => return (records, Some(e)),
            };
            let expected = golden.golden_value(&spec);
            for repetition in 0..plan.repetitions {
                let seed = run_seed(campaign_seed, voltage_mv, freq_khz, n_items, repetition);
                let resp = match backend.run(&req, seed) {
                    Ok(resp) => resp,
                    Err(e) => return (records, Some(e)),
                };
                let (outcome, observed) = match resp.outcome {
                    RunOutcome::Timeout => (Outcome::Lockup, None),
                    RunOutcome::Value(v) if v == expected => (Outcome::Correct, Some(v)),
                    RunOutcome::Value(v) => (Outcome::Error, Some(v)),
                };
                lockups += usize::from(outcome == Outcome::Lockup);
                runs += 1;
                records.push(TestRecord {
                    op,
                    n_items,
                    repetition,
                    outcome,
                    elapsed_s: resp.elapsed_s,
                    energy_j: resp.energy_j(),
                    observed,
                });
            }
        }
        let stop = match plan.stop_rule {
            StopRule::StopOnFirstLockup => lockups > 0,
            StopRule::StopOnUnresponsive => lockups == runs,
            StopRule::FixedCeiling => false,
        };
        if stop {
            break;
        }
    }
    (records, None)
}

/// Runs the plan and returns records in (voltage, frequency, size,
/// repetition) order.
///
/// Voltages run in parallel on the current rayon pool; each voltage's
/// frequencies run in order because the stop rule depends on them. Run seeds
/// derive from the campaign seed and the point, so the result does not depend
/// on the number of workers. On a backend failure the records gathered so far
/// are returned inside the error.
pub fn execute_plan<B: Backend>(backend: &B, plan: &SweepPlan, campaign_seed: u64) -> Result<Vec<TestRecord>, SweepError> {
    plan.validate()?;
    let sizes = plan.sorted_sizes();
    let golden = GoldenCache::new();
    let per_voltage: Vec<_> = plan
        .sorted_voltages()
        .into_par_iter()
        .map(|v| sweep_voltage(backend, plan, v, &sizes, &golden, campaign_seed))
        .collect();

    let mut records = Vec::new();
    let mut failure = None;
    for (mut part, err) in per_voltage {
        records.append(&mut part);
        if failure.is_none() {
            failure = err;
        }
    }
    match failure {
        Some(source) => Err(SweepError::Backend { partial: records, source }),
        None => Ok(records),
    }
}
