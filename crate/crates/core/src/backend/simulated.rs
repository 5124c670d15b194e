use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Backend, BackendError, RunOutcome, RunRequest, RunResponse};
use crate::model::DeviceModelParams;
use crate::workloads::{inject_corruption, GoldenCache, Workload};

/// Backend that samples run outcomes from the device model.
///
/// Per run: a lockup with probability `p_lockup` (times out), otherwise an
/// error with probability `p_error` (one state bit flipped at a random
/// iteration), otherwise the golden value.
#[derive(Debug)]
pub struct SimulatedBackend {
    params: DeviceModelParams,
    golden: GoldenCache,
}

impl SimulatedBackend {
    pub fn new(params: DeviceModelParams) -> Self {
        Self { params, golden: GoldenCache::new() }
    }

    pub fn params(&self) -> &DeviceModelParams {
        &self.params
    }
}

impl Backend for SimulatedBackend {
    fn run(&self, req: &RunRequest, rng_seed: u64) -> Result<RunResponse, BackendError> {
        sample_run(&self.params, &self.golden, req, rng_seed, |p| p)
    }
}

/// Size-dependent variant of [`SimulatedBackend`] in which every item is an
/// independent chance to fail: a run of `n` items errors with probability
/// `1 - (1 - p_error)^(n / n_ref)`. Used to check that the size-independence
/// test detects a model it should reject.
#[derive(Debug)]
pub struct PerCycleBackend {
    params: DeviceModelParams,
    golden: GoldenCache,
    n_ref: u64,
}

impl PerCycleBackend {
    pub fn new(params: DeviceModelParams, n_ref: u64) -> Self {
        assert!(n_ref > 0, "reference size must be positive");
        Self { params, golden: GoldenCache::new(), n_ref }
    }
}

impl Backend for PerCycleBackend {
    fn run(&self, req: &RunRequest, rng_seed: u64) -> Result<RunResponse, BackendError> {
        let exponent = req.workload().n_items().max(1) as f64 / self.n_ref as f64;
        sample_run(&self.params, &self.golden, req, rng_seed, |p| 1.0 - (1.0 - p).powf(exponent))
    }
}

fn sample_run(
    params: &DeviceModelParams,
    golden: &GoldenCache,
    req: &RunRequest,
    rng_seed: u64,
    scale_error: impl Fn(f64) -> f64,
) -> Result<RunResponse, BackendError> {
    let op = req.op();
    let probs = params.outcome_probabilities(op)?;
    let workload = req.workload();
    let avg_power_w = params.power(op, workload.active_cores())?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    if rng.random::<f64>() < probs.p_lockup {
        return Ok(RunResponse { outcome: RunOutcome::Timeout, elapsed_s: req.timeout_s(), avg_power_w });
    }
    let elapsed_s = workload.duration_s(op, params.cycles_per_item);
    let errored = rng.random::<f64>() < scale_error(probs.p_error);
    let value = match workload {
        Workload::Prng(spec) if errored => {
            let iteration = rng.random_range(1..=spec.n_items());
            let bit = rng.random_range(0..64);
            inject_corruption(spec, iteration, bit)?
        }
        Workload::Prng(spec) => golden.golden_value(spec),
        Workload::Parallel(spec) if errored => spec.reference_signature() ^ (1u64 << rng.random_range(0..64)),
        Workload::Parallel(spec) => spec.reference_signature(),
    };
    Ok(RunResponse { outcome: RunOutcome::Value(value), elapsed_s, avg_power_w })
}
