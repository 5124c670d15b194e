use serde::{Deserialize, Serialize};

use super::{WorkloadError, XORSHIFT_MULTIPLIER, XORSHIFT_SHIFTS};
use crate::model::OperatingPoint;

/// Seed and length of one generator run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrngSpec {
    seed: u64,
    n_items: u64,
}

impl PrngSpec {
    pub fn new(seed: u64, n_items: u64) -> Result<Self, WorkloadError> {
        if seed == 0 {
            return Err(WorkloadError::InvalidSeed);
        }
        if n_items == 0 {
            return Err(WorkloadError::EmptyProblem);
        }
        Ok(Self { seed, n_items })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_items(&self) -> u64 {
        self.n_items
    }

    pub fn duration_s(&self, op: &OperatingPoint, cycles_per_item: u64) -> f64 {
        (self.n_items * cycles_per_item) as f64 / op.freq_hz()
    }
}

/// xorshift64* generator. The state after `k` steps is exposed so runs can be
/// resumed and perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Xorshift64Star {
    state: u64,
}

impl Xorshift64Star {
    pub fn from_state(state: u64) -> Self {
        Self { state }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    #[inline]
    pub fn step(&mut self) {
        let (a, b, c) = XORSHIFT_SHIFTS;
        let mut x = self.state;
        x ^= x >> a;
        x ^= x << b;
        x ^= x >> c;
        self.state = x;
    }

    #[inline]
    pub fn output(&self) -> u64 {
        self.state.wrapping_mul(XORSHIFT_MULTIPLIER)
    }

    pub fn advance(&mut self, steps: u64) {
        for _ in 0..steps {
            self.step();
        }
    }
}

/// N-th generator output for the spec.
pub fn prng_run(spec: &PrngSpec) -> u64 {
    let mut g = Xorshift64Star::from_state(spec.seed());
    g.advance(spec.n_items());
    g.output()
}

/// Runs the generator, XOR-flipping state bit `bit_index` right after step
/// `flip_iteration` (1-based), and returns the final output.
pub fn inject_corruption(spec: &PrngSpec, flip_iteration: u64, bit_index: u32) -> Result<u64, WorkloadError> {
    if flip_iteration == 0 || flip_iteration > spec.n_items() {
        return Err(WorkloadError::IndexOutOfRange {
            what: "flip iteration",
            value: flip_iteration,
            lo: 1,
            hi: spec.n_items(),
        });
    }
    if bit_index > 63 {
        return Err(WorkloadError::IndexOutOfRange { what: "bit index", value: u64::from(bit_index), lo: 0, hi: 63 });
    }
    let mut g = Xorshift64Star::from_state(spec.seed());
    g.advance(flip_iteration);
    g = Xorshift64Star::from_state(g.state() ^ (1u64 << bit_index));
    g.advance(spec.n_items() - flip_iteration);
    Ok(g.output())
}
