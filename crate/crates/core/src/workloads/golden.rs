use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use super::{PrngSpec, Xorshift64Star};

/// Memoized golden values.
///
/// Keeps the generator state at every problem size already requested so a
/// size grid costs one pass up to its largest size. Safe to share across
/// worker threads.
#[derive(Debug, Default)]
pub struct GoldenCache {
    checkpoints: RwLock<HashMap<u64, BTreeMap<u64, u64>>>,
    steps: AtomicU64,
}

impl GoldenCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Generator steps executed so far by this cache.
    pub fn steps_executed(&self) -> u64 {
        self.steps.load(Ordering::Relaxed)
    }

    pub fn golden_value(&self, spec: &PrngSpec) -> u64 {
        let (start_n, start_state) = {
            let map = self.checkpoints.read().unwrap_or_else(|e| e.into_inner());
            match map.get(&spec.seed()).and_then(|c| c.range(..=spec.n_items()).next_back()) {
                Some((&n, &state)) => (n, state),
                None => (0, spec.seed()),
            }
        };
        let mut g = Xorshift64Star::from_state(start_state);
        let remaining = spec.n_items() - start_n;
        if remaining > 0 {
            g.advance(remaining);
            self.steps.fetch_add(remaining, Ordering::Relaxed);
            let mut map = self.checkpoints.write().unwrap_or_else(|e| e.into_inner());
            map.entry(spec.seed()).or_default().insert(spec.n_items(), g.state());
        }
        g.output()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::prng_run;

    #[test]
    fn matches_direct_run() {
        let cache = GoldenCache::new();
        for (seed, n) in [(1, 1), (1, 10), (3, 1000), (1, 5), (99, 77)] {
            let spec = PrngSpec::new(seed, n).unwrap();
            assert_eq!(cache.golden_value(&spec), prng_run(&spec));
        }
    }

    #[test]
    fn size_grid_costs_one_pass() {
        let cache = GoldenCache::new();
        for n in (1..=20).map(|i| i * 50_000) {
            cache.golden_value(&PrngSpec::new(1, n).unwrap());
        }
        assert_eq!(cache.steps_executed(), 1_000_000);
    }

    #[test]
    fn continues_from_prefix_and_hits() {
        let cache = GoldenCache::new();
        cache.golden_value(&PrngSpec::new(5, 50_000).unwrap());
        assert_eq!(cache.steps_executed(), 50_000);
        let v = cache.golden_value(&PrngSpec::new(5, 100_000).unwrap());
        assert_eq!(cache.steps_executed(), 100_000);
        assert_eq!(v, prng_run(&PrngSpec::new(5, 100_000).unwrap()));
        cache.golden_value(&PrngSpec::new(5, 100_000).unwrap());
        cache.golden_value(&PrngSpec::new(5, 50_000).unwrap());
        assert_eq!(cache.steps_executed(), 100_000);
    }

    #[test]
    fn shared_across_threads() {
        let cache = GoldenCache::new();
        let expected = prng_run(&PrngSpec::new(11, 20_000).unwrap());
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| assert_eq!(cache.golden_value(&PrngSpec::new(11, 20_000).unwrap()), expected));
            }
        });
    }
}
