//! Order-independent seed derivation for parallel campaigns.

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `campaign_seed`. Stable across platforms and releases.
pub fn derive(campaign_seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(campaign_seed), |acc, &p| mix(acc ^ mix(p)))
}

/// Seed of one characterization run.
pub fn run_seed(campaign_seed: u64, voltage_mv: u32, freq_khz: u32, n_items: u64, repetition: u32) -> u64 {
    derive(campaign_seed, &[u64::from(voltage_mv), u64::from(freq_khz), n_items, u64::from(repetition)])
}
