//! Seed derivation for independent deterministic RNG streams.
//!
//! Every stochastic component (batch sampling, k-means restarts, benchmark
//! replications) derives its own stream from a base seed plus a stream tag
//! and an index, so results are independent of evaluation order and thread
//! count.

/// SplitMix64 finalizer; bijective on u64 with good avalanche behavior.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive the seed for stream `tag` at position `index` under `base`.
pub fn derive(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(tag)) ^ index)
}

/// Stream tags: one per independent randomness consumer.
pub mod stream {
    /// Cluster treatment coins within a synthetic repetition.
    pub const TREATMENT: u64 = 1;
    /// Covariate draws within a synthetic repetition.
    pub const COVARIATE: u64 = 2;
    /// Residual noise draws within a synthetic repetition.
    pub const NOISE: u64 = 3;
    /// The Monte-Carlo ATE oracle.
    pub const MC_ORACLE: u64 = 4;
    /// Benchmark replications (shared by all methods at a sweep point).
    pub const REPLICATION: u64 = 5;

    /// Paired arm used by the MC oracle at fixed common random numbers.
    pub const MC_PAIRED: u64 = 6;
}
