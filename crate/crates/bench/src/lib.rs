//! Shared generators for the benchmark suite.

use rdsuite_core::{ClusterId, Sample};

/// Deterministic smooth noisy sample with asymmetric curvature, built from a
/// splitmix-style stream so benches need no external RNG at build time.
pub fn bench_sample(n: usize, seed: u64) -> Sample {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let rows = (0..n)
        .map(|i| {
            let x = next() * 2.0 - 1.0;
            let curve = if x >= 0.0 { 2.0 * x * x } else { -1.5 * x * x };
            let y = 0.4 * f64::from(x >= 0.0) + 0.8 * x + curve + (next() - 0.5);
            // A few hundred clusters, like districts.
            (x, y, f64::from(x < 0.0), ClusterId(i as u64 % 257), 1.0)
        })
        .collect();
    Sample::from_raw(rows, 0.0).unwrap()
}
