//! Seeded inputs shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A trace of `seconds` at `rate_hz`: a 1.2 Hz fundamental with a 50 Hz
/// component, a slow drift and uniform noise.
pub fn noisy_trace(seconds: f64, rate_hz: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * rate_hz) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / rate_hz;
            let w = std::f64::consts::TAU;
            (w * 1.2 * t).sin() + 0.3 * (w * 50.0 * t).sin() + 0.5 * (w * 0.1 * t).sin() + rng.gen_range(-0.1..0.1)
        })
        .collect()
}

/// Two Gaussian-ish blobs in `dim` dimensions, the positives shifted by
/// `separation` along every axis. The first `positives` rows are positive.
pub fn two_blobs(positives: usize, negatives: usize, dim: usize, separation: f64, seed: u64) -> (Array2<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = positives + negatives;
    let x = Array2::from_shape_fn((n, dim), |(i, _)| {
        let shift = if i < positives { separation } else { 0.0 };
        // Sum of uniforms is close enough to normal for timing purposes.
        let z: f64 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.87;
        z + shift
    });
    let labels = (0..n).map(|i| i < positives).collect();
    (x, labels)
}

/// Genuine and impostor score lists with overlapping distributions.
pub fn score_sets(n_genuine: usize, n_impostor: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genuine = (0..n_genuine).map(|_| rng.gen_range(0.3..1.0)).collect();
    let impostor = (0..n_impostor).map(|_| rng.gen_range(0.0..0.6)).collect();
    (genuine, impostor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(noisy_trace(1.0, 300.0, 7), noisy_trace(1.0, 300.0, 7));
        let (x, labels) = two_blobs(3, 5, 4, 2.0, 1);
        assert_eq!(x.dim(), (8, 4));
        assert_eq!(labels.iter().filter(|&&l| l).count(), 3);
    }
}
