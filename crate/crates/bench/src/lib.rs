//! Input generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two groups of surprisal-like values on a coarse grid, so ties are common.
pub fn tied_groups(seed: u64, n1: usize, n2: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |shift: u32, n: usize| -> Vec<f64> {
        (0..n).map(|_| f64::from(rng.random_range(0..40u32) + shift) * 0.25).collect()
    };
    let a = draw(4, n1);
    let b = draw(0, n2);
    (a, b)
}

/// Continuous scores paired with noisy surprisals.
pub fn paired(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = x.iter().map(|v| 8.0 + 3.0 * v + rng.random_range(-2.0..2.0)).collect();
    (x, y)
}
