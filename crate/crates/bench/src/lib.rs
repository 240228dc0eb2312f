//! Seeded inputs for the benchmarks.

use castid::assignment::CostMatrix;
use castid::dataset::{generate_splits, generate_synthetic, DatasetSplit, SynthOutput, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Points around `centers` well separated centers, as a movie's face tracks would be.
pub fn clustered_points(n: usize, dim: usize, centers: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<Vec<f64>> = (0..centers)
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    (0..n)
        .map(|i| {
            c[i % centers]
                .iter()
                .map(|&v| v + rng.random_range(-0.5..0.5))
                .collect()
        })
        .collect()
}

pub fn cost_matrix(rows: usize, cols: usize, seed: u64) -> CostMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    CostMatrix::new(rows, cols, values).expect("finite costs")
}

/// A small synthetic data set and its split.
pub fn small_dataset(seed: u64) -> (SynthOutput, DatasetSplit) {
    let spec = SynthSpec {
        movies: 2,
        clips_per_movie: 60,
        ..SynthSpec::default()
    };
    let data = generate_synthetic(&spec, seed).expect("valid spec");
    let split = generate_splits(&data.store, seed);
    (data, split)
}
