//! Seeded instance generators shared by the studies and the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rotpool_core::{Matrix, SampleSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `D x N` matrix of standard-normal draws.
pub fn gaussian_matrix<R: Rng>(rng: &mut R, d: usize, n: usize) -> Matrix {
    Matrix::from_fn(d, n, |_, _| rng.sample(StandardNormal))
}

/// Signed Gaussian set, as used by the stability and precision studies.
pub fn gaussian_set<R: Rng>(rng: &mut R, d: usize, n: usize) -> SampleSet {
    SampleSet::new_signed(gaussian_matrix(rng, d, n)).expect("finite draws")
}

/// Nonnegative set: exponentiated standard-normal draws.
pub fn lognormal_set<R: Rng>(rng: &mut R, d: usize, n: usize) -> SampleSet {
    SampleSet::new(gaussian_matrix(rng, d, n).map(f64::exp)).expect("positive draws")
}

/// Nonnegative set whose per-row gap between the two largest entries is at
/// least `min_gap`; rows are redrawn until they qualify.
pub fn separated_set<R: Rng>(rng: &mut R, d: usize, n: usize, min_gap: f64) -> SampleSet {
    assert!(n >= 2, "a top-2 gap needs at least two samples");
    let mut rows = Vec::with_capacity(d);
    while rows.len() < d {
        let row: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal).exp()).collect();
        let mut sorted = row.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted[0] - sorted[1] >= min_gap {
            rows.push(row);
        }
    }
    SampleSet::from_rows(&rows).expect("positive draws")
}

/// Uniform random permutation of `0..n`.
pub fn permutation<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Random point in the interior of the simplex.
pub fn simplex_point<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}
