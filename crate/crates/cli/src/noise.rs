use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Adds Gaussian noise of standard deviation `level * max|data|`.
///
/// The stream is ChaCha8 seeded with `seed`, so equal seeds give identical
/// output on every platform.
pub fn inject_noise(data: &[f64], level: f64, seed: u64) -> Vec<f64> {
    let scale = data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let sigma = level * scale;
    if !(sigma > 0.0) {
        return data.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    data.iter().map(|v| v + normal.sample(&mut rng)).collect()
}
