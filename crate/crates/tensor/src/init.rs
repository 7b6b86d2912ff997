//! Seeded weight initialisers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out) as f64).sqrt() as f32
}

/// I.i.d. uniform values in `±sqrt(6 / (fan_in + fan_out))`, reproducible per seed.
pub fn xavier_uniform(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Tensor {
    assert!(fan_in > 0 && fan_out > 0, "fans must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_uniform_with(shape, fan_in, fan_out, &mut rng)
}

pub fn xavier_uniform_with<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = xavier_bound(fan_in, fan_out);
    uniform_with(shape, bound, rng)
}

/// I.i.d. uniform values in `[-bound, bound]`.
pub fn uniform_with<R: Rng>(shape: &[usize], bound: f32, rng: &mut R) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Normal(0, std) values via Box-Muller.
pub fn normal_with<R: Rng>(shape: &[usize], std: f32, rng: &mut R) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.random();
            ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32 * std
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_within_bound() {
        let t = xavier_uniform(&[64, 32], 64, 32, 7);
        let b = xavier_bound(64, 32);
        assert!(t.data().iter().all(|v| v.abs() <= b));
    }

    #[test]
    fn same_seed_same_tensor() {
        assert_eq!(xavier_uniform(&[5, 5], 5, 5, 42), xavier_uniform(&[5, 5], 5, 5, 42));
        assert_ne!(xavier_uniform(&[5, 5], 5, 5, 42), xavier_uniform(&[5, 5], 5, 5, 43));
    }

    #[test]
    fn empirical_mean_within_three_sigma() {
        let n = 100_000;
        let t = xavier_uniform(&[n], 10, 20, 3);
        let b = xavier_bound(10, 20) as f64;
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        // Uniform(-b, b) has variance b^2 / 3.
        let sigma = (b * b / 3.0 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} sigma {sigma}");
    }
}
