//! Seeded weight initializers. Values are drawn in `f64` so `f32` and `f64`
//! networks built from the same seed start from the same point.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Scalar;

/// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn he_uniform<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    uniform(rng, bound, n)
}

/// `U(-sqrt(6 / (fan_in + fan_out)), sqrt(6 / (fan_in + fan_out)))`.
pub fn xavier_uniform<T: Scalar>(
    rng: &mut ChaCha8Rng,
    fan_in: usize,
    fan_out: usize,
    n: usize,
) -> Vec<T> {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    uniform(rng, bound, n)
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, bound: f64, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| T::lit(rng.random_range(-bound..=bound)))
        .collect()
}
