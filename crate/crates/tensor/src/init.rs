use rand::Rng;

use crate::{Scalar, Tensor};

/// Kaiming-uniform for ReLU networks: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<S> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| S::of(rng.random_range(-bound..bound)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stays_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f64> = kaiming_uniform(&[16, 4, 3], 12, &mut rng);
        let b = 0.5f64.sqrt();
        assert!(t.data().iter().all(|v| v.abs() < b));
        assert!(t.data().iter().any(|v| v.abs() > 0.5 * b));
    }
}
