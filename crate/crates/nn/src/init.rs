use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Tensor;

/// Glorot-uniform weights of shape `[fan_in, fan_out]` and a zero bias of
/// shape `[fan_out]`. Deterministic in `seed`.
pub fn dense_init(fan_in: usize, fan_out: usize, seed: u64) -> (Tensor, Tensor) {
    assert!(fan_in >= 1 && fan_out >= 1, "dense_init needs positive fan_in and fan_out");
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect();
    let weight = Tensor::matrix(fan_in, fan_out, data).expect("finite init");
    let bias = Tensor::zeros(&[fan_out]);
    (weight, bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_layer_shapes() {
        let (w, b) = dense_init(1, 1, 7);
        assert_eq!(w.shape(), &[1, 1]);
        assert_eq!(b.shape(), &[1]);
        assert_eq!(b.data(), &[0.0]);
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(dense_init(4, 4, 3), dense_init(4, 4, 3));
        assert_ne!(dense_init(4, 4, 3).0, dense_init(4, 4, 4).0);
    }

    #[test]
    fn glorot_bound_holds() {
        let (w, _) = dense_init(100, 100, 11);
        let bound = (6.0f64 / 200.0).sqrt();
        assert!((bound - 0.1732).abs() < 1e-4);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        // the sample should actually spread over the interval
        let max = w.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.9 * bound);
    }
}
