use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};

/// He-style variance scaling: entries ~ N(0, 2 / fan_in).
pub fn variance_scaling_init<R: Rng + ?Sized>(
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(invalid(format!(
            "variance scaling needs positive fan dimensions, got {fan_in}x{fan_out}"
        )));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Ok(Array2::from_shape_simple_fn((fan_in, fan_out), || {
        normal.sample(rng)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_given_seed() {
        let a = variance_scaling_init(1, 1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = variance_scaling_init(1, 1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.shape(), &[1, 1]);
        assert_eq!(a, b);
    }

    #[test]
    fn variance_matches_two_over_fan_in() {
        let w = variance_scaling_init(10_000, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 10_000.0;
        assert!((var - target).abs() < 0.2 * target, "var {var}");
    }

    #[test]
    fn zero_fan_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(variance_scaling_init(0, 3, &mut rng).is_err());
        assert!(variance_scaling_init(3, 0, &mut rng).is_err());
    }
}
