use ndarray::Array2;
use rand::Rng;

use crate::error::{invalid, Result};

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`. Outside training the mask is all ones.
pub fn dropout_mask<R: Rng + ?Sized>(
    shape: (usize, usize),
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok(Array2::ones(shape));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_and_inference_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = dropout_mask((4, 5), 0.0, &mut rng, true).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
        let m = dropout_mask((4, 5), 0.1, &mut rng, false).unwrap();
        assert!(m.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_fraction_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = dropout_mask((1000, 100), 0.1, &mut rng, true).unwrap();
        let zeros = m.iter().filter(|&&v| v == 0.0).count() as f64 / m.len() as f64;
        assert!((zeros - 0.1).abs() < 0.01, "zero fraction {zeros}");
        let mean = m.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.01, "mask mean {mean}");
    }

    #[test]
    fn rate_of_one_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout_mask((2, 2), 1.0, &mut rng, true).is_err());
        assert!(dropout_mask((2, 2), -0.1, &mut rng, true).is_err());
    }
}
