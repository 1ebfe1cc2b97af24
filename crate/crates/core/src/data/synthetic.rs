use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use super::log_returns;
use crate::error::{invalid, Result};

/// `T × d` matrix of i.i.d. standard normal returns.
pub fn gen_noise<R: Rng + ?Sized>(t: usize, d: usize, rng: &mut R) -> Result<Array2<f64>> {
    if t == 0 || d == 0 {
        return Err(invalid("noise dimensions must be positive"));
    }
    Ok(Array2::from_shape_simple_fn((t, d), || rng.sample(StandardNormal)))
}

/// `d × k` matrix with orthonormal columns: the Q factor of a Gaussian
/// matrix, with column signs fixed so that R has a positive diagonal.
pub fn random_rotation<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<Array2<f64>> {
    if k == 0 || k > d {
        return Err(invalid(format!("rotation needs 1 <= k <= d, got k={k}, d={d}")));
    }
    let g = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    Ok(Array2::from_shape_fn((d, k), |(i, j)| {
        let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        sign * q[(i, j)]
    }))
}

/// Parameters of one harmonic signal `i + a·cos(t/100·f·π) + a·ε_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Oscillator {
    pub intercept: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

impl Oscillator {
    pub fn value(&self, t: usize, eps: f64) -> f64 {
        let phase = t as f64 / 100.0 * self.frequency * std::f64::consts::PI;
        self.intercept + self.amplitude * phase.cos() + self.amplitude * eps
    }
}

/// Settings for the oscillating-PCA generator. The `Option` fields pin the
/// corresponding oscillator parameter instead of drawing it.
#[derive(Clone, Debug)]
pub struct OscPcaConfig {
    /// Number of returns to produce (`T + 1` prices are generated).
    pub t: usize,
    pub k: usize,
    pub d: usize,
    pub noise_std: f64,
    pub price_offset: f64,
    pub intercept: Option<f64>,
    pub amplitude: Option<f64>,
    pub frequency: Option<f64>,
    pub max_retries: usize,
}

impl OscPcaConfig {
    pub fn new(t: usize, k: usize, d: usize) -> Self {
        Self {
            t,
            k,
            d,
            noise_std: 0.02,
            price_offset: 5.0,
            intercept: None,
            amplitude: None,
            frequency: None,
            max_retries: 1000,
        }
    }

    /// Draws oscillators and a rotation until every price is positive.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<OscPca> {
        if self.t == 0 || self.k == 0 || self.k > self.d {
            return Err(invalid(format!(
                "oscillating PCA needs T >= 1 and 1 <= k <= d (T={}, k={}, d={})",
                self.t, self.k, self.d
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(invalid("noise standard deviation must be nonnegative"));
        }
        let unit = Uniform::new(-1.0, 1.0).expect("valid range");
        let freq = Uniform::new(0.5, 24.0).expect("valid range");
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| invalid(e.to_string()))?;
        let n_prices = self.t + 1;

        let oscillators: Vec<Oscillator> = (0..self.k)
            .map(|_| Oscillator {
                intercept: self.intercept.unwrap_or_else(|| unit.sample(rng)),
                amplitude: self.amplitude.unwrap_or_else(|| unit.sample(rng)),
                frequency: self.frequency.unwrap_or_else(|| freq.sample(rng)),
            })
            .collect();
        let eps = Array2::from_shape_simple_fn((n_prices, self.k), || noise.sample(rng));

        let mut oscillators = oscillators;
        for retries in 0..=self.max_retries {
            let rotation = random_rotation(self.d, self.k, rng)?;
            let signals = Array2::from_shape_fn((n_prices, self.k), |(t, j)| {
                oscillators[j].value(t + 1, eps[[t, j]])
            });
            let prices = signals.dot(&rotation.t()) + self.price_offset;
            if prices.iter().all(|&p| p > 0.0) {
                let returns = log_returns(&prices)?;
                return Ok(OscPca {
                    returns,
                    prices,
                    signals,
                    rotation,
                    oscillators,
                    retries,
                });
            }
            if self.amplitude.is_none() {
                for o in &mut oscillators {
                    o.amplitude = unit.sample(rng);
                }
            }
        }
        Err(invalid(format!(
            "no positive price path after {} retries",
            self.max_retries
        )))
    }
}

/// Output of [`OscPcaConfig::generate`].
#[derive(Clone, Debug)]
pub struct OscPca {
    /// `T × d` log-returns.
    pub returns: Array2<f64>,
    /// `(T + 1) × d` prices `U·Z_t + offset`.
    pub prices: Array2<f64>,
    /// `(T + 1) × k` oscillator values.
    pub signals: Array2<f64>,
    /// `d × k` rotation.
    pub rotation: Array2<f64>,
    pub oscillators: Vec<Oscillator>,
    /// Number of redraws needed to obtain positive prices.
    pub retries: usize,
}

impl OscPca {
    pub fn intercepts(&self) -> Array1<f64> {
        self.oscillators.iter().map(|o| o.intercept).collect()
    }
}

/// `T × d` oscillating-PCA log-returns with `k` hidden signals.
pub fn gen_osc_pca<R: Rng + ?Sized>(
    t: usize,
    k: usize,
    d: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    Ok(OscPcaConfig::new(t, k, d).generate(rng)?.returns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_is_seeded() {
        let a = gen_noise(10, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = gen_noise(10, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), (10, 3));
    }

    #[test]
    fn zero_amplitude_gives_constant_prices() {
        let mut cfg = OscPcaConfig::new(300, 2, 22);
        cfg.amplitude = Some(0.0);
        let out = cfg.generate(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(out.returns.iter().all(|&r| r == 0.0));
        assert_eq!(out.returns.dim(), (300, 22));
    }

    #[test]
    fn frequency_two_has_period_one_hundred() {
        let mut cfg = OscPcaConfig::new(400, 1, 3);
        cfg.frequency = Some(2.0);
        cfg.amplitude = Some(0.7);
        cfg.noise_std = 0.0;
        let out = cfg.generate(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for t in 0..300 {
            assert!((out.signals[[t, 0]] - out.signals[[t + 100, 0]]).abs() < 1e-12);
        }
        assert!((out.signals[[0, 0]] - out.signals[[50, 0]]).abs() > 0.1);
    }

    #[test]
    fn rotation_orthonormal_and_square_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_rotation(22, 5, &mut rng).unwrap();
        let gram = u.t().dot(&u);
        for ((i, j), &v) in gram.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-10);
        }
        let q = random_rotation(4, 4, &mut rng).unwrap();
        let det = DMatrix::from_fn(4, 4, |i, j| q[[i, j]]).determinant();
        assert!((det.abs() - 1.0).abs() < 1e-8);
        assert!(random_rotation(2, 3, &mut rng).is_err());
    }
}
