//! Derivative-free Nelder–Mead minimizer.

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug)]
pub struct NelderMead {
    pub max_iterations: usize,
    /// Stop once the spread of objective values across the simplex falls
    /// below this, relative to `1 + |f(best)|`.
    pub f_tol: f64,
    /// Stop once every vertex lies within this distance of the best one.
    pub x_tol: f64,
    /// Initial simplex offset per coordinate.
    pub step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            f_tol: 1e-12,
            x_tol: 1e-8,
            step: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

impl NelderMead {
    /// Minimizes `f` from `x0`. Non-finite objective values are treated as
    /// `+∞`. Fails with the best point found if the tolerances are not met
    /// within `max_iterations`.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, x0: &[f64]) -> Result<Minimum> {
        let n = x0.len();
        if n == 0 {
            return Err(invalid("empty starting point"));
        }
        let mut eval = |x: &[f64]| {
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += if x[i] != 0.0 { self.step * x[i].abs().max(1.0) } else { self.step };
            simplex.push(x);
        }
        let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();
        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

        for it in 0..self.max_iterations {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let size = simplex[1..]
                .iter()
                .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if values[0].is_finite() && spread <= self.f_tol * (1.0 + values[0].abs()) && size <= self.x_tol {
                return Ok(Minimum {
                    x: simplex[0].clone(),
                    value: values[0],
                    iterations: it,
                });
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64)
                .collect();
            let towards = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };
            let xr = towards(-alpha);
            let fr = eval(&xr);
            if fr < values[0] {
                let xe = towards(-gamma);
                let fe = eval(&xe);
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
                continue;
            }
            // Outside contraction when the reflection improved on the worst
            // vertex, inside contraction otherwise.
            let xc = towards(if fr < values[n] { -rho } else { rho });
            let fc = eval(&xc);
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
            for i in 1..=n {
                let x: Vec<f64> = simplex[0]
                    .iter()
                    .zip(&simplex[i])
                    .map(|(b, v)| b + sigma * (v - b))
                    .collect();
                values[i] = eval(&x);
                simplex[i] = x;
            }
        }
        let best = (0..=n)
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .expect("nonempty simplex");
        Err(Error::NoConvergence {
            iterations: self.max_iterations,
            best_point: simplex[best].clone(),
            best_value: values[best],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = NelderMead::default().minimize(f, &[-1.2, 1.0]).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn iteration_cap_reports_best_point() {
        let nm = NelderMead {
            max_iterations: 3,
            ..NelderMead::default()
        };
        match nm.minimize(|x| x[0] * x[0] + x[1] * x[1], &[5.0, 5.0]) {
            Err(Error::NoConvergence { best_point, best_value, .. }) => {
                assert_eq!(best_point.len(), 2);
                assert!(best_value < 50.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }
}
