use ndarray::{Array2, Zip};

use super::params::{Grads, ParamStore};
use crate::error::{invalid, shape, Error, Result};

/// Adam with bias correction and a continuous exponential learning-rate
/// decay `lr(t) = lr0 · rate^(t / steps)`.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_steps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of updates applied so far.
    pub step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, learning_rate: f64, decay_rate: f64, decay_steps: f64) -> Self {
        let zeros = |s: &ParamStore| -> Vec<Array2<f64>> {
            s.iter().map(|(_, p)| Array2::zeros(p.value.raw_dim())).collect()
        };
        Self {
            learning_rate,
            decay_rate,
            decay_steps,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros(store),
            second: zeros(store),
        }
    }

    /// Learning rate applied at update number `step` (zero-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        self.learning_rate * self.decay_rate.powf(step as f64 / self.decay_steps)
    }

    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.step)
    }

    /// Applies one update to every trainable parameter.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(shape(format!(
                "optimizer tracks {} parameters, store has {}, gradients {}",
                self.first.len(),
                store.len(),
                grads.len()
            )));
        }
        for (id, p) in store.iter() {
            let g = grads.get(id);
            if g.shape() != p.value.shape() {
                return Err(shape(format!(
                    "gradient for `{}` has shape {:?}, parameter {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
            if p.trainable && g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
            }
        }

        let lr = self.current_lr();
        let t = (self.step + 1) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.is_trainable(id) {
                continue;
            }
            let g = grads.get(id);
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            Zip::from(store.value_mut(id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        self.step += 1;
        Ok(())
    }

    /// Moment accumulators as `(first, second)` arrays in store order.
    pub fn moments(&self) -> (&[Array2<f64>], &[Array2<f64>]) {
        (&self.first, &self.second)
    }

    pub fn restore_moments(
        &mut self,
        first: Vec<Array2<f64>>,
        second: Vec<Array2<f64>>,
        step: u64,
    ) -> Result<()> {
        if first.len() != self.first.len() || second.len() != self.second.len() {
            return Err(invalid("optimizer state does not match parameter count"));
        }
        for (a, b) in first.iter().zip(&self.first).chain(second.iter().zip(&self.second)) {
            if a.shape() != b.shape() {
                return Err(shape("optimizer moment shape mismatch"));
            }
        }
        self.first = first;
        self.second = second;
        self.step = step;
        Ok(())
    }
}
