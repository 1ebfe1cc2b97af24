use super::params::{Grads, ParamStore};
use crate::error::{invalid, Result};

/// `lambda * Σ w²` over every trainable parameter flagged for L2.
pub fn l2_penalty(store: &ParamStore, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("l2 lambda must be nonnegative, got {lambda}")));
    }
    Ok(lambda
        * store
            .iter()
            .filter(|(_, p)| p.l2 && p.trainable)
            .map(|(_, p)| p.value.iter().map(|w| w * w).sum::<f64>())
            .sum::<f64>())
}

/// Adds `2 * lambda * w` to the gradient of every trainable L2 parameter.
pub fn add_l2_grad(store: &ParamStore, lambda: f64, grads: &mut Grads) {
    if lambda == 0.0 {
        return;
    }
    for (id, p) in store.iter() {
        if p.l2 && p.trainable {
            grads
                .get_mut(id)
                .scaled_add(2.0 * lambda, &p.value);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn store_with(w: Array2<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", w, true, true).unwrap();
        s.add("b", array![[5.0]], true, false).unwrap();
        s
    }

    #[test]
    fn arithmetic() {
        let s = store_with(array![[2.0]]);
        assert_eq!(l2_penalty(&s, 0.0).unwrap(), 0.0);
        assert!((l2_penalty(&s, 0.01).unwrap() - 0.04).abs() < 1e-15);
        assert!(l2_penalty(&s, -1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let w0 = array![[0.3, -1.2], [2.0, 0.7]];
        let lambda = 0.05;
        let s = store_with(w0.clone());
        let mut g = s.zero_grads();
        add_l2_grad(&s, lambda, &mut g);
        let id = s.find("w").unwrap();
        let h = 1e-5;
        for i in 0..2 {
            for j in 0..2 {
                let mut plus = w0.clone();
                plus[[i, j]] += h;
                let mut minus = w0.clone();
                minus[[i, j]] -= h;
                let fd = (l2_penalty(&store_with(plus), lambda).unwrap()
                    - l2_penalty(&store_with(minus), lambda).unwrap())
                    / (2.0 * h);
                assert!((fd - g.get(id)[[i, j]]).abs() < 1e-6);
            }
        }
        // bias is not penalized
        assert_eq!(g.get(s.find("b").unwrap())[[0, 0]], 0.0);
    }
}
