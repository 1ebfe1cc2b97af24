mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempvae::gaussians::{kl_diag_diag, GaussianDiag, GaussianRank1};

use common::{kl_monte_carlo, random_diag};

fn dense_log_pdf(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> f64 {
    let d = x.len();
    let e = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    let chol = cov.clone().cholesky().expect("positive definite");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = e.dot(&chol.solve(&e));
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

#[test]
fn closed_form_kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for case in 0..20 {
        let dim = 1 + case % 5;
        let q = random_diag(dim, &mut rng);
        let p = random_diag(dim, &mut rng);
        let exact = kl_diag_diag(&q, &p).unwrap();
        let (mc, se) = kl_monte_carlo(&q, &p, 10_000, &mut rng);
        assert!(
            (exact - mc).abs() <= 3.0 * se,
            "case {case}: closed form {exact}, Monte Carlo {mc} ± {se}"
        );
    }
}

#[test]
fn kl_of_identical_distributions_is_zero() {
    let g = GaussianDiag::new(vec![0.3, -1.0], vec![0.5, 2.0]).unwrap();
    assert_eq!(g.kl(&g).unwrap(), 0.0);
    assert!(g.kl(&GaussianDiag::standard(3)).is_err());
}

#[test]
fn rank1_covariance_from_samples() {
    let g = GaussianRank1::new(vec![0.1, -0.2, 0.0], vec![0.5, 1.0, 0.8], vec![0.6, -0.3, 0.9]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let xs: Vec<Vec<f64>> = (0..n).map(|_| g.sample(&mut rng)).collect();
    let cov = g.covariance();
    for i in 0..3 {
        let mi = xs.iter().map(|x| x[i]).sum::<f64>() / n as f64;
        assert!((mi - g.mean[i]).abs() < 0.02);
        for j in 0..3 {
            let mj = xs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            let c = xs.iter().map(|x| (x[i] - mi) * (x[j] - mj)).sum::<f64>() / (n as f64 - 1.0);
            assert!((c - cov[[i, j]]).abs() < 0.03, "cov[{i},{j}] {c} vs {}", cov[[i, j]]);
        }
    }
}

#[test]
fn zero_perturbation_reduces_to_diagonal() {
    let x = [0.4, -0.3];
    let r1 = GaussianRank1::new(vec![0.0, 1.0], vec![0.7, 1.3], vec![0.0, 0.0]).unwrap();
    let dg = GaussianDiag::new(vec![0.0, 1.0], vec![0.7, 1.3]).unwrap();
    assert!((r1.log_pdf(&x).unwrap() - dg.log_pdf(&x).unwrap()).abs() < 1e-12);
}

#[test]
fn densities_reject_degenerate_inputs() {
    let g = GaussianRank1::new(vec![0.0], vec![0.0], vec![1.0]).unwrap();
    assert!(g.log_pdf(&[0.0]).is_err());
    assert!(GaussianRank1::new(vec![0.0, 1.0], vec![1.0], vec![0.0, 0.0]).is_err());
    assert!(GaussianDiag::new(vec![0.0], vec![-1.0]).is_err());
    let d = GaussianDiag::standard(2);
    assert!(d.log_pdf(&[0.0]).is_err());
}

fn rank1_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..6).prop_flat_map(|d| {
        (
            prop::collection::vec(-2.0..2.0f64, d),
            prop::collection::vec(0.2..2.0f64, d),
            prop::collection::vec(-1.5..1.5f64, d),
            prop::collection::vec(-3.0..3.0f64, d),
        )
    })
}

proptest! {
    #[test]
    fn kl_is_nonnegative(
        (qm, qs, pm, ps) in (1usize..6).prop_flat_map(|d| (
            prop::collection::vec(-3.0..3.0f64, d),
            prop::collection::vec(0.1..3.0f64, d),
            prop::collection::vec(-3.0..3.0f64, d),
            prop::collection::vec(0.1..3.0f64, d),
        ))
    ) {
        let q = GaussianDiag::new(qm, qs).unwrap();
        let p = GaussianDiag::new(pm, ps).unwrap();
        prop_assert!(kl_diag_diag(&q, &p).unwrap() >= -1e-12);
    }

    #[test]
    fn rank1_log_pdf_matches_dense((mean, std, u, x) in rank1_strategy()) {
        let g = GaussianRank1::new(mean.clone(), std, u).unwrap();
        let c = g.covariance();
        let d = mean.len();
        let cov = DMatrix::from_fn(d, d, |i, j| c[[i, j]]);
        let dense = dense_log_pdf(&x, &mean, &cov);
        let fast = g.log_pdf(&x).unwrap();
        prop_assert!((fast - dense).abs() < 1e-9 * (1.0 + dense.abs()), "{fast} vs {dense}");
        let log_det = 2.0 * cov.cholesky().unwrap().l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        prop_assert!((g.log_det().unwrap() - log_det).abs() < 1e-9);
    }

    #[test]
    fn diag_log_pdf_peaks_at_mean(
        (mean, std, x) in (1usize..6).prop_flat_map(|d| (
            prop::collection::vec(-2.0..2.0f64, d),
            prop::collection::vec(0.2..2.0f64, d),
            prop::collection::vec(-3.0..3.0f64, d),
        ))
    ) {
        let g = GaussianDiag::new(mean.clone(), std).unwrap();
        prop_assert!(g.log_pdf(&x).unwrap() <= g.log_pdf(&mean).unwrap() + 1e-12);
    }
}
