use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempvae::benchmarks::{
    garch_fit, garch_forecast, historical_var, read_params_csv, GarchParams, GarchStack,
};
use tempvae::Error;

#[test]
fn iid_normal_fit_has_unit_unconditional_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let r: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let fit = garch_fit(&r).unwrap();
    let uv = fit.params.unconditional_variance();
    assert!((uv - 1.0).abs() < 0.1, "unconditional variance {uv}");
}

#[test]
fn fit_beats_true_parameters_and_stays_stationary() {
    let truth = GarchParams::new(0.05, 0.1, 0.1, 0.8).unwrap();
    for seed in 0..3 {
        let r = truth.simulate(5_000, &mut ChaCha8Rng::seed_from_u64(seed));
        let fit = garch_fit(&r).unwrap();
        assert!(fit.params.alpha + fit.params.beta < 1.0);
        assert!(fit.log_likelihood >= truth.log_likelihood(&r) - 1e-6);
    }
}

#[test]
fn non_convergence_returns_best_point() {
    let truth = GarchParams::new(0.0, 0.1, 0.1, 0.8).unwrap();
    let r = truth.simulate(500, &mut ChaCha8Rng::seed_from_u64(1));
    let nm = tempvae::benchmarks::NelderMead {
        max_iterations: 5,
        ..Default::default()
    };
    match tempvae::benchmarks::garch_fit_with(&r, &nm) {
        Err(Error::NoConvergence { best_point, .. }) => {
            assert_eq!(best_point.len(), 4);
            let p = GarchParams::new(best_point[0], best_point[1], best_point[2], best_point[3]);
            assert!(p.is_ok(), "best point must be a valid parameter set");
        }
        other => panic!("expected NoConvergence, got {other:?}"),
    }
}

#[test]
fn params_csv_round_trip() {
    let truth = GarchParams::new(0.0, 0.1, 0.1, 0.8).unwrap();
    let a = truth.simulate(800, &mut ChaCha8Rng::seed_from_u64(2));
    let b = truth.simulate(800, &mut ChaCha8Rng::seed_from_u64(3));
    let r = ndarray::Array2::from_shape_fn((800, 2), |(t, j)| if j == 0 { a[t] } else { b[t] });
    let stack = GarchStack::fit(r.view(), &["A".into(), "B".into()]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("garch.csv");
    stack.write_csv(&path).unwrap();
    let (assets, params) = read_params_csv(&path).unwrap();
    assert_eq!(assets, vec!["A", "B"]);
    for (p, q) in params.iter().zip(stack.params()) {
        assert!((p.alpha - q.alpha).abs() < 1e-11 * (1.0 + q.alpha));
        assert!((p.omega - q.omega).abs() < 1e-11 * (1.0 + q.omega));
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("asset,mu,omega,alpha,beta,loglik"));
    let g = stack.forecast(r.view()).unwrap();
    assert_eq!(g.dim(), 2);
    assert_eq!(g.std[0], garch_forecast(&stack.fits[0].params, &a).std[0]);
}

fn sorted_kth(w: &[f64], level: f64) -> f64 {
    let mut v = w.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((w.len() as f64) * (1.0 - level)).round().max(1.0) as usize;
    v[k - 1]
}

proptest! {
    #[test]
    fn variances_stay_positive(
        mu in -1.0..1.0f64,
        omega in 1e-6..2.0f64,
        alpha in 0.0..0.5f64,
        beta_share in 0.0..0.99f64,
        r in prop::collection::vec(-10.0..10.0f64, 1..200),
    ) {
        let beta = (1.0 - alpha) * beta_share * 0.999;
        let p = GarchParams::new(mu, omega, alpha, beta).unwrap();
        prop_assert!(p.variances(&r, 0.5).iter().all(|&v| v > 0.0));
        prop_assert!(garch_forecast(&p, &r).std[0] > 0.0);
    }

    #[test]
    fn historical_var_matches_sort_oracle(
        w in prop::collection::vec(-0.1..0.1f64, 20..400),
        level in prop::sample::select(vec![0.95, 0.99]),
    ) {
        prop_assert_eq!(historical_var(&w, level).unwrap(), sorted_kth(&w, level));
    }
}
