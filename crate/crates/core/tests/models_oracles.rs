mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elpd_diff::models::{
    draw_posterior, exact_loo_blr, fit_conjugate_blr, laplace_log_correction, logistic_laplace,
    logistic_loglik_matrix, logistic_loo_refit, loglik_matrix, per_obs_derivatives, simulate_blr,
    simulate_logistic, draw_gaussian, NigPrior,
};
use elpd_diff::surrogates::{psis_surrogate_corrected, LogLikSource};

#[test]
fn posterior_draw_mean_is_within_four_standard_errors() {
    let data = simulate_blr(200, 4, 0.5, false, 21).unwrap();
    let post = fit_conjugate_blr(&data, &NigPrior::default()).unwrap();
    let cov = post.coef_covariance().unwrap();
    let s = 10_000;
    let draws = draw_posterior(&post, s, 1).unwrap();
    for j in 0..4 {
        let col: Vec<f64> = draws.column(j).iter().copied().collect();
        let se = (cov[(j, j)] / s as f64).sqrt();
        let z = (common::mean(&col) - post.mean[j]) / se;
        assert!(z.abs() < 4.0, "coefficient {j}: z = {z}");
    }
}

#[test]
fn posterior_draw_covariance_is_within_ten_percent() {
    let data = simulate_blr(100, 3, 0.5, false, 22).unwrap();
    let post = fit_conjugate_blr(&data, &NigPrior::default()).unwrap();
    let cov = post.coef_covariance().unwrap();
    let s = 100_000;
    let draws = draw_posterior(&post, s, 2).unwrap();
    let beta = draws.columns(0, 3).into_owned();
    let means: Vec<f64> = (0..3).map(|j| common::mean(beta.column(j).as_slice())).collect();
    let emp = DMatrix::from_fn(3, 3, |a, b| {
        (0..s).map(|k| (beta[(k, a)] - means[a]) * (beta[(k, b)] - means[b])).sum::<f64>() / (s as f64 - 1.0)
    });
    let rel = (&emp - &cov).norm() / cov.norm();
    assert!(rel < 0.1, "Frobenius relative error {rel}");
}

#[test]
fn loglik_matrix_matches_scalar_loop() {
    let data = simulate_blr(40, 3, 0.5, true, 23).unwrap();
    let post = fit_conjugate_blr(&data, &NigPrior::default()).unwrap();
    let draws = draw_posterior(&post, 50, 3).unwrap();
    let m = loglik_matrix(&data, &draws).unwrap();
    for s in 0..50 {
        let theta: Vec<f64> = draws.row(s).iter().copied().collect();
        for i in 0..40 {
            let x: Vec<f64> = data.design.row(i).iter().copied().collect();
            let oracle = common::gaussian_loglik(&x, data.response[i], &theta);
            assert!((m.get(s, i) - oracle).abs() < 1e-12, "draw {s}, obs {i}");
        }
    }
}

#[test]
fn rank_one_loo_matches_independent_refit_on_grid() {
    let prior = NigPrior::default();
    for (k, n) in [8usize, 15, 30, 50].into_iter().enumerate() {
        for p in [1usize, 3] {
            let data = simulate_blr(n, p, 0.5, k % 2 == 1, 100 + k as u64).unwrap();
            let fast = exact_loo_blr(&data, &prior).unwrap();
            let oracle = common::brute_force_loo(&data, &prior);
            for (i, (a, b)) in fast.iter().zip(&oracle).enumerate() {
                assert!((a - b).abs() < 1e-9, "n={n} p={p} obs {i}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn exact_loo_matches_large_sample_importance_sampling() {
    let data = simulate_blr(100, 3, 0.5, false, 24).unwrap();
    let post = fit_conjugate_blr(&data, &NigPrior::default()).unwrap();
    let draws = draw_posterior(&post, 100_000, 4).unwrap();
    let m = loglik_matrix(&data, &draws).unwrap();
    let exact = exact_loo_blr(&data, &NigPrior::default()).unwrap();
    for i in 0..100 {
        let is = common::is_loo(m.column(i));
        assert!((is - exact[i]).abs() < 0.01, "obs {i}: IS {is} vs exact {}", exact[i]);
    }
}

#[test]
fn derivatives_match_finite_differences_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for case in 0..100 {
        let p = 1 + case % 4;
        let data = simulate_blr(p + 3, p, 0.5, false, 1000 + case as u64).unwrap();
        let theta: Vec<f64> = (0..=p).map(|j| if j < p { rng.random_range(-2.0..2.0) } else { rng.random_range(-1.0..1.0) }).collect();
        let d = per_obs_derivatives(&data, &DVector::from_vec(theta.clone()), true).unwrap();
        for i in 0..data.n() {
            let x: Vec<f64> = data.design.row(i).iter().copied().collect();
            let y = data.response[i];
            let f = |t: &[f64]| common::gaussian_loglik(&x, y, t);
            let g_fd = common::fd_gradient(&f, &theta, 1e-5);
            let g: Vec<f64> = d.gradients().row(i).iter().copied().collect();
            let e = common::rel_err(&g, &g_fd);
            assert!(e < 1e-6, "case {case} obs {i}: gradient error {e}");

            let h = &d.hessians().unwrap()[i];
            for a in 0..=p {
                let ga = |t: &[f64]| {
                    let dd = per_obs_derivatives(&data, &DVector::from_vec(t.to_vec()), false).unwrap();
                    dd.gradients()[(i, a)]
                };
                let row_fd = common::fd_gradient(&ga, &theta, 1e-5);
                let row: Vec<f64> = h.row(a).iter().copied().collect();
                let e = common::rel_err(&row, &row_fd);
                assert!(e < 1e-5, "case {case} obs {i} row {a}: Hessian error {e}");
            }
        }
    }
}

#[test]
fn logistic_psis_from_laplace_draws_matches_refit_oracle() {
    let data = simulate_logistic(200, &[0.2, 1.0, -0.7], 26).unwrap();
    let prior_sd = 5.0;
    let fit = logistic_laplace(&data, prior_sd, 100, 1e-10).unwrap();
    let draws = draw_gaussian(&fit.summary, 4000, 5).unwrap();
    let ll = logistic_loglik_matrix(&data, &draws).unwrap();
    let corr = laplace_log_correction(&data, &fit, &draws, prior_sd).unwrap();
    let psis = psis_surrogate_corrected(&ll, Some(&corr)).unwrap();
    let oracle = logistic_loo_refit(&data, prior_sd, 100, 1e-10).unwrap();
    let err: Vec<f64> = psis.values().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).collect();
    let mae = common::mean(&err);
    assert!(mae < 0.05, "mean abs error {mae}");
}

#[test]
fn logistic_refit_oracle_is_capped() {
    let data = simulate_logistic(501, &[0.0, 1.0], 27).unwrap();
    assert!(logistic_loo_refit(&data, 5.0, 50, 1e-8).is_err());
}
