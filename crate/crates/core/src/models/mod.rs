//! Built-in models with closed-form or cheaply refit posteriors, used as
//! ground truth for the surrogates and estimators.

pub mod blr;
pub mod logistic;

pub use blr::{
    draw_gaussian, draw_posterior, exact_loo_blr, exact_loo_blr_refit, fit_conjugate_blr,
    fixed_noise_posterior, loglik_at, loglik_matrix, loglik_matrix_fixed_noise, per_obs_derivatives,
    per_obs_derivatives_fixed_noise, posterior_predictive_log_density, simulate_blr, BlrDataset,
    ConjugateBlrPosterior, NigPrior,
};
pub use logistic::{
    laplace_log_correction, logistic_laplace, logistic_log_posterior_gradient, logistic_loglik_matrix,
    logistic_loo_refit, logistic_per_obs_derivatives, simulate_logistic, LaplaceFit, LogisticDataset,
    REFIT_ORACLE_MAX_N,
};
