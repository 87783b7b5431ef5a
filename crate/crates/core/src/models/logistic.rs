//! Logistic regression with a Gaussian prior, approximated by a Laplace fit.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Uniform, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::log_sum_exp_unchecked;
use crate::subsampling::{stream_rng, StreamPurpose};
use crate::surrogates::{GaussianPosteriorSummary, LogLikMatrix, PerObsDerivatives};

/// Largest `n` for which the per-observation refit oracle runs.
pub const REFIT_ORACLE_MAX_N: usize = 500;

const MODE_DIVERGENCE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticDataset {
    /// First column is the intercept.
    pub design: DMatrix<f64>,
    /// 0/1 outcomes.
    pub response: DVector<f64>,
}

impl LogisticDataset {
    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }
}

/// Intercept plus `p − 1` standard-normal covariates with coefficients `beta`.
pub fn simulate_logistic(n: usize, beta: &[f64], seed: u64) -> Result<LogisticDataset> {
    let p = beta.len();
    if p == 0 || n <= p {
        return Err(Error::InvalidArgument(format!("need n > p ≥ 1 (n = {n}, p = {p})")));
    }
    let mut rng = stream_rng(seed, 0, StreamPurpose::Data);
    let unit = Uniform::new(0.0, 1.0).expect("valid unit interval");
    let mut design = DMatrix::zeros(n, p);
    let mut response = DVector::zeros(n);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for j in 1..p {
            design[(i, j)] = StandardNormal.sample(&mut rng);
        }
        let eta: f64 = (0..p).map(|j| design[(i, j)] * beta[j]).sum();
        response[i] = if unit.sample(&mut rng) < sigmoid(eta) { 1.0 } else { 0.0 };
    }
    Ok(LogisticDataset { design, response })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn bernoulli_log_lik(y: f64, eta: f64) -> f64 {
    if y > 0.5 {
        log_sigmoid(eta)
    } else {
        log_sigmoid(-eta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceFit {
    pub summary: GaussianPosteriorSummary,
    pub iterations: usize,
    pub gradient_norm: f64,
}

fn log_posterior_gradient_hessian(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    prior_precision: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let p = x.ncols();
    let eta = x * beta;
    let mut grad = -beta * prior_precision;
    let mut neg_hess = DMatrix::identity(p, p) * prior_precision;
    for i in 0..x.nrows() {
        let mu = sigmoid(eta[i]);
        let xi = x.row(i);
        grad += xi.transpose() * (y[i] - mu);
        let w = mu * (1.0 - mu);
        neg_hess += xi.transpose() * xi * w;
    }
    (grad, neg_hess)
}

fn log_posterior(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, prior_precision: f64) -> f64 {
    let eta = x * beta;
    let lik: f64 = (0..x.nrows()).map(|i| bernoulli_log_lik(y[i], eta[i])).sum();
    lik - 0.5 * prior_precision * beta.norm_squared()
}

fn newton_mode(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    start: DVector<f64>,
    prior_sd: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LaplaceFit> {
    let prior_precision = 1.0 / (prior_sd * prior_sd);
    let mut beta = start;
    let mut current = log_posterior(x, y, &beta, prior_precision);
    for iter in 0..=max_iter {
        let (grad, neg_hess) = log_posterior_gradient_hessian(x, y, &beta, prior_precision);
        let gnorm = grad.amax();
        let chol = neg_hess
            .cholesky()
            .ok_or_else(|| Error::Degenerate("negative Hessian lost positive definiteness".into()))?;
        if gnorm < tol {
            let cov = chol.inverse();
            let cov = (&cov + cov.transpose()) * 0.5;
            return Ok(LaplaceFit {
                summary: GaussianPosteriorSummary::new(beta, cov)?,
                iterations: iter,
                gradient_norm: gnorm,
            });
        }
        if iter == max_iter {
            return Err(Error::NoConvergence {
                iterations: max_iter,
                gradient_norm: gnorm,
            });
        }
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        loop {
            let candidate = &beta + &step * scale;
            let value = log_posterior(x, y, &candidate, prior_precision);
            if value >= current - 1e-12 * (1.0 + current.abs()) || scale < 1e-10 {
                beta = candidate;
                current = value;
                break;
            }
            scale *= 0.5;
        }
        if !beta.iter().all(|b| b.is_finite()) || beta.amax() > MODE_DIVERGENCE {
            return Err(Error::Degenerate(format!(
                "posterior mode diverges (|β|∞ = {:e}); data may be separable",
                beta.amax()
            )));
        }
    }
    unreachable!("loop returns on the final iteration")
}

/// Newton-optimised posterior mode and inverse negative Hessian under
/// independent `N(0, prior_sd²)` coefficient priors.
pub fn logistic_laplace(data: &LogisticDataset, prior_sd: f64, max_iter: usize, tol: f64) -> Result<LaplaceFit> {
    if !(prior_sd > 0.0) {
        return Err(Error::InvalidArgument(format!("prior sd must be positive, got {prior_sd}")));
    }
    newton_mode(&data.design, &data.response, DVector::zeros(data.p()), prior_sd, max_iter, tol)
}

/// Gradient of the log posterior at `beta`.
pub fn logistic_log_posterior_gradient(data: &LogisticDataset, beta: &DVector<f64>, prior_sd: f64) -> DVector<f64> {
    log_posterior_gradient_hessian(&data.design, &data.response, beta, 1.0 / (prior_sd * prior_sd)).0
}

/// `log ∫ p(y | η) N(η; mean, var) dη` by trapezoidal quadrature in log space.
fn gaussian_mixed_log_lik(y: f64, mean: f64, var: f64) -> f64 {
    const NODES: usize = 2001;
    const HALF_WIDTH: f64 = 12.0;
    let sd = var.max(0.0).sqrt();
    if sd == 0.0 {
        return bernoulli_log_lik(y, mean);
    }
    let h = 2.0 * HALF_WIDTH / (NODES - 1) as f64;
    let terms: Vec<f64> = (0..NODES)
        .map(|k| {
            let z = -HALF_WIDTH + k as f64 * h;
            let w: f64 = if k == 0 || k == NODES - 1 { 0.5 } else { 1.0 };
            bernoulli_log_lik(y, mean + sd * z) - 0.5 * z * z + w.ln()
        })
        .collect();
    log_sum_exp_unchecked(&terms) + h.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// LOO oracle: one Laplace refit per held-out observation, then the held-out
/// predictive density integrated over the refit's Gaussian.
pub fn logistic_loo_refit(
    data: &LogisticDataset,
    prior_sd: f64,
    max_iter: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    let n = data.n();
    if n > REFIT_ORACLE_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "refit oracle is limited to n ≤ {REFIT_ORACLE_MAX_N}, got {n}"
        )));
    }
    let full = logistic_laplace(data, prior_sd, max_iter, tol)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let x = data.design.select_rows(keep.iter());
            let y = DVector::from_iterator(n - 1, keep.iter().map(|&j| data.response[j]));
            let fit = newton_mode(&x, &y, full.summary.mean().clone(), prior_sd, max_iter, tol)?;
            let xi = data.design.row(i).transpose();
            let mean = xi.dot(fit.summary.mean());
            let var = (xi.transpose() * fit.summary.covariance() * &xi)[0];
            Ok(gaussian_mixed_log_lik(data.response[i], mean, var))
        })
        .collect()
}

pub fn logistic_loglik_matrix(data: &LogisticDataset, draws: &DMatrix<f64>) -> Result<LogLikMatrix> {
    crate::error::check_len("draw columns", data.p(), draws.ncols())?;
    let eta = draws * data.design.transpose();
    let columns: Vec<Vec<f64>> = (0..data.n())
        .into_par_iter()
        .map(|i| {
            (0..draws.nrows())
                .map(|s| bernoulli_log_lik(data.response[i], eta[(s, i)]))
                .collect()
        })
        .collect();
    LogLikMatrix::from_columns(columns)
}

/// `log p(θ_s | y) − log q(θ_s)` up to a constant, for draws from the
/// Laplace approximation `q`.
pub fn laplace_log_correction(
    data: &LogisticDataset,
    fit: &LaplaceFit,
    draws: &DMatrix<f64>,
    prior_sd: f64,
) -> Result<Vec<f64>> {
    let prior_precision = 1.0 / (prior_sd * prior_sd);
    let precision = fit
        .summary
        .covariance()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("Laplace covariance is not positive definite".into()))?
        .inverse();
    Ok((0..draws.nrows())
        .into_par_iter()
        .map(|s| {
            let theta = draws.row(s).transpose();
            let d = &theta - fit.summary.mean();
            let log_q = -0.5 * (d.transpose() * &precision * &d)[0];
            log_posterior(&data.design, &data.response, &theta, prior_precision) - log_q
        })
        .collect())
}

/// Gradients `(y − μ) x` and Hessians `−μ(1 − μ) x xᵀ` of each observation's log-likelihood.
pub fn logistic_per_obs_derivatives(
    data: &LogisticDataset,
    beta_hat: &DVector<f64>,
    with_hessians: bool,
) -> Result<PerObsDerivatives> {
    crate::error::check_len("coefficient vector", data.p(), beta_hat.len())?;
    let eta = &data.design * beta_hat;
    let mut grads = DMatrix::zeros(data.n(), data.p());
    let mut hessians = with_hessians.then(|| Vec::with_capacity(data.n()));
    for i in 0..data.n() {
        let mu = sigmoid(eta[i]);
        let x = data.design.row(i);
        grads.set_row(i, &(x * (data.response[i] - mu)));
        if let Some(hs) = hessians.as_mut() {
            hs.push(x.transpose() * x * (-mu * (1.0 - mu)));
        }
    }
    PerObsDerivatives::new(grads, hessians)
}
