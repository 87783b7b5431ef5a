//! Bayesian linear regression with a conjugate normal–inverse-gamma prior.
//!
//! Parameter vectors for draws and derivatives are `(β_1, …, β_P, log σ)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::subsampling::{stream_rng, StreamPurpose};
use crate::surrogates::{GaussianPosteriorSummary, LogLikMatrix, PerObsDerivatives};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct BlrDataset {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub true_beta: DVector<f64>,
    pub noise_sd: f64,
    pub target_r2: f64,
}

impl BlrDataset {
    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    /// Copy with the given covariate columns removed.
    pub fn drop_columns(&self, columns: &[usize]) -> BlrDataset {
        let keep: Vec<usize> = (0..self.p()).filter(|c| !columns.contains(c)).collect();
        let design = self.design.select_columns(keep.iter());
        let true_beta = DVector::from_iterator(keep.len(), keep.iter().map(|&c| self.true_beta[c]));
        BlrDataset {
            design,
            response: self.response.clone(),
            true_beta,
            noise_sd: self.noise_sd,
            target_r2: self.target_r2,
        }
    }

    /// In-sample `R²` of the least-squares fit.
    pub fn sample_r2(&self) -> Result<f64> {
        let x = &self.design;
        let gram = x.transpose() * x;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("XᵀX is not positive definite".into()))?;
        let beta = chol.solve(&(x.transpose() * &self.response));
        let resid = &self.response - x * beta;
        let mean = self.response.mean();
        let sst: f64 = self.response.iter().map(|v| (v - mean).powi(2)).sum();
        Ok(1.0 - resid.norm_squared() / sst)
    }
}

/// Simulates `y = Xβ + ε` with standard-normal covariates. Dense mode sets
/// every coefficient to 1, sparse mode only the first. The noise level is
/// solved so that the population `R² = β'β / (β'β + σ²)` hits `target_r2`.
pub fn simulate_blr(n: usize, p: usize, target_r2: f64, sparse: bool, seed: u64) -> Result<BlrDataset> {
    if !(target_r2 > 0.0 && target_r2 < 1.0) {
        return Err(Error::InvalidArgument(format!("target R² must lie in (0, 1), got {target_r2}")));
    }
    if p == 0 || n < p + 2 {
        return Err(Error::InvalidArgument(format!("need n ≥ p + 2 and p ≥ 1 (n = {n}, p = {p})")));
    }
    let true_beta = if sparse {
        DVector::from_fn(p, |i, _| if i == 0 { 1.0 } else { 0.0 })
    } else {
        DVector::from_element(p, 1.0)
    };
    let signal: f64 = true_beta.norm_squared();
    let noise_sd = (signal * (1.0 - target_r2) / target_r2).sqrt();

    let mut rng = stream_rng(seed, 0, StreamPurpose::Data);
    let mut design = DMatrix::zeros(n, p);
    let mut response = DVector::zeros(n);
    for i in 0..n {
        for j in 0..p {
            design[(i, j)] = StandardNormal.sample(&mut rng);
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        response[i] = (design.row(i) * &true_beta)[0] + noise_sd * eps;
    }
    Ok(BlrDataset {
        design,
        response,
        true_beta,
        noise_sd,
        target_r2,
    })
}

/// `β | σ² ~ N(mean, σ² · coef_scale² · I)`, `σ² ~ InvGamma(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigPrior {
    pub coef_scale: f64,
    pub shape: f64,
    pub rate: f64,
}

impl Default for NigPrior {
    fn default() -> Self {
        Self {
            coef_scale: 10.0,
            shape: 1.0,
            rate: 1.0,
        }
    }
}

impl NigPrior {
    fn validate(&self) -> Result<()> {
        if self.coef_scale > 0.0 && self.shape > 0.0 && self.rate > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid normal-inverse-gamma prior {self:?}")))
        }
    }

    fn prior_precision(&self) -> f64 {
        1.0 / (self.coef_scale * self.coef_scale)
    }
}

/// `β | σ², y ~ N(mean, σ² V)`, `σ² | y ~ InvGamma(shape, rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateBlrPosterior {
    pub mean: DVector<f64>,
    /// `V = (V_0⁻¹ + XᵀX)⁻¹`.
    pub scaled_cov: DMatrix<f64>,
    pub shape: f64,
    pub rate: f64,
}

impl ConjugateBlrPosterior {
    /// Marginal posterior covariance of `β`, `E[σ²] V`.
    pub fn coef_covariance(&self) -> Result<DMatrix<f64>> {
        if self.shape <= 1.0 {
            return Err(Error::Degenerate("inverse-gamma shape ≤ 1 has no finite mean".into()));
        }
        Ok(&self.scaled_cov * (self.rate / (self.shape - 1.0)))
    }
}

fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let sv = x.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if x.nrows() < x.ncols() || !(min > 1e-10 * max.max(1e-300)) {
        return Err(Error::RankDeficient(format!(
            "{} × {} design, smallest/largest singular value {:e}",
            x.nrows(),
            x.ncols(),
            if max > 0.0 { min / max } else { 0.0 }
        )));
    }
    Ok(())
}

/// Exact conjugate update.
pub fn fit_conjugate_blr(data: &BlrDataset, prior: &NigPrior) -> Result<ConjugateBlrPosterior> {
    prior.validate()?;
    check_full_rank(&data.design)?;
    fit_from_parts(&data.design, &data.response, prior)
}

fn fit_from_parts(x: &DMatrix<f64>, y: &DVector<f64>, prior: &NigPrior) -> Result<ConjugateBlrPosterior> {
    let p = x.ncols();
    let n = x.nrows() as f64;
    let precision = x.transpose() * x + DMatrix::identity(p, p) * prior.prior_precision();
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("posterior precision is not positive definite".into()))?;
    let scaled_cov = chol.inverse();
    let mean = chol.solve(&(x.transpose() * y));
    // prior mean is zero, so μ0ᵀV0⁻¹μ0 vanishes
    let quad = y.norm_squared() - (mean.transpose() * &precision * &mean)[0];
    let rate = prior.rate + 0.5 * quad;
    if !(rate > 0.0) {
        return Err(Error::Degenerate(format!("posterior rate {rate} is not positive")));
    }
    Ok(ConjugateBlrPosterior {
        mean,
        scaled_cov: symmetrize(scaled_cov),
        shape: prior.shape + 0.5 * n,
        rate,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `S` independent posterior draws, rows `(β, log σ)`.
pub fn draw_posterior(posterior: &ConjugateBlrPosterior, draws: usize, seed: u64) -> Result<DMatrix<f64>> {
    let p = posterior.mean.len();
    let chol = posterior
        .scaled_cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("posterior covariance is not positive definite".into()))?;
    let l = chol.l();
    let gamma = Gamma::new(posterior.shape, 1.0 / posterior.rate)
        .map_err(|e| Error::Degenerate(format!("inverse-gamma posterior: {e}")))?;
    let mut rng = stream_rng(seed, 0, StreamPurpose::Posterior);
    let mut out = DMatrix::zeros(draws, p + 1);
    let mut z = DVector::zeros(p);
    for s in 0..draws {
        let precision: f64 = gamma.sample(&mut rng);
        let sigma = precision.recip().sqrt();
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let beta = &posterior.mean + &l * &z * sigma;
        for j in 0..p {
            out[(s, j)] = beta[j];
        }
        out[(s, p)] = sigma.ln();
    }
    Ok(out)
}

/// Gaussian log density of each observation at each draw.
pub fn loglik_matrix(data: &BlrDataset, draws: &DMatrix<f64>) -> Result<LogLikMatrix> {
    let p = data.p();
    if draws.ncols() != p + 1 {
        return Err(Error::LengthMismatch {
            context: "draw columns (β, log σ)",
            expected: p + 1,
            actual: draws.ncols(),
        });
    }
    let betas = draws.columns(0, p).into_owned();
    let log_sigmas: Vec<f64> = draws.column(p).iter().copied().collect();
    let inv_var: Vec<f64> = log_sigmas.iter().map(|ls| (-2.0 * ls).exp()).collect();
    // fitted[s, i] = x_iᵀ β_s
    let fitted = &betas * data.design.transpose();
    let columns: Vec<Vec<f64>> = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let y = data.response[i];
            (0..draws.nrows())
                .map(|s| {
                    let r = y - fitted[(s, i)];
                    -0.5 * LN_2PI - log_sigmas[s] - 0.5 * r * r * inv_var[s]
                })
                .collect()
        })
        .collect();
    LogLikMatrix::from_columns(columns)
}

/// `log p(y_i | β, σ)` at a single parameter vector `(β, log σ)`.
pub fn loglik_at(data: &BlrDataset, theta: &DVector<f64>) -> Result<Vec<f64>> {
    let p = data.p();
    crate::error::check_len("parameter vector (β, log σ)", p + 1, theta.len())?;
    let beta = theta.rows(0, p);
    let log_sigma = theta[p];
    let fitted = &data.design * beta;
    Ok((0..data.n())
        .map(|i| {
            let r = data.response[i] - fitted[i];
            -0.5 * LN_2PI - log_sigma - 0.5 * r * r * (-2.0 * log_sigma).exp()
        })
        .collect())
}

fn student_t_log_pdf(x: f64, dof: f64, loc: f64, scale: f64) -> f64 {
    let z = (x - loc) / scale;
    ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof)
        - 0.5 * (dof * std::f64::consts::PI).ln()
        - scale.ln()
        - 0.5 * (dof + 1.0) * (z * z / dof).ln_1p()
}

/// Log posterior predictive density of a new `(x, y)` under a conjugate posterior.
pub fn posterior_predictive_log_density(posterior: &ConjugateBlrPosterior, x: &DVector<f64>, y: f64) -> f64 {
    let h = (x.transpose() * &posterior.scaled_cov * x)[0];
    let loc = x.dot(&posterior.mean);
    let scale = (posterior.rate / posterior.shape * (1.0 + h)).sqrt();
    student_t_log_pdf(y, 2.0 * posterior.shape, loc, scale)
}

/// Exact `log p(y_i | y_{-i})` for every observation via rank-one downdates
/// of the posterior: with leverage `h = x_iᵀ V x_i` and residual
/// `e = y_i − x_iᵀ μ`, the held-out posterior has residual `e / (1 − h)`,
/// predictive scale factor `1 / (1 − h)` and rate `b − e² / (2(1 − h))`.
pub fn exact_loo_blr(data: &BlrDataset, prior: &NigPrior) -> Result<Vec<f64>> {
    let post = fit_conjugate_blr(data, prior)?;
    let shape = post.shape - 0.5;
    let vx = &data.design * &post.scaled_cov;
    let fitted = &data.design * &post.mean;
    (0..data.n())
        .into_par_iter()
        .map(|i| {
            let h: f64 = vx.row(i).dot(&data.design.row(i));
            let one_minus_h = 1.0 - h;
            if !(one_minus_h > 1e-12) {
                return Err(Error::RankDeficient(format!(
                    "removing observation {i} leaves the posterior improper (leverage {h})"
                )));
            }
            let e = data.response[i] - fitted[i];
            let rate = post.rate - e * e / (2.0 * one_minus_h);
            if !(rate > 0.0) {
                return Err(Error::Degenerate(format!("held-out rate for observation {i} is {rate}")));
            }
            let scale = (rate / shape / one_minus_h).sqrt();
            Ok(student_t_log_pdf(e / one_minus_h, 2.0 * shape, 0.0, scale))
        })
        .collect()
}

/// Brute-force LOO: refits the conjugate model once per held-out observation.
pub fn exact_loo_blr_refit(data: &BlrDataset, prior: &NigPrior) -> Result<Vec<f64>> {
    prior.validate()?;
    let n = data.n();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let x = data.design.select_rows(keep.iter());
            let y = DVector::from_iterator(n - 1, keep.iter().map(|&j| data.response[j]));
            check_full_rank(&x)?;
            let post = fit_from_parts(&x, &y, prior)?;
            let xi = data.design.row(i).transpose();
            Ok(posterior_predictive_log_density(&post, &xi, data.response[i]))
        })
        .collect()
}

/// Analytic gradients (and optionally Hessians) of the Gaussian
/// log-likelihood in `θ = (β, log σ)`.
///
/// With `r = y − xᵀβ`: `∂β = x r/σ²`, `∂logσ = r²/σ² − 1`,
/// `∂²ββ = −xxᵀ/σ²`, `∂²β logσ = −2 x r/σ²`, `∂²logσ² = −2 r²/σ²`.
pub fn per_obs_derivatives(
    data: &BlrDataset,
    theta_hat: &DVector<f64>,
    with_hessians: bool,
) -> Result<PerObsDerivatives> {
    let p = data.p();
    crate::error::check_len("parameter vector (β, log σ)", p + 1, theta_hat.len())?;
    let beta = theta_hat.rows(0, p);
    let inv_var = (-2.0 * theta_hat[p]).exp();
    let fitted = &data.design * beta;
    let n = data.n();
    let mut grads = DMatrix::zeros(n, p + 1);
    let mut hessians = with_hessians.then(|| Vec::with_capacity(n));
    for i in 0..n {
        let x = data.design.row(i);
        let r = data.response[i] - fitted[i];
        for j in 0..p {
            grads[(i, j)] = x[j] * r * inv_var;
        }
        grads[(i, p)] = r * r * inv_var - 1.0;
        if let Some(hs) = hessians.as_mut() {
            let mut h = DMatrix::zeros(p + 1, p + 1);
            for a in 0..p {
                for b in 0..p {
                    h[(a, b)] = -x[a] * x[b] * inv_var;
                }
                h[(a, p)] = -2.0 * x[a] * r * inv_var;
                h[(p, a)] = h[(a, p)];
            }
            h[(p, p)] = -2.0 * r * r * inv_var;
            hs.push(h);
        }
    }
    PerObsDerivatives::new(grads, hessians)
}

/// Gaussian posterior of `β` when the noise standard deviation is known.
pub fn fixed_noise_posterior(
    data: &BlrDataset,
    prior: &NigPrior,
    noise_sd: f64,
) -> Result<GaussianPosteriorSummary> {
    prior.validate()?;
    check_full_rank(&data.design)?;
    let post = fit_from_parts(&data.design, &data.response, prior)?;
    GaussianPosteriorSummary::new(post.mean, post.scaled_cov * (noise_sd * noise_sd))
}

/// Derivatives in `β` only, for a known noise standard deviation.
pub fn per_obs_derivatives_fixed_noise(
    data: &BlrDataset,
    beta_hat: &DVector<f64>,
    noise_sd: f64,
) -> Result<PerObsDerivatives> {
    let p = data.p();
    crate::error::check_len("coefficient vector", p, beta_hat.len())?;
    let inv_var = 1.0 / (noise_sd * noise_sd);
    let fitted = &data.design * beta_hat;
    let mut grads = DMatrix::zeros(data.n(), p);
    let mut hessians = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let x = data.design.row(i).transpose();
        let r = data.response[i] - fitted[i];
        grads.set_row(i, &(x.transpose() * (r * inv_var)));
        hessians.push(&x * x.transpose() * (-inv_var));
    }
    PerObsDerivatives::new(grads, Some(hessians))
}

/// `log N(y_i; x_iᵀβ, σ²)` for coefficient draws (rows) and known `σ`.
pub fn loglik_matrix_fixed_noise(data: &BlrDataset, betas: &DMatrix<f64>, noise_sd: f64) -> Result<LogLikMatrix> {
    crate::error::check_len("coefficient draw columns", data.p(), betas.ncols())?;
    let fitted = betas * data.design.transpose();
    let log_sigma = noise_sd.ln();
    let inv_var = 1.0 / (noise_sd * noise_sd);
    let columns: Vec<Vec<f64>> = (0..data.n())
        .into_par_iter()
        .map(|i| {
            (0..betas.nrows())
                .map(|s| {
                    let r = data.response[i] - fitted[(s, i)];
                    -0.5 * LN_2PI - log_sigma - 0.5 * r * r * inv_var
                })
                .collect()
        })
        .collect();
    LogLikMatrix::from_columns(columns)
}

/// Draws from `N(mean, cov)`, one per row.
pub fn draw_gaussian(summary: &GaussianPosteriorSummary, draws: usize, seed: u64) -> Result<DMatrix<f64>> {
    let p = summary.dim();
    let chol = summary
        .covariance()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut rng = stream_rng(seed, 0, StreamPurpose::Posterior);
    let mut out = DMatrix::zeros(draws, p);
    let mut z = DVector::zeros(p);
    for s in 0..draws {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let theta = summary.mean() + &l * &z;
        out.set_row(s, &theta.transpose());
    }
    Ok(out)
}
