//! Independent oracles shared by the integration and acceptance tests. None of
//! these call into the library's numerics.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, StudentsT};

use elpd_diff::models::{BlrDataset, NigPrior};

/// Naive `log Σ exp(v)` with max shift.
pub fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Importance-sampling LOO from full-posterior draws of a log-likelihood
/// column: `−log mean exp(−ℓ)`.
pub fn is_loo(col: &[f64]) -> f64 {
    let neg: Vec<f64> = col.iter().map(|v| -v).collect();
    -(lse(&neg) - (col.len() as f64).ln())
}

/// Normal-inverse-gamma posterior predictive log density at `(x, y)` after
/// fitting `(design, response)` from scratch.
pub fn nig_predictive(design: &DMatrix<f64>, response: &DVector<f64>, prior: &NigPrior, x: &DVector<f64>, y: f64) -> f64 {
    let p = design.ncols();
    let n = design.nrows() as f64;
    let precision = design.transpose() * design + DMatrix::identity(p, p) / (prior.coef_scale * prior.coef_scale);
    let v = precision.clone().try_inverse().expect("invertible precision");
    let mu = &v * (design.transpose() * response);
    let a = prior.shape + 0.5 * n;
    let b = prior.rate + 0.5 * (response.dot(response) - (mu.transpose() * &precision * &mu)[0]);
    let scale2 = b / a * (1.0 + (x.transpose() * &v * x)[0]);
    StudentsT::new(x.dot(&mu), scale2.sqrt(), 2.0 * a)
        .expect("valid t")
        .ln_pdf(y)
}

/// Brute-force LOO by refitting without each observation.
pub fn brute_force_loo(data: &BlrDataset, prior: &NigPrior) -> Vec<f64> {
    let n = data.n();
    (0..n)
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let x = data.design.select_rows(keep.iter());
            let y = DVector::from_iterator(n - 1, keep.iter().map(|&j| data.response[j]));
            nig_predictive(&x, &y, prior, &data.design.row(i).transpose(), data.response[i])
        })
        .collect()
}

/// Scalar-loop Gaussian log density for θ = (β, log σ).
pub fn gaussian_loglik(x: &[f64], y: f64, theta: &[f64]) -> f64 {
    let p = x.len();
    let mut fit = 0.0;
    for j in 0..p {
        fit += x[j] * theta[j];
    }
    let log_sigma = theta[p];
    let r = y - fit;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - log_sigma - r * r / (2.0 * (2.0 * log_sigma).exp())
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|j| {
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[j] += h;
            dn[j] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// Max-norm relative error with a floor of 1 on the denominator.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(1.0, f64::max);
    num / den
}

/// Sample mean and variance (divisor N − 1) with a standard error for the
/// variance, `√((m₄ − s⁴)/N)`.
pub fn variance_with_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (var, ((m4 - var * var) / n).max(0.0).sqrt())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}
