//! Subsampling estimators of elpd_loo, its sampling variance and the
//! data variability `σ²_loo`, for single models and model differences.
//!
//! `π̃` is the full-length surrogate vector and `π` the exact LOO values at the
//! subsample, aligned with the plan's index order.

use serde::Serialize;

use crate::error::{check_finite, check_len, Error, Result};
use crate::numerics::{pairwise_sum, sample_variance};
use crate::subsampling::{Scheme, SubsamplePlan};
use crate::surrogates::{SurrogateMethod, SurrogateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Difference estimator under simple random sampling.
    Diff,
    /// Hansen–Hurwitz estimator under PPS with replacement.
    Hh,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Diff => "diff",
            Estimator::Hh => "hh",
        }
    }
}

/// Estimate of `σ²_loo = (1/n) Σ (π_i − π̄)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sigma2Loo {
    /// Unbiased estimate; may be negative for small subsamples.
    pub raw: f64,
    /// `max(raw, 0)`.
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElpdEstimate {
    /// Total-scale estimate of `Σ π_i`.
    pub elpd_hat: f64,
    /// Square root of the estimated subsampling variance.
    pub se_subsampling: f64,
    /// `√(n σ̂²_loo)`, total scale. `None` for the Hansen–Hurwitz baseline.
    pub sigma_loo_hat: Option<f64>,
    pub sigma2_loo: Option<Sigma2Loo>,
    pub n: usize,
    pub m: usize,
    pub estimator: Estimator,
    pub surrogate_method: SurrogateMethod,
}

impl ElpdEstimate {
    /// Mean-scale estimate `elpd_hat / n`.
    pub fn elpd_mean(&self) -> f64 {
        self.elpd_hat / self.n as f64
    }

    pub fn sigma_loo_degenerate(&self) -> bool {
        self.sigma2_loo.is_some_and(|s| s.degenerate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonResult {
    pub elpd_d_hat: f64,
    pub se_d: f64,
    pub sigma_d_hat: f64,
    pub sigma_d_degenerate: bool,
    /// `√(σ̂²_A + σ̂²_B)` on the total scale, ignoring the covariance.
    pub naive_sigma_d: f64,
    pub per_model: [ElpdEstimate; 2],
}

struct Residuals {
    n: f64,
    m: f64,
    residuals: Vec<f64>,
}

fn residuals(surrogate: &[f64], exact_at_sample: &[f64], plan: &SubsamplePlan) -> Result<Residuals> {
    check_len("surrogate length vs population size", plan.n(), surrogate.len())?;
    check_len("exact values vs subsample size", plan.m(), exact_at_sample.len())?;
    check_finite("exact LOO values", exact_at_sample)?;
    let residuals = plan
        .indices()
        .iter()
        .zip(exact_at_sample)
        .map(|(&i, &pi)| pi - surrogate[i])
        .collect();
    Ok(Residuals {
        n: plan.n() as f64,
        m: plan.m() as f64,
        residuals,
    })
}

fn require_srs(plan: &SubsamplePlan) -> Result<()> {
    if plan.scheme() == Scheme::PpsWr {
        return Err(Error::WrongScheme(
            "the difference estimator needs an srs_wor or srs_wr plan; use hh_elpd for pps_wr".into(),
        ));
    }
    Ok(())
}

/// `Σ π̃_i + (n/m) Σ_{j∈S} (π_j − π̃_j)`.
pub fn diff_elpd(surrogate: &[f64], exact_at_sample: &[f64], plan: &SubsamplePlan) -> Result<f64> {
    require_srs(plan)?;
    let r = residuals(surrogate, exact_at_sample, plan)?;
    Ok(pairwise_sum(surrogate) + r.n / r.m * pairwise_sum(&r.residuals))
}

/// `n² (1 − m/n) s²_e / m` for without-replacement plans.
pub fn diff_variance(surrogate: &[f64], exact_at_sample: &[f64], plan: &SubsamplePlan) -> Result<f64> {
    if plan.scheme() != Scheme::SrsWor {
        return Err(Error::WrongScheme(format!(
            "diff_variance assumes srs_wor; use diff_variance_wr for a {} plan",
            plan.scheme()
        )));
    }
    let r = residuals(surrogate, exact_at_sample, plan)?;
    let s2 = sample_variance(&r.residuals)?;
    Ok(r.n * r.n * (1.0 - r.m / r.n) * s2 / r.m)
}

/// `n² s²_e / m` for with-replacement plans.
pub fn diff_variance_wr(surrogate: &[f64], exact_at_sample: &[f64], plan: &SubsamplePlan) -> Result<f64> {
    if plan.scheme() != Scheme::SrsWr {
        return Err(Error::WrongScheme(format!(
            "diff_variance_wr assumes srs_wr, got {}",
            plan.scheme()
        )));
    }
    let r = residuals(surrogate, exact_at_sample, plan)?;
    let s2 = sample_variance(&r.residuals)?;
    Ok(r.n * r.n * s2 / r.m)
}

fn diff_variance_for(surrogate: &[f64], exact_at_sample: &[f64], plan: &SubsamplePlan) -> Result<f64> {
    match plan.scheme() {
        Scheme::SrsWor => diff_variance(surrogate, exact_at_sample, plan),
        Scheme::SrsWr => diff_variance_wr(surrogate, exact_at_sample, plan),
        Scheme::PpsWr => require_srs(plan).map(|_| 0.0),
    }
}

/// Unbiased estimate of `σ²_loo` as `â − b̂`, where `â` estimates `(1/n) Σ π²`
/// with `π̃²` as auxiliary variable and `b̂` estimates `((1/n) Σ π)²` with the
/// estimated sampling variance removed from `t̂_e²`.
pub fn diff_sigma2_loo(
    surrogate: &[f64],
    exact_at_sample: &[f64],
    plan: &SubsamplePlan,
) -> Result<Sigma2Loo> {
    let variance = diff_variance_for(surrogate, exact_at_sample, plan)?;
    let r = residuals(surrogate, exact_at_sample, plan)?;
    let (n, m) = (r.n, r.m);

    let t_sur = pairwise_sum(surrogate);
    let sur_sq: Vec<f64> = surrogate.iter().map(|v| v * v).collect();
    let t_sur_sq = pairwise_sum(&sur_sq);
    let eps: Vec<f64> = plan
        .indices()
        .iter()
        .zip(exact_at_sample)
        .map(|(&i, &pi)| pi * pi - sur_sq[i])
        .collect();
    let t_eps_hat = n / m * pairwise_sum(&eps);
    let a_hat = (t_sur_sq + t_eps_hat) / n;

    let t_e_hat = n / m * pairwise_sum(&r.residuals);
    let t_pi_hat = t_sur + t_e_hat;
    let b_hat = (t_e_hat * t_e_hat - variance + 2.0 * t_sur * t_pi_hat - t_sur * t_sur) / (n * n);

    let raw = a_hat - b_hat;
    Ok(Sigma2Loo {
        raw,
        value: raw.max(0.0),
        degenerate: raw < 0.0,
    })
}

fn hh_ratios(exact_at_sample: &[f64], plan: &SubsamplePlan) -> Result<Vec<f64>> {
    let probs = match (plan.scheme(), plan.draw_probs()) {
        (Scheme::PpsWr, Some(p)) => p,
        _ => {
            return Err(Error::WrongScheme(
                "the Hansen-Hurwitz estimator needs a pps_wr plan with draw probabilities".into(),
            ))
        }
    };
    check_len("exact values vs subsample size", plan.m(), exact_at_sample.len())?;
    check_finite("exact LOO values", exact_at_sample)?;
    plan.indices()
        .iter()
        .zip(exact_at_sample)
        .map(|(&i, &pi)| {
            let p = probs[i];
            if p <= 0.0 {
                Err(Error::Degenerate(format!("draw probability of unit {i} is zero")))
            } else {
                Ok(pi / p)
            }
        })
        .collect()
}

/// `(1/m) Σ_{j∈S} π_j / p_j`.
pub fn hh_elpd(exact_at_sample: &[f64], plan: &SubsamplePlan) -> Result<f64> {
    let ratios = hh_ratios(exact_at_sample, plan)?;
    Ok(pairwise_sum(&ratios) / ratios.len() as f64)
}

/// `(1/(m(m−1))) Σ (π_j/p_j − t̂)²`.
pub fn hh_variance(exact_at_sample: &[f64], plan: &SubsamplePlan) -> Result<f64> {
    let ratios = hh_ratios(exact_at_sample, plan)?;
    Ok(sample_variance(&ratios)? / ratios.len() as f64)
}

/// Point estimate, subsampling SE and `σ̂_loo` for one model.
pub fn estimate_model(
    surrogate: &SurrogateVector,
    exact_at_sample: &[f64],
    plan: &SubsamplePlan,
) -> Result<ElpdEstimate> {
    estimate_values(surrogate.values(), surrogate.method(), exact_at_sample, plan)
}

fn estimate_values(
    surrogate: &[f64],
    method: SurrogateMethod,
    exact_at_sample: &[f64],
    plan: &SubsamplePlan,
) -> Result<ElpdEstimate> {
    let n = plan.n();
    let m = plan.m();
    if plan.scheme() == Scheme::PpsWr {
        check_len("surrogate length vs population size", n, surrogate.len())?;
        let elpd_hat = hh_elpd(exact_at_sample, plan)?;
        let var = hh_variance(exact_at_sample, plan)?;
        return Ok(ElpdEstimate {
            elpd_hat,
            se_subsampling: var.max(0.0).sqrt(),
            sigma_loo_hat: None,
            sigma2_loo: None,
            n,
            m,
            estimator: Estimator::Hh,
            surrogate_method: method,
        });
    }
    let elpd_hat = diff_elpd(surrogate, exact_at_sample, plan)?;
    let var = diff_variance_for(surrogate, exact_at_sample, plan)?;
    let sigma2 = diff_sigma2_loo(surrogate, exact_at_sample, plan)?;
    Ok(ElpdEstimate {
        elpd_hat,
        se_subsampling: var.max(0.0).sqrt(),
        sigma_loo_hat: Some((n as f64 * sigma2.value).sqrt()),
        sigma2_loo: Some(sigma2),
        n,
        m,
        estimator: Estimator::Diff,
        surrogate_method: method,
    })
}

/// Errors unless both models were evaluated on the same subsample.
pub fn ensure_same_plan(a: &SubsamplePlan, b: &SubsamplePlan) -> Result<()> {
    if a.n() == b.n() && a.scheme() == b.scheme() && a.indices() == b.indices() {
        Ok(())
    } else {
        Err(Error::PlanMismatch)
    }
}

/// Estimates `elpd_A − elpd_B` by applying the difference estimator to the
/// pointwise differences, which accounts for the covariance between models.
pub fn compare_models(
    surrogate_a: &SurrogateVector,
    surrogate_b: &SurrogateVector,
    exact_a_at_sample: &[f64],
    exact_b_at_sample: &[f64],
    plan: &SubsamplePlan,
) -> Result<ComparisonResult> {
    check_len("model B observation count", surrogate_a.len(), surrogate_b.len())?;
    check_len("model B subsample values", exact_a_at_sample.len(), exact_b_at_sample.len())?;
    require_srs(plan)?;

    let sur_d: Vec<f64> = surrogate_a
        .values()
        .iter()
        .zip(surrogate_b.values())
        .map(|(a, b)| a - b)
        .collect();
    let exact_d: Vec<f64> = exact_a_at_sample
        .iter()
        .zip(exact_b_at_sample)
        .map(|(a, b)| a - b)
        .collect();

    let est_a = estimate_model(surrogate_a, exact_a_at_sample, plan)?;
    let est_b = estimate_model(surrogate_b, exact_b_at_sample, plan)?;
    let est_d = estimate_values(&sur_d, surrogate_a.method(), &exact_d, plan)?;

    let var_a = est_a.sigma_loo_hat.unwrap_or(0.0).powi(2);
    let var_b = est_b.sigma_loo_hat.unwrap_or(0.0).powi(2);
    Ok(ComparisonResult {
        elpd_d_hat: est_d.elpd_hat,
        se_d: est_d.se_subsampling,
        sigma_d_hat: est_d.sigma_loo_hat.unwrap_or(0.0),
        sigma_d_degenerate: est_d.sigma_loo_degenerate(),
        naive_sigma_d: (var_a + var_b).sqrt(),
        per_model: [est_a, est_b],
    })
}
