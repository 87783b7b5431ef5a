//! Taylor-expansion estimates of the per-observation effective number of
//! parameters `p_eff,i = V_θ log p(y_i | θ)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{lpd, LogLikSource, SurrogateMethod, SurrogateVector};
use crate::error::{check_len, Error, Result};

const SYMMETRY_TOL: f64 = 1e-8;
const PSD_TOL: f64 = 1e-8;

/// Gaussian summary `N(θ̂, Σ_θ)` of the posterior of the likelihood parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosteriorSummary {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianPosteriorSummary {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if p == 0 {
            return Err(Error::InvalidArgument("posterior summary has no parameters".into()));
        }
        if covariance.nrows() != p || covariance.ncols() != p {
            return Err(Error::LengthMismatch {
                context: "posterior covariance dimension",
                expected: p,
                actual: covariance.nrows().max(covariance.ncols()),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite posterior summary".into()));
        }
        let scale = covariance.amax().max(1.0);
        if (&covariance - covariance.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::InvalidArgument("posterior covariance is not symmetric".into()));
        }
        let min_eig = covariance.clone().symmetric_eigenvalues().min();
        if min_eig < -PSD_TOL * scale {
            return Err(Error::NotPositiveSemiDefinite(min_eig));
        }
        Ok(Self { mean, covariance })
    }

    /// Sample mean and covariance (divisor `S − 1`) of parameter draws, one per row.
    pub fn from_draws(draws: &DMatrix<f64>) -> Result<Self> {
        let s = draws.nrows();
        if s < 2 {
            return Err(Error::UndefinedVariance(s));
        }
        let mean = draws.row_mean().transpose();
        let mut centered = draws.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / (s - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

/// Per-observation gradients (rows) and optional Hessians of `log p(y_i | θ)` at `θ̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerObsDerivatives {
    gradients: DMatrix<f64>,
    hessians: Option<Vec<DMatrix<f64>>>,
}

impl PerObsDerivatives {
    pub fn new(gradients: DMatrix<f64>, hessians: Option<Vec<DMatrix<f64>>>) -> Result<Self> {
        if gradients.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite gradient".into()));
        }
        if let Some(hs) = &hessians {
            check_len("per-observation Hessians", gradients.nrows(), hs.len())?;
            let p = gradients.ncols();
            for h in hs {
                if h.nrows() != p || h.ncols() != p {
                    return Err(Error::LengthMismatch {
                        context: "Hessian dimension",
                        expected: p,
                        actual: h.nrows().max(h.ncols()),
                    });
                }
                if h.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Degenerate("non-finite Hessian".into()));
                }
                let scale = h.amax().max(1.0);
                if (h - h.transpose()).amax() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidArgument("Hessian is not symmetric".into()));
                }
            }
        }
        Ok(Self { gradients, hessians })
    }

    pub fn obs_count(&self) -> usize {
        self.gradients.nrows()
    }

    pub fn dim(&self) -> usize {
        self.gradients.ncols()
    }

    pub fn gradients(&self) -> &DMatrix<f64> {
        &self.gradients
    }

    pub fn hessians(&self) -> Option<&[DMatrix<f64>]> {
        self.hessians.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaOrder {
    /// Gradient term with marginal variances only.
    FirstMarginal,
    /// Gradient term with the full covariance.
    First,
    /// Gradient term plus `½ tr(H Σ H Σ)`.
    Second,
}

impl DeltaOrder {
    pub fn method(self) -> SurrogateMethod {
        match self {
            DeltaOrder::FirstMarginal => SurrogateMethod::Delta1WaicM,
            DeltaOrder::First => SurrogateMethod::Delta1Waic,
            DeltaOrder::Second => SurrogateMethod::Delta2Waic,
        }
    }
}

/// Taylor approximation of `p_eff,i`.
pub fn delta_peff(
    grad: &DVector<f64>,
    hessian: Option<&DMatrix<f64>>,
    posterior: &GaussianPosteriorSummary,
    order: DeltaOrder,
) -> Result<f64> {
    check_len("gradient dimension", posterior.dim(), grad.len())?;
    let cov = posterior.covariance();
    Ok(match order {
        DeltaOrder::FirstMarginal => grad
            .iter()
            .zip(cov.diagonal().iter())
            .map(|(g, v)| g * g * v)
            .sum(),
        DeltaOrder::First => grad.dot(&(cov * grad)),
        DeltaOrder::Second => {
            let h = hessian.ok_or_else(|| {
                Error::InvalidArgument("second-order p_eff requires a Hessian".into())
            })?;
            if h.nrows() != posterior.dim() || h.ncols() != posterior.dim() {
                return Err(Error::LengthMismatch {
                    context: "Hessian dimension",
                    expected: posterior.dim(),
                    actual: h.nrows(),
                });
            }
            let hs = h * cov;
            // tr(A A) = Σ_ij A_ij A_ji
            let trace = hs.component_mul(&hs.transpose()).sum();
            grad.dot(&(cov * grad)) + 0.5 * trace
        }
    })
}

/// `π̃_i = base_i − p̃_eff,i` where `base` is a precomputed lpd (or plpd)
/// vector. Reads no posterior draws.
pub fn delta_waic_from_base(
    base: &[f64],
    derivs: &PerObsDerivatives,
    posterior: &GaussianPosteriorSummary,
    order: DeltaOrder,
) -> Result<SurrogateVector> {
    check_len("delta surrogate observations", base.len(), derivs.obs_count())?;
    check_len("gradient dimension", posterior.dim(), derivs.dim())?;
    let hessians = match order {
        DeltaOrder::Second => Some(derivs.hessians().ok_or_else(|| {
            Error::InvalidArgument("second-order p_eff requires Hessians".into())
        })?),
        _ => None,
    };
    let values: Vec<f64> = (0..base.len())
        .into_par_iter()
        .map(|i| {
            let g = derivs.gradients().row(i).transpose();
            let h = hessians.map(|hs| &hs[i]);
            Ok(base[i] - delta_peff(&g, h, posterior, order)?)
        })
        .collect::<Result<_>>()?;
    SurrogateVector::new(values, order.method(), 1)
}

/// Δ-WAIC surrogate `lpd_i − p̃_eff,i`.
pub fn delta_waic_surrogate<L: LogLikSource + ?Sized>(
    loglik: &L,
    derivs: &PerObsDerivatives,
    posterior: &GaussianPosteriorSummary,
    order: DeltaOrder,
) -> Result<SurrogateVector> {
    check_len("delta surrogate observations", loglik.obs_count(), derivs.obs_count())?;
    let base = lpd(loglik);
    let sv = delta_waic_from_base(&base, derivs, posterior, order)?;
    SurrogateVector::new(sv.into_values(), order.method(), loglik.draw_count())
}
