//! Pareto-smoothed importance sampling.

use rayon::prelude::*;

use super::{LogLikSource, SurrogateMethod, SurrogateVector};
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp_unchecked, self_normalized_unchecked};

/// Fewest draws for which a tail fit is attempted.
pub const PSIS_MIN_DRAWS: usize = 25;

const MIN_TAIL: usize = 5;

/// Generalized Pareto fit to tail exceedances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdFit {
    /// Shape `k̂`; `-inf` marks a degenerate tail that needs no smoothing.
    pub shape: f64,
    pub scale: f64,
}

impl GpdFit {
    pub const DEGENERATE: GpdFit = GpdFit {
        shape: f64::NEG_INFINITY,
        scale: 0.0,
    };

    pub fn is_degenerate(&self) -> bool {
        self.shape == f64::NEG_INFINITY
    }
}

/// Profile-likelihood GPD fit, integrating over the reparameterised
/// `θ = −k/σ` on a fixed quadrature grid, followed by weakly informative
/// shrinkage of `k̂` towards 0.5.
///
/// `tail` must be sorted ascending and hold nonnegative exceedances.
pub fn gpd_fit_tail(tail: &[f64]) -> Result<GpdFit> {
    let n = tail.len();
    if n < MIN_TAIL {
        return Err(Error::InvalidArgument(format!(
            "GPD tail fit needs at least {MIN_TAIL} values, got {n}"
        )));
    }
    if tail.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidArgument("GPD exceedances must be finite and nonnegative".into()));
    }
    if tail.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("GPD tail must be sorted ascending".into()));
    }
    let x_max = tail[n - 1];
    if x_max <= 0.0 || x_max - tail[0] <= f64::EPSILON * x_max {
        return Ok(GpdFit::DEGENERATE);
    }

    const PRIOR: f64 = 3.0;
    const MIN_GRID: usize = 30;
    let grid = MIN_GRID + (n as f64).sqrt().floor() as usize;
    let quartile_idx = ((n as f64) / 4.0 + 0.5).floor() as usize;
    let mut x_star = tail[quartile_idx.saturating_sub(1)];
    if x_star <= 0.0 {
        x_star = match tail.iter().copied().find(|&x| x > 0.0) {
            Some(x) => x,
            None => return Ok(GpdFit::DEGENERATE),
        };
    }

    let thetas: Vec<f64> = (1..=grid)
        .map(|j| 1.0 / x_max + (1.0 - (grid as f64 / (j as f64 - 0.5)).sqrt()) / PRIOR / x_star)
        .collect();
    let profile: Vec<f64> = thetas
        .iter()
        .map(|&theta| n as f64 * profile_log_lik(theta, tail))
        .collect();
    if profile.iter().any(|l| l.is_nan()) {
        return Ok(GpdFit::DEGENERATE);
    }
    let log_norm = log_sum_exp_unchecked(&profile);
    let theta_hat: f64 = thetas
        .iter()
        .zip(&profile)
        .map(|(t, l)| t * (l - log_norm).exp())
        .sum();

    let k = tail.iter().map(|x| (-theta_hat * x).ln_1p()).sum::<f64>() / n as f64;
    let scale = -k / theta_hat;
    if !k.is_finite() || !scale.is_finite() || scale <= 0.0 {
        return Ok(GpdFit::DEGENERATE);
    }

    const PRIOR_STRENGTH: f64 = 10.0;
    let shape = (k * n as f64 + PRIOR_STRENGTH * 0.5) / (n as f64 + PRIOR_STRENGTH);
    Ok(GpdFit { shape, scale })
}

fn profile_log_lik(theta: f64, x: &[f64]) -> f64 {
    let b = -theta;
    let k = x.iter().map(|v| (b * v).ln_1p()).sum::<f64>() / x.len() as f64;
    (b / k).ln() - k - 1.0
}

/// Quantile function of the GPD with location 0.
pub fn gpd_quantile(p: f64, shape: f64, scale: f64) -> f64 {
    if shape.abs() < 1e-12 {
        -scale * (-p).ln_1p()
    } else {
        scale * (-shape * (-p).ln_1p()).exp_m1() / shape
    }
}

/// Tail length `min(⌈0.2 S⌉, ⌈3 √S⌉)`.
pub fn psis_tail_len(draws: usize) -> usize {
    let s = draws as f64;
    ((0.2 * s).ceil() as usize).min((3.0 * s.sqrt()).ceil() as usize)
}

/// Smooths one observation's log-ratios in place and returns the fitted `k̂`.
///
/// The largest `M` ratios are replaced by expected order statistics of the
/// fitted GPD, then every weight is capped at the largest raw ratio.
pub fn psis_smooth_log_ratios(log_r: &mut [f64]) -> f64 {
    let draws = log_r.len();
    let max = log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for r in log_r.iter_mut() {
        *r -= max;
    }

    let tail_len = psis_tail_len(draws);
    let mut k_hat = f64::NEG_INFINITY;
    if tail_len >= MIN_TAIL && tail_len < draws {
        let mut order: Vec<usize> = (0..draws).collect();
        order.sort_by(|&a, &b| log_r[a].total_cmp(&log_r[b]).then(a.cmp(&b)));
        let tail_ids = &order[draws - tail_len..];
        let cutoff = log_r[order[draws - tail_len - 1]];
        let exp_cutoff = cutoff.exp();
        let exceedances: Vec<f64> = tail_ids
            .iter()
            .map(|&i| (log_r[i].exp() - exp_cutoff).max(0.0))
            .collect();
        if let Ok(fit) = gpd_fit_tail(&exceedances) {
            if !fit.is_degenerate() {
                k_hat = fit.shape;
                for (rank, &i) in tail_ids.iter().enumerate() {
                    let p = (rank as f64 + 0.5) / tail_len as f64;
                    log_r[i] = (gpd_quantile(p, fit.shape, fit.scale) + exp_cutoff).ln();
                }
            }
        }
    }
    for r in log_r.iter_mut() {
        if *r > 0.0 {
            *r = 0.0;
        }
    }
    k_hat
}

/// PSIS-LOO over all draws, with per-observation `k̂` diagnostics.
pub fn psis_surrogate<L: LogLikSource + ?Sized>(loglik: &L) -> Result<SurrogateVector> {
    psis_surrogate_corrected(loglik, None)
}

/// PSIS-LOO where the draws come from an approximation `q` of the posterior;
/// `log_correction[s] = log p(θ_s | y) − log q(θ_s)` up to a constant.
pub fn psis_surrogate_corrected<L: LogLikSource + ?Sized>(
    loglik: &L,
    log_correction: Option<&[f64]>,
) -> Result<SurrogateVector> {
    let draws = loglik.draw_count();
    if draws < PSIS_MIN_DRAWS {
        return Err(Error::TooFewDraws {
            required: PSIS_MIN_DRAWS,
            actual: draws,
        });
    }
    if let Some(c) = log_correction {
        crate::error::check_len("PSIS log correction", draws, c.len())?;
        crate::error::check_finite("PSIS log correction", c)?;
    }
    let (values, ks): (Vec<f64>, Vec<f64>) = (0..loglik.obs_count())
        .into_par_iter()
        .map(|i| {
            let col = loglik.column(i);
            let mut log_r: Vec<f64> = match log_correction {
                Some(c) => col.iter().zip(c).map(|(l, c)| c - l).collect(),
                None => col.iter().map(|l| -l).collect(),
            };
            let k = psis_smooth_log_ratios(&mut log_r);
            (self_normalized_unchecked(col, &log_r), k)
        })
        .unzip();
    SurrogateVector::new(values, SurrogateMethod::Psis, draws)?.with_pareto_k(ks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogates::{tis_surrogate, LogLikMatrix};
    use rand::{Rng, SeedableRng};

    fn gpd_sample(k: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..n)
            .map(|_| gpd_quantile(rng.random::<f64>(), k, 1.0))
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn tail_len_rule() {
        assert_eq!(psis_tail_len(100), 20);
        assert_eq!(psis_tail_len(4000), 190);
        assert_eq!(psis_tail_len(25), 5);
    }

    #[test]
    fn exponential_tail_has_near_zero_shape() {
        let fit = gpd_fit_tail(&gpd_sample(0.0, 1000, 2)).unwrap();
        assert!(fit.shape > -0.1 && fit.shape < 0.1, "k = {}", fit.shape);
        assert!((fit.scale - 1.0).abs() < 0.15);
    }

    #[test]
    fn heavy_tail_shape_is_recovered() {
        let fit = gpd_fit_tail(&gpd_sample(0.7, 1000, 3)).unwrap();
        assert!(fit.shape > 0.55 && fit.shape < 0.85, "k = {}", fit.shape);
    }

    #[test]
    fn identical_tail_is_degenerate() {
        assert!(gpd_fit_tail(&[0.4; 5]).unwrap().is_degenerate());
        assert!(gpd_fit_tail(&[0.0; 8]).unwrap().is_degenerate());
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(gpd_fit_tail(&[1.0, 2.0]).is_err());
        assert!(gpd_fit_tail(&[3.0, 2.0, 1.0, 0.5, 0.1]).is_err());
        assert!(gpd_fit_tail(&[-1.0, 0.0, 1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn constant_ratios_are_untouched() {
        let m = LogLikMatrix::from_columns(vec![vec![-1.1; 100], vec![-3.0; 100]]).unwrap();
        let p = psis_surrogate(&m).unwrap();
        assert!((p.values()[0] + 1.1).abs() < 1e-14);
        assert!((p.values()[1] + 3.0).abs() < 1e-14);
        assert!(p.pareto_k().unwrap().iter().all(|k| *k == f64::NEG_INFINITY));
        let t = tis_surrogate(&m, 100).unwrap();
        for (a, b) in p.values().iter().zip(t.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_draws_suggests_tis() {
        let m = LogLikMatrix::from_columns(vec![vec![-1.0; 24]]).unwrap();
        let err = psis_surrogate(&m).unwrap_err();
        assert!(err.to_string().contains("tis"));
    }

    #[test]
    fn gpd_ratios_recover_shape() {
        // ratios r ~ GPD(k = 0.5); loglik = -log r
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let col: Vec<f64> = (0..4000)
            .map(|_| -(1.0 + gpd_quantile(rng.random::<f64>(), 0.5, 1.0)).ln())
            .collect();
        let m = LogLikMatrix::from_columns(vec![col]).unwrap();
        let k = m.column(0).to_vec();
        let mut log_r: Vec<f64> = k.iter().map(|v| -v).collect();
        let k_hat = psis_smooth_log_ratios(&mut log_r);
        assert!(k_hat > 0.35 && k_hat < 0.65, "k = {k_hat}");
        assert!(log_r.iter().all(|r| *r <= 0.0));
    }
}
