//! End-to-end pipeline pieces shared by the command-line tool and the test
//! suites: surrogate dispatch, simulated BLR fixtures, the replicate
//! experiment runner and the enumeration verifier.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::estimators::{diff_elpd, diff_sigma2_loo, diff_variance, estimate_model, ElpdEstimate};
use crate::models::{
    draw_posterior, exact_loo_blr, fit_conjugate_blr, loglik_at, loglik_matrix, per_obs_derivatives,
    simulate_blr, BlrDataset, ConjugateBlrPosterior, NigPrior,
};
use crate::numerics::{mean, pairwise_sum, sample_variance};
use crate::subsampling::{
    binomial, derive_seed, enumerate_subsamples_wor, pps_weights_from_surrogate, pps_wr, srs_wor, srs_wr,
    stream_rng, Scheme, StreamPurpose, SubsamplePlan,
};
use crate::surrogates::{
    delta_waic_from_base, lpd, psis_surrogate, tis_surrogate, waic_surrogate, DeltaOrder,
    GaussianPosteriorSummary, LogLikMatrix, LogLikSource, SurrogateMethod, SurrogateVector,
    PARETO_K_THRESHOLD,
};

/// The first `rows` draws of another source.
pub struct DrawPrefix<'a, L: ?Sized> {
    inner: &'a L,
    rows: usize,
}

impl<'a, L: LogLikSource + ?Sized> DrawPrefix<'a, L> {
    pub fn new(inner: &'a L, rows: usize) -> Result<Self> {
        if rows == 0 || rows > inner.draw_count() {
            return Err(Error::InvalidArgument(format!(
                "draws_used = {rows} must be between 1 and the {} available draws",
                inner.draw_count()
            )));
        }
        Ok(Self { inner, rows })
    }
}

impl<L: LogLikSource + ?Sized> LogLikSource for DrawPrefix<'_, L> {
    fn draw_count(&self) -> usize {
        self.rows
    }

    fn obs_count(&self) -> usize {
        self.inner.obs_count()
    }

    fn column_prefix(&self, obs: usize, rows: usize) -> &[f64] {
        self.inner.column_prefix(obs, rows.min(self.rows))
    }
}

/// Surrogates computable from the log-likelihood matrix alone.
pub fn surrogate_from_loglik<L: LogLikSource + ?Sized>(
    loglik: &L,
    method: SurrogateMethod,
    draws_used: Option<usize>,
) -> Result<SurrogateVector> {
    let used = draws_used.unwrap_or(loglik.draw_count());
    match method {
        SurrogateMethod::WaicS => waic_surrogate(loglik, used),
        SurrogateMethod::TisS => tis_surrogate(loglik, used),
        SurrogateMethod::Psis => psis_surrogate(&DrawPrefix::new(loglik, used)?),
        other => Err(Error::InvalidArgument(format!(
            "surrogate '{other}' needs a model (dataset and parameter draws), not only a log-likelihood matrix"
        ))),
    }
}

/// Column means of a draw matrix.
pub fn draw_means(draws: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        draws.ncols(),
        draws.column_iter().map(|c| pairwise_sum(c.as_slice()) / draws.nrows() as f64),
    )
}

/// Any non-exact surrogate for the conjugate BLR given parameter draws
/// `(β, log σ)`. `θ̂` and `Σ_θ` for the plug-in and Taylor surrogates are the
/// draw mean and covariance; the Taylor surrogates' lpd uses the first
/// `draws_used` draws.
pub fn blr_surrogate(
    data: &BlrDataset,
    draws: &DMatrix<f64>,
    method: SurrogateMethod,
    draws_used: Option<usize>,
) -> Result<SurrogateVector> {
    check_len("draw columns (β, log σ)", data.p() + 1, draws.ncols())?;
    let order = match method {
        SurrogateMethod::Plpd => {
            return crate::surrogates::plpd_surrogate(loglik_at(data, &draw_means(draws))?);
        }
        SurrogateMethod::WaicS | SurrogateMethod::TisS | SurrogateMethod::Psis => {
            return surrogate_from_loglik(&loglik_matrix(data, draws)?, method, draws_used);
        }
        SurrogateMethod::Exact => {
            return Err(Error::InvalidArgument(
                "the exact surrogate is read from exact LOO values, not computed from draws".into(),
            ))
        }
        SurrogateMethod::Delta1WaicM => DeltaOrder::FirstMarginal,
        SurrogateMethod::Delta1Waic => DeltaOrder::First,
        SurrogateMethod::Delta2Waic => DeltaOrder::Second,
    };
    let used = draws_used.unwrap_or(draws.nrows());
    if used == 0 || used > draws.nrows() {
        return Err(Error::InvalidArgument(format!(
            "draws_used = {used} must be between 1 and the {} available draws",
            draws.nrows()
        )));
    }
    let posterior = GaussianPosteriorSummary::from_draws(draws)?;
    let derivs = per_obs_derivatives(data, posterior.mean(), order == DeltaOrder::Second)?;
    let head = draws.rows(0, used).into_owned();
    let base = lpd(&loglik_matrix(data, &head)?);
    let sv = delta_waic_from_base(&base, &derivs, &posterior, order)?;
    SurrogateVector::new(sv.into_values(), method, used)
}

/// A simulated conjugate BLR with exact draws, log-likelihood and exact LOO.
#[derive(Debug, Clone)]
pub struct BlrFixture {
    pub data: BlrDataset,
    pub posterior: ConjugateBlrPosterior,
    pub draws: DMatrix<f64>,
    pub loglik: LogLikMatrix,
    pub exact: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlrFixtureSpec {
    pub n: usize,
    pub p: usize,
    pub target_r2: f64,
    pub sparse: bool,
    pub draws: usize,
    pub seed: u64,
}

impl BlrFixture {
    pub fn simulate(spec: &BlrFixtureSpec) -> Result<Self> {
        let data = simulate_blr(spec.n, spec.p, spec.target_r2, spec.sparse, spec.seed)?;
        Self::fit(data, spec.draws, spec.seed)
    }

    /// Fits the default-prior conjugate model to `data` and draws from it.
    pub fn fit(data: BlrDataset, draws: usize, seed: u64) -> Result<Self> {
        let prior = NigPrior::default();
        let posterior = fit_conjugate_blr(&data, &prior)?;
        let draws = draw_posterior(&posterior, draws, seed)?;
        let loglik = loglik_matrix(&data, &draws)?;
        let exact = exact_loo_blr(&data, &prior)?;
        Ok(Self {
            data,
            posterior,
            draws,
            loglik,
            exact,
        })
    }

    /// The same data without its last covariate, refitted with draws from the
    /// replicate-1 seed.
    pub fn nested(&self, seed: u64) -> Result<Self> {
        let p = self.data.p();
        if p < 2 {
            return Err(Error::InvalidArgument("nested model needs at least 2 covariates".into()));
        }
        Self::fit(self.data.drop_columns(&[p - 1]), self.draws.nrows(), derive_seed(seed, 1))
    }

    pub fn surrogate(&self, method: SurrogateMethod, draws_used: Option<usize>) -> Result<SurrogateVector> {
        if method == SurrogateMethod::Exact {
            return SurrogateVector::new(self.exact.clone(), method, 0);
        }
        blr_surrogate(&self.data, &self.draws, method, draws_used)
    }
}

/// Subsample plans for replicates `0..replicates`; replicate `r` uses
/// `derive_seed(seed, r)`. `pps_weights` is required for `pps_wr`.
pub fn replicate_plans(
    n: usize,
    m: usize,
    scheme: Scheme,
    pps_weights: Option<&[f64]>,
    replicates: usize,
    seed: u64,
) -> Result<Vec<SubsamplePlan>> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, r);
            match scheme {
                Scheme::SrsWor => srs_wor(n, m, s),
                Scheme::SrsWr => srs_wr(n, m, s),
                Scheme::PpsWr => {
                    let w = pps_weights.ok_or_else(|| {
                        Error::InvalidArgument("pps_wr replicates need draw weights".into())
                    })?;
                    check_len("PPS weights", n, w.len())?;
                    pps_wr(w, m, s)
                }
            }
        })
        .collect()
}

/// Summary of `R` subsample replicates against fixed surrogates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateReport {
    pub surrogate: &'static str,
    pub draws_used: usize,
    pub estimator: &'static str,
    pub scheme: &'static str,
    pub n: usize,
    pub m: usize,
    pub replicates: usize,
    pub seed: u64,
    pub elpd_true: f64,
    pub mean_elpd_hat: f64,
    /// Standard deviation of `elpd_hat` across replicates.
    pub empirical_se: f64,
    /// Mean of the per-replicate reported standard errors.
    pub mean_se: f64,
    pub elpd_hat: Vec<f64>,
    pub se_subsampling: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

/// Runs the estimator for each plan and summarises; `exact` covers all `n`
/// observations.
pub fn run_replicates(
    surrogate: &SurrogateVector,
    exact: &[f64],
    plans: &[SubsamplePlan],
    seed: u64,
) -> Result<ReplicateReport> {
    if plans.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "replicate count must be at least 2, got {}",
            plans.len()
        )));
    }
    check_len("exact LOO values", surrogate.len(), exact.len())?;
    let estimates: Vec<ElpdEstimate> = plans
        .par_iter()
        .map(|plan| estimate_model(surrogate, &plan.gather(exact)?, plan))
        .collect::<Result<_>>()?;
    let elpd_hat: Vec<f64> = estimates.iter().map(|e| e.elpd_hat).collect();
    let se: Vec<f64> = estimates.iter().map(|e| e.se_subsampling).collect();
    let first = &estimates[0];
    Ok(ReplicateReport {
        surrogate: surrogate.method().name(),
        draws_used: surrogate.draws_used(),
        estimator: first.estimator.name(),
        scheme: plans[0].scheme().name(),
        n: first.n,
        m: first.m,
        replicates: plans.len(),
        seed,
        elpd_true: pairwise_sum(exact),
        mean_elpd_hat: mean(&elpd_hat)?,
        empirical_se: sample_variance(&elpd_hat)?.max(0.0).sqrt(),
        mean_se: mean(&se)?,
        elpd_hat,
        se_subsampling: se,
        wall_time_secs: None,
    })
}

/// [`replicate_plans`] followed by [`run_replicates`]; PPS weights come from
/// `|π̃|`.
pub fn replicate(
    surrogate: &SurrogateVector,
    exact: &[f64],
    m: usize,
    scheme: Scheme,
    replicates: usize,
    seed: u64,
) -> Result<ReplicateReport> {
    let weights = match scheme {
        Scheme::PpsWr => Some(pps_weights_from_surrogate(surrogate.values())?),
        _ => None,
    };
    let plans = replicate_plans(surrogate.len(), m, scheme, weights.as_deref(), replicates, seed)?;
    run_replicates(surrogate, exact, &plans, seed)
}

/// Per-observation mean absolute error of a surrogate.
pub fn mean_abs_error(surrogate: &[f64], exact: &[f64]) -> Result<f64> {
    check_len("exact LOO values", surrogate.len(), exact.len())?;
    let d: Vec<f64> = surrogate.iter().zip(exact).map(|(a, b)| (a - b).abs()).collect();
    mean(&d)
}

/// Fraction of observations whose Pareto `k̂` is at or above the threshold,
/// plus the largest finite `k̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParetoKSummary {
    pub threshold: f64,
    pub max: Option<f64>,
    pub count_above: usize,
    pub count: usize,
}

pub fn pareto_k_summary(k: &[f64]) -> ParetoKSummary {
    let max = k.iter().copied().filter(|v| v.is_finite()).reduce(f64::max);
    ParetoKSummary {
        threshold: PARETO_K_THRESHOLD,
        max,
        count_above: k.iter().filter(|&&v| v >= PARETO_K_THRESHOLD).count(),
        count: k.len(),
    }
}

/// Grid for [`verify_enumeration`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyGrid {
    pub ns: Vec<usize>,
    pub ms: Vec<usize>,
    pub pairs: usize,
    pub tolerance: f64,
}

impl Default for VerifyGrid {
    fn default() -> Self {
        Self {
            ns: vec![6, 8, 10],
            ms: vec![2, 3, 4],
            pairs: 20,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyCell {
    pub n: usize,
    pub m: usize,
    pub pairs: usize,
    pub subsets: u128,
    /// Largest `|E[elpd_hat] − Σπ|` over the pairs.
    pub max_dev_elpd: f64,
    /// Largest `|E[σ̂²_loo] − σ²_loo|`.
    pub max_dev_sigma2: f64,
    /// Largest `|E[V̂] − Var(elpd_hat)|`.
    pub max_dev_variance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub tolerance: f64,
    pub seed: u64,
    pub max_dev_elpd: f64,
    pub max_dev_sigma2: f64,
    pub max_dev_variance: f64,
    pub pass: bool,
    pub cells: Vec<VerifyCell>,
}

/// Random `(π, π̃)` with `π̃` a noisy, biased version of `π`.
pub fn random_loo_pair(n: usize, seed: u64, case: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream_rng(seed, case, StreamPurpose::Oracle);
    let noise = Normal::new(0.0, 0.3).expect("valid normal");
    let exact: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..-0.2)).collect();
    let bias = rng.random_range(-0.2..0.2);
    let surrogate = exact.iter().map(|v| v + bias + noise.sample(&mut rng)).collect();
    (exact, surrogate)
}

struct EnumerationDeviation {
    elpd: f64,
    sigma2: f64,
    variance: f64,
}

fn enumerate_case(exact: &[f64], surrogate: &[f64], m: usize) -> Result<EnumerationDeviation> {
    let n = exact.len();
    let mut est = Vec::new();
    let mut var = Vec::new();
    let mut sig = Vec::new();
    for subset in enumerate_subsamples_wor(n, m)? {
        let plan = SubsamplePlan::wor_from_indices(n, subset)?;
        let pi = plan.gather(exact)?;
        est.push(diff_elpd(surrogate, &pi, &plan)?);
        var.push(diff_variance(surrogate, &pi, &plan)?);
        sig.push(diff_sigma2_loo(surrogate, &pi, &plan)?.raw);
    }
    let total = pairwise_sum(exact);
    let pop_mean = total / n as f64;
    let dev: Vec<f64> = exact.iter().map(|v| (v - pop_mean).powi(2)).collect();
    let sigma2 = pairwise_sum(&dev) / n as f64;
    let est_mean = mean(&est)?;
    let sq: Vec<f64> = est.iter().map(|v| (v - est_mean).powi(2)).collect();
    let enum_var = mean(&sq)?;
    Ok(EnumerationDeviation {
        elpd: (est_mean - total).abs(),
        sigma2: (mean(&sig)? - sigma2).abs(),
        variance: (mean(&var)? - enum_var).abs(),
    })
}

/// Checks by full enumeration of without-replacement subsamples that the
/// difference estimator and `σ̂²_loo` are unbiased and that the variance
/// estimator is unbiased for the enumeration variance.
pub fn verify_enumeration(grid: &VerifyGrid, seed: u64) -> Result<VerifyReport> {
    let mut cases = Vec::new();
    for &n in &grid.ns {
        for &m in &grid.ms {
            if m < 2 || m > n {
                return Err(Error::InvalidSubsampleSize { n, m });
            }
            for pair in 0..grid.pairs {
                cases.push((n, m, pair));
            }
        }
    }
    let devs: Vec<EnumerationDeviation> = cases
        .par_iter()
        .enumerate()
        .map(|(case, &(n, m, _))| {
            let (exact, surrogate) = random_loo_pair(n, seed, case as u64);
            enumerate_case(&exact, &surrogate, m)
        })
        .collect::<Result<_>>()?;

    let mut cells: Vec<VerifyCell> = Vec::new();
    for ((n, m, _), d) in cases.iter().zip(&devs) {
        if cells.last().is_none_or(|c| c.n != *n || c.m != *m) {
            cells.push(VerifyCell {
                n: *n,
                m: *m,
                pairs: 0,
                subsets: binomial(*n, *m),
                max_dev_elpd: 0.0,
                max_dev_sigma2: 0.0,
                max_dev_variance: 0.0,
                pass: true,
            });
        }
        let c = cells.last_mut().expect("cell pushed above");
        c.pairs += 1;
        c.max_dev_elpd = c.max_dev_elpd.max(d.elpd);
        c.max_dev_sigma2 = c.max_dev_sigma2.max(d.sigma2);
        c.max_dev_variance = c.max_dev_variance.max(d.variance);
        c.pass = c.max_dev_elpd < grid.tolerance
            && c.max_dev_sigma2 < grid.tolerance
            && c.max_dev_variance < grid.tolerance;
    }
    let max_of = |f: fn(&VerifyCell) -> f64| cells.iter().map(f).fold(0.0, f64::max);
    Ok(VerifyReport {
        tolerance: grid.tolerance,
        seed,
        max_dev_elpd: max_of(|c| c.max_dev_elpd),
        max_dev_sigma2: max_of(|c| c.max_dev_sigma2),
        max_dev_variance: max_of(|c| c.max_dev_variance),
        pass: cells.iter().all(|c| c.pass),
        cells,
    })
}
