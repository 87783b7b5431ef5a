//! Cheap approximations `π̃_i` of the leave-one-out log predictive density
//! `π_i = log p(y_i | y_{-i})`.
//!
//! Every surrogate is computed column by column, so observations are processed
//! in parallel and merged back in index order.

mod delta;
mod psis;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::numerics::{log_mean_exp, log_sum_exp_unchecked, sample_variance, self_normalized_unchecked};

pub use delta::{
    delta_peff, delta_waic_from_base, delta_waic_surrogate, DeltaOrder, GaussianPosteriorSummary,
    PerObsDerivatives,
};
pub use psis::{
    gpd_fit_tail, gpd_quantile, psis_smooth_log_ratios, psis_surrogate, psis_surrogate_corrected,
    psis_tail_len, GpdFit, PSIS_MIN_DRAWS,
};

/// Pareto shape above which importance sampling estimates are unreliable.
pub const PARETO_K_THRESHOLD: f64 = 0.7;

/// Read access to a draws × observations log-likelihood table.
///
/// Surrogates are generic over this trait so that tests can count which rows
/// a method actually reads.
pub trait LogLikSource: Sync {
    fn draw_count(&self) -> usize;
    fn obs_count(&self) -> usize;
    /// The first `rows` draws of observation `obs`.
    fn column_prefix(&self, obs: usize, rows: usize) -> &[f64];

    fn column(&self, obs: usize) -> &[f64] {
        self.column_prefix(obs, self.draw_count())
    }
}

/// `S × n` matrix of `log p(y_i | θ_s)`. Stored observation-major so each
/// observation's draws are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikMatrix {
    draws: usize,
    obs: usize,
    data: Vec<f64>,
}

impl LogLikMatrix {
    /// Builds from rows, one per posterior draw.
    pub fn from_draw_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let draws = rows.len();
        if draws == 0 {
            return Err(Error::InvalidArgument("log-likelihood matrix has no draws".into()));
        }
        let obs = rows[0].len();
        if obs == 0 {
            return Err(Error::InvalidArgument("log-likelihood matrix has no observations".into()));
        }
        let mut data = vec![0.0; draws * obs];
        for (s, row) in rows.iter().enumerate() {
            if row.len() != obs {
                return Err(Error::LengthMismatch {
                    context: "log-likelihood draw row",
                    expected: obs,
                    actual: row.len(),
                });
            }
            for (i, &v) in row.iter().enumerate() {
                data[i * draws + s] = v;
            }
        }
        check_finite("log-likelihood matrix", &data)?;
        Ok(Self { draws, obs, data })
    }

    /// Builds from per-observation columns of equal length.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let obs = columns.len();
        if obs == 0 {
            return Err(Error::InvalidArgument("log-likelihood matrix has no observations".into()));
        }
        let draws = columns[0].len();
        if draws == 0 {
            return Err(Error::InvalidArgument("log-likelihood matrix has no draws".into()));
        }
        let mut data = Vec::with_capacity(draws * obs);
        for col in columns {
            if col.len() != draws {
                return Err(Error::LengthMismatch {
                    context: "log-likelihood column",
                    expected: draws,
                    actual: col.len(),
                });
            }
            data.extend(col);
        }
        check_finite("log-likelihood matrix", &data)?;
        Ok(Self { draws, obs, data })
    }

    pub fn get(&self, draw: usize, obs: usize) -> f64 {
        self.data[obs * self.draws + draw]
    }

    pub fn draw_row(&self, draw: usize) -> Vec<f64> {
        (0..self.obs).map(|i| self.get(draw, i)).collect()
    }
}

impl LogLikSource for LogLikMatrix {
    fn draw_count(&self) -> usize {
        self.draws
    }

    fn obs_count(&self) -> usize {
        self.obs
    }

    fn column_prefix(&self, obs: usize, rows: usize) -> &[f64] {
        let start = obs * self.draws;
        &self.data[start..start + rows]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMethod {
    Plpd,
    #[serde(rename = "waic")]
    WaicS,
    #[serde(rename = "tis")]
    TisS,
    Psis,
    #[serde(rename = "delta1_waic_m")]
    Delta1WaicM,
    #[serde(rename = "delta1_waic")]
    Delta1Waic,
    #[serde(rename = "delta2_waic")]
    Delta2Waic,
    Exact,
}

impl SurrogateMethod {
    pub const ALL: [SurrogateMethod; 8] = [
        SurrogateMethod::Plpd,
        SurrogateMethod::WaicS,
        SurrogateMethod::TisS,
        SurrogateMethod::Psis,
        SurrogateMethod::Delta1WaicM,
        SurrogateMethod::Delta1Waic,
        SurrogateMethod::Delta2Waic,
        SurrogateMethod::Exact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SurrogateMethod::Plpd => "plpd",
            SurrogateMethod::WaicS => "waic",
            SurrogateMethod::TisS => "tis",
            SurrogateMethod::Psis => "psis",
            SurrogateMethod::Delta1WaicM => "delta1_waic_m",
            SurrogateMethod::Delta1Waic => "delta1_waic",
            SurrogateMethod::Delta2Waic => "delta2_waic",
            SurrogateMethod::Exact => "exact",
        }
    }

    /// Whether the method can be computed from a log-likelihood matrix alone.
    pub fn needs_only_loglik(self) -> bool {
        matches!(self, SurrogateMethod::WaicS | SurrogateMethod::TisS | SurrogateMethod::Psis)
    }
}

impl std::fmt::Display for SurrogateMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SurrogateMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let alias = match key.as_str() {
            "waic_s" => "waic",
            "tis_s" => "tis",
            other => other,
        };
        SurrogateMethod::ALL
            .into_iter()
            .find(|m| m.name() == alias)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown surrogate method '{s}'")))
    }
}

/// Length-n vector of `π̃_i` plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateVector {
    values: Vec<f64>,
    method: SurrogateMethod,
    draws_used: usize,
    pareto_k: Option<Vec<f64>>,
}

impl SurrogateVector {
    pub fn new(values: Vec<f64>, method: SurrogateMethod, draws_used: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("surrogate vector is empty".into()));
        }
        check_finite("surrogate values", &values)?;
        Ok(Self {
            values,
            method,
            draws_used,
            pareto_k: None,
        })
    }

    pub fn with_pareto_k(mut self, k: Vec<f64>) -> Result<Self> {
        crate::error::check_len("pareto k diagnostics", self.values.len(), k.len())?;
        self.pareto_k = Some(k);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn method(&self) -> SurrogateMethod {
        self.method
    }

    pub fn draws_used(&self) -> usize {
        self.draws_used
    }

    pub fn pareto_k(&self) -> Option<&[f64]> {
        self.pareto_k.as_deref()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Full-data log predictive density `log (1/S) Σ_s p(y_i | θ_s)` per observation.
pub fn lpd<L: LogLikSource + ?Sized>(loglik: &L) -> Vec<f64> {
    lpd_prefix(loglik, loglik.draw_count())
}

fn lpd_prefix<L: LogLikSource + ?Sized>(loglik: &L, rows: usize) -> Vec<f64> {
    let log_rows = (rows as f64).ln();
    (0..loglik.obs_count())
        .into_par_iter()
        .map(|i| log_sum_exp_unchecked(loglik.column_prefix(i, rows)) - log_rows)
        .collect()
}

/// Point log predictive density `log p(y_i | θ̂)`, passed through verbatim.
pub fn plpd_surrogate(loglik_at_point: Vec<f64>) -> Result<SurrogateVector> {
    SurrogateVector::new(loglik_at_point, SurrogateMethod::Plpd, 1)
}

fn check_draws_used<L: LogLikSource + ?Sized>(loglik: &L, draws_used: usize, min: usize) -> Result<()> {
    if draws_used < min {
        if min == 2 {
            return Err(Error::UndefinedVariance(draws_used));
        }
        return Err(Error::InvalidArgument(format!(
            "draws_used must be at least {min}, got {draws_used}"
        )));
    }
    if draws_used > loglik.draw_count() {
        return Err(Error::InvalidArgument(format!(
            "draws_used = {draws_used} exceeds the {} available draws",
            loglik.draw_count()
        )));
    }
    Ok(())
}

/// `π̃_i = lpd_i − V_s log p(y_i | θ_s)` over the first `draws_used` draws.
pub fn waic_surrogate<L: LogLikSource + ?Sized>(loglik: &L, draws_used: usize) -> Result<SurrogateVector> {
    check_draws_used(loglik, draws_used, 2)?;
    let values: Vec<f64> = (0..loglik.obs_count())
        .into_par_iter()
        .map(|i| {
            let col = loglik.column_prefix(i, draws_used);
            let lpd = log_mean_exp(col)?;
            Ok(lpd - sample_variance(col)?)
        })
        .collect::<Result<_>>()?;
    SurrogateVector::new(values, SurrogateMethod::WaicS, draws_used)
}

/// Importance-ratio truncation for [`tis_surrogate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// Plain self-normalised importance sampling.
    None,
    /// `τ = r̄ √S`.
    MeanTimesSqrtS,
}

/// Truncated importance sampling LOO over the first `draws_used` draws.
pub fn tis_surrogate<L: LogLikSource + ?Sized>(loglik: &L, draws_used: usize) -> Result<SurrogateVector> {
    tis_surrogate_with(loglik, draws_used, Truncation::MeanTimesSqrtS)
}

pub fn tis_surrogate_with<L: LogLikSource + ?Sized>(
    loglik: &L,
    draws_used: usize,
    truncation: Truncation,
) -> Result<SurrogateVector> {
    check_draws_used(loglik, draws_used, 1)?;
    let values: Vec<f64> = (0..loglik.obs_count())
        .into_par_iter()
        .map(|i| {
            let col = loglik.column_prefix(i, draws_used);
            let log_r = truncated_log_ratios(col, truncation);
            self_normalized_unchecked(col, &log_r)
        })
        .collect();
    SurrogateVector::new(values, SurrogateMethod::TisS, draws_used)
}

/// Raw log-ratios `−log p(y_i | θ_s)`, truncated at `log r̄ + ½ log S`.
pub(crate) fn truncated_log_ratios(loglik_col: &[f64], truncation: Truncation) -> Vec<f64> {
    let mut log_r: Vec<f64> = loglik_col.iter().map(|v| -v).collect();
    if truncation == Truncation::MeanTimesSqrtS {
        let s = log_r.len() as f64;
        let log_tau = log_sum_exp_unchecked(&log_r) - s.ln() + 0.5 * s.ln();
        for r in &mut log_r {
            *r = r.min(log_tau);
        }
    }
    log_r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{self_normalized_log_expectation, LogWeightVector};
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn random_matrix(draws: usize, obs: usize, seed: u64) -> LogLikMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..draws)
            .map(|_| (0..obs).map(|_| rng.random_range(-6.0..0.5)).collect())
            .collect();
        LogLikMatrix::from_draw_rows(&rows).unwrap()
    }

    #[test]
    fn lpd_single_draw_returns_row() {
        let m = LogLikMatrix::from_draw_rows(&[vec![-1.0, -2.5, 0.3]]).unwrap();
        assert_eq!(lpd(&m), vec![-1.0, -2.5, 0.3]);
    }

    #[test]
    fn lpd_constant_column() {
        let m = LogLikMatrix::from_columns(vec![vec![-1.7; 9], vec![0.2; 9]]).unwrap();
        let v = lpd(&m);
        assert!((v[0] + 1.7).abs() < 1e-14 && (v[1] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn lpd_matches_direct_per_column() {
        let m = random_matrix(5, 3, 1);
        let got = lpd(&m);
        for i in 0..3 {
            let direct = ((0..5).map(|s| m.get(s, i).exp()).sum::<f64>() / 5.0).ln();
            assert!((got[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_validation() {
        assert!(LogLikMatrix::from_draw_rows(&[]).is_err());
        assert!(LogLikMatrix::from_draw_rows(&[vec![0.0, 1.0], vec![0.0]]).is_err());
        assert!(LogLikMatrix::from_draw_rows(&[vec![0.0, f64::NAN]]).is_err());
    }

    #[test]
    fn plpd_passthrough() {
        let v = vec![-0.5, -1.25, -3.0];
        let s = plpd_surrogate(v.clone()).unwrap();
        assert_eq!(s.values(), &v[..]);
        assert_eq!(s.method(), SurrogateMethod::Plpd);
        assert_eq!(s.draws_used(), 1);
        assert!(plpd_surrogate(vec![0.0, f64::INFINITY]).is_err());
        let c = plpd_surrogate(vec![-2.0; 4]).unwrap();
        assert!(c.values().iter().all(|&x| x == -2.0));
    }

    #[test]
    fn waic_constant_column_has_zero_peff() {
        let m = LogLikMatrix::from_columns(vec![vec![-1.5; 10], vec![-0.25; 10]]).unwrap();
        let w = waic_surrogate(&m, 10).unwrap();
        assert!((w.values()[0] + 1.5).abs() < 1e-14);
        assert!((w.values()[1] + 0.25).abs() < 1e-14);
        assert!(matches!(waic_surrogate(&m, 1), Err(Error::UndefinedVariance(1))));
        assert!(waic_surrogate(&m, 11).is_err());
    }

    #[test]
    fn tis_constant_column() {
        let m = LogLikMatrix::from_columns(vec![vec![-0.9; 30]]).unwrap();
        let t = tis_surrogate(&m, 30).unwrap();
        assert!((t.values()[0] + 0.9).abs() < 1e-14);
    }

    #[test]
    fn tis_without_truncation_is_plain_is() {
        let m = random_matrix(200, 7, 3);
        let t = tis_surrogate_with(&m, 200, Truncation::None).unwrap();
        for i in 0..7 {
            let col = m.column(i);
            let log_r = LogWeightVector::new(col.iter().map(|v| -v).collect()).unwrap();
            let direct = self_normalized_log_expectation(col, &log_r).unwrap();
            assert!((t.values()[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_names_round_trip() {
        for m in SurrogateMethod::ALL {
            assert_eq!(m.name().parse::<SurrogateMethod>().unwrap(), m);
        }
        assert_eq!("waic_S".parse::<SurrogateMethod>().unwrap(), SurrogateMethod::WaicS);
        assert!("nope".parse::<SurrogateMethod>().is_err());
    }

    /// Wraps a matrix and records the largest draw prefix any column read requested.
    struct CountingSource {
        inner: LogLikMatrix,
        max_rows: AtomicUsize,
        reads: AtomicUsize,
    }

    impl LogLikSource for CountingSource {
        fn draw_count(&self) -> usize {
            self.inner.draw_count()
        }
        fn obs_count(&self) -> usize {
            self.inner.obs_count()
        }
        fn column_prefix(&self, obs: usize, rows: usize) -> &[f64] {
            self.max_rows.fetch_max(rows, Ordering::SeqCst);
            self.reads.fetch_add(1, Ordering::SeqCst);
            self.inner.column_prefix(obs, rows)
        }
    }

    #[test]
    fn reduced_draw_methods_touch_only_requested_rows() {
        let src = CountingSource {
            inner: random_matrix(100, 12, 9),
            max_rows: AtomicUsize::new(0),
            reads: AtomicUsize::new(0),
        };
        waic_surrogate(&src, 17).unwrap();
        assert_eq!(src.max_rows.load(Ordering::SeqCst), 17);
        assert_eq!(src.reads.load(Ordering::SeqCst), 12);
        src.max_rows.store(0, Ordering::SeqCst);
        tis_surrogate(&src, 40).unwrap();
        assert_eq!(src.max_rows.load(Ordering::SeqCst), 40);
    }

    proptest! {
        #[test]
        fn waic_never_exceeds_lpd(seed in 0u64..500, draws in 2usize..40, obs in 1usize..8) {
            let m = random_matrix(draws, obs, seed);
            let w = waic_surrogate(&m, draws).unwrap();
            let l = lpd(&m);
            prop_assert_eq!(w.len(), obs);
            for (a, b) in w.values().iter().zip(&l) {
                prop_assert!(a.is_finite());
                prop_assert!(*a <= *b + 1e-12);
            }
        }

        #[test]
        fn tis_output_is_finite(seed in 0u64..500, draws in 1usize..60, obs in 1usize..8) {
            let m = random_matrix(draws, obs, seed);
            let t = tis_surrogate(&m, draws).unwrap();
            prop_assert_eq!(t.len(), obs);
            prop_assert!(t.values().iter().all(|v| v.is_finite()));
        }
    }
}
