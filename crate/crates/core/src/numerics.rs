//! Log-domain reductions.
//!
//! Densities are never exponentiated outside of a max-shifted reduction. Sums
//! use fixed-shape pairwise summation so that results depend only on the input
//! order, never on how work is split across threads.

use crate::error::{check_finite, check_len, Error, Result};

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) summation with a fixed block size.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

fn pairwise_sum_map(values: &[f64], f: &impl Fn(f64) -> f64) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        values.iter().map(|&v| f(v)).sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum_map(&values[..mid], f) + pairwise_sum_map(&values[mid..], f)
    }
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyReduction("mean"));
    }
    Ok(pairwise_sum(values) / values.len() as f64)
}

/// Importance log-ratios `log r(θ_s)` for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeightVector(Vec<f64>);

impl LogWeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyReduction("LogWeightVector"));
        }
        check_finite("log weights", &values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn max_finite(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log Σ exp(v_i)`, stabilised by shifting with the maximum.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyReduction("log_sum_exp"));
    }
    check_finite("log_sum_exp", v)?;
    Ok(log_sum_exp_unchecked(v))
}

/// Same as [`log_sum_exp`] for callers that have already validated their input.
/// Entries equal to `-inf` contribute nothing.
pub(crate) fn log_sum_exp_unchecked(v: &[f64]) -> f64 {
    let max = max_finite(v);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + pairwise_sum_map(v, &|x| (x - max).exp()).ln()
}

pub fn log_mean_exp(v: &[f64]) -> Result<f64> {
    Ok(log_sum_exp(v)? - (v.len() as f64).ln())
}

/// `log(Σ f_s r_s / Σ r_s)` with both numerator and denominator in log space.
pub fn self_normalized_log_expectation(log_f: &[f64], log_r: &LogWeightVector) -> Result<f64> {
    check_len("self_normalized_log_expectation", log_r.len(), log_f.len())?;
    check_finite("self_normalized_log_expectation", log_f)?;
    Ok(self_normalized_unchecked(log_f, log_r.as_slice()))
}

pub(crate) fn self_normalized_unchecked(log_f: &[f64], log_r: &[f64]) -> f64 {
    let joint: Vec<f64> = log_f.iter().zip(log_r).map(|(f, r)| f + r).collect();
    log_sum_exp_unchecked(&joint) - log_sum_exp_unchecked(log_r)
}

/// Unbiased sample variance (divisor `len - 1`), two-pass.
pub fn sample_variance(v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::UndefinedVariance(v.len()));
    }
    let mu = mean(v)?;
    let ss = pairwise_sum_map(v, &|x| (x - mu) * (x - mu));
    Ok(ss / (v.len() - 1) as f64)
}
