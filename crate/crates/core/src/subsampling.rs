//! Subsample designs and the seeded random streams behind them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of subsets [`enumerate_subsamples_wor`] will walk.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// What a random stream is used for. Part of the stream id so that, e.g., the
/// subsample of replicate 3 never shares randomness with its posterior draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum StreamPurpose {
    Subsample = 1,
    Data = 2,
    Posterior = 3,
    Oracle = 4,
}

/// Deterministic generator for `(seed, replicate, purpose)`.
pub fn stream_rng(seed: u64, replicate: u64, purpose: StreamPurpose) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 8) | purpose as u64);
    rng
}

/// Seed of replicate `r` derived from a base seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, replicate: u64) -> u64 {
    let mut z = seed ^ replicate.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Simple random sampling without replacement.
    SrsWor,
    /// Simple random sampling with replacement.
    SrsWr,
    /// Probability-proportional-to-size sampling with replacement.
    PpsWr,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::SrsWor => "srs_wor",
            Scheme::SrsWr => "srs_wr",
            Scheme::PpsWr => "pps_wr",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "srs_wor" | "srs" => Ok(Scheme::SrsWor),
            "srs_wr" => Ok(Scheme::SrsWr),
            "pps_wr" | "pps" => Ok(Scheme::PpsWr),
            other => Err(Error::InvalidArgument(format!("unknown sampling scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An immutable subsample of observation indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsamplePlan {
    indices: Vec<usize>,
    scheme: Scheme,
    n: usize,
    draw_probs: Option<Vec<f64>>,
    seed: u64,
}

impl SubsamplePlan {
    /// A without-replacement plan over explicitly chosen indices.
    pub fn wor_from_indices(n: usize, indices: Vec<usize>) -> Result<Self> {
        validate_size(n, indices.len())?;
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!("index {i} out of range for n = {n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("duplicate index {i} in WOR plan")));
            }
        }
        Ok(Self {
            indices,
            scheme: Scheme::SrsWor,
            n,
            draw_probs: None,
            seed: 0,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn draw_probs(&self) -> Option<&[f64]> {
        self.draw_probs.as_deref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Values of `full` at the subsample, in plan order.
    pub fn gather(&self, full: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("gather", self.n, full.len())?;
        Ok(self.indices.iter().map(|&i| full[i]).collect())
    }
}

fn validate_size(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        Err(Error::InvalidSubsampleSize { n, m })
    } else {
        Ok(())
    }
}

/// Simple random sample of `m` distinct indices (partial Fisher–Yates).
pub fn srs_wor(n: usize, m: usize, seed: u64) -> Result<SubsamplePlan> {
    validate_size(n, m)?;
    let mut rng = stream_rng(seed, 0, StreamPurpose::Subsample);
    let mut pool: Vec<usize> = (0..n).collect();
    for k in 0..m {
        let j = rng.random_range(k..n);
        pool.swap(k, j);
    }
    pool.truncate(m);
    Ok(SubsamplePlan {
        indices: pool,
        scheme: Scheme::SrsWor,
        n,
        draw_probs: None,
        seed,
    })
}

/// `m` independent uniform draws.
pub fn srs_wr(n: usize, m: usize, seed: u64) -> Result<SubsamplePlan> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidSubsampleSize { n, m });
    }
    let mut rng = stream_rng(seed, 0, StreamPurpose::Subsample);
    let indices = (0..m).map(|_| rng.random_range(0..n)).collect();
    Ok(SubsamplePlan {
        indices,
        scheme: Scheme::SrsWr,
        n,
        draw_probs: None,
        seed,
    })
}

/// `m` independent draws with probability proportional to `weights`.
pub fn pps_wr(weights: &[f64], m: usize, seed: u64) -> Result<SubsamplePlan> {
    let n = weights.len();
    if n == 0 || m == 0 {
        return Err(Error::InvalidSubsampleSize { n, m });
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "PPS weights must be finite and strictly positive, found {w}"
        )));
    }
    let total: f64 = crate::numerics::pairwise_sum(weights);
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::InvalidArgument("PPS weights cannot be normalised".into()));
    }
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let mut rng = stream_rng(seed, 0, StreamPurpose::Subsample);
    let indices = (0..m)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cumulative.partition_point(|&c| c <= u).min(n - 1)
        })
        .collect();
    Ok(SubsamplePlan {
        indices,
        scheme: Scheme::PpsWr,
        n,
        draw_probs: Some(probs),
        seed,
    })
}

/// Draw probabilities proportional to `|π̃_i|`.
pub fn pps_weights_from_surrogate(surrogate: &[f64]) -> Result<Vec<f64>> {
    surrogate
        .iter()
        .map(|v| {
            let a = v.abs();
            if a > 0.0 && a.is_finite() {
                Ok(a)
            } else {
                Err(Error::Degenerate(format!(
                    "surrogate value {v} gives a zero PPS draw probability"
                )))
            }
        })
        .collect()
}

pub fn binomial(n: usize, m: usize) -> u128 {
    if m > n {
        return 0;
    }
    let m = m.min(n - m);
    (0..m).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Every size-`m` subset of `0..n` in lexicographic order.
pub fn enumerate_subsamples_wor(n: usize, m: usize) -> Result<Subsets> {
    validate_size(n, m)?;
    let count = binomial(n, m);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            n,
            m,
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(Subsets {
        n,
        current: Some((0..m).collect()),
    })
}

#[derive(Debug, Clone)]
pub struct Subsets {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Iterator for Subsets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let m = out.len();
        let mut next = out.clone();
        // rightmost position that can still advance
        if let Some(pos) = (0..m).rev().find(|&k| next[k] < self.n - m + k) {
            next[pos] += 1;
            for k in pos + 1..m {
                next[k] = next[k - 1] + 1;
            }
            self.current = Some(next);
        }
        Some(out)
    }
}
