//! Numerically stable particle bookkeeping: log-domain weights, effective
//! sample size, resampling, and deterministic counter-based RNG streams.
//!
//! All weight arithmetic happens in the log domain; weights in an SMC run
//! span hundreds of orders of magnitude across steps. A particle system
//! whose weights have all underflowed is reported as degenerate rather
//! than silently renormalized.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate particle system: {0}")]
    Degenerate(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// log Σ exp(vᵢ) with max-subtraction. All-(-∞) inputs yield -∞.
pub fn log_sum_exp(values: &[f64]) -> Result<f64, CoreError> {
    if values.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if max.is_nan() {
        return Err(CoreError::Degenerate("NaN log-weight"));
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Normalized linear weights from unnormalized log-weights.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>, CoreError> {
    let norm = log_sum_exp(log_weights)?;
    if norm == f64::NEG_INFINITY {
        return Err(CoreError::Degenerate("all log-weights are -inf"));
    }
    Ok(log_weights.iter().map(|w| (w - norm).exp()).collect())
}

/// Effective sample size (Σwᵢ)²/Σwᵢ² of nonnegative weights.
pub fn ess(weights: &[f64]) -> Result<f64, CoreError> {
    if weights.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if !(sum > 0.0) || !sum_sq.is_finite() {
        return Err(CoreError::Degenerate("weights sum to zero"));
    }
    Ok(sum * sum / sum_sq)
}

/// ESS computed directly from unnormalized log-weights:
/// exp(2·lse(w) − lse(2w)).
pub fn ess_from_log_weights(log_weights: &[f64]) -> Result<f64, CoreError> {
    let lse = log_sum_exp(log_weights)?;
    if lse == f64::NEG_INFINITY {
        return Err(CoreError::Degenerate("all log-weights are -inf"));
    }
    let doubled: Vec<f64> = log_weights.iter().map(|w| 2.0 * w).collect();
    let lse2 = log_sum_exp(&doubled)?;
    Ok((2.0 * lse - lse2).exp())
}

/// Systematic resampling from a single uniform draw `u ∈ [0, 1)`.
///
/// Grid points (j + u)/n_out are matched against the weight CDF; the
/// returned ancestor indices are nondecreasing and the count of index i
/// is ⌊n_out·wᵢ⌋ or ⌈n_out·wᵢ⌉.
pub fn systematic_resample(weights: &[f64], u: f64, n_out: usize) -> Vec<usize> {
    debug_assert!((0.0..1.0).contains(&u));
    debug_assert!(!weights.is_empty());
    let n_in = weights.len();
    let mut indices = Vec::with_capacity(n_out);
    let mut i = 0usize;
    let mut cdf = weights[0];
    for j in 0..n_out {
        let grid = (j as f64 + u) / n_out as f64;
        // half-open cells [C_{i-1}, C_i): a grid point on the boundary
        // belongs to the next cell
        while cdf <= grid && i + 1 < n_in {
            i += 1;
            cdf += weights[i];
        }
        indices.push(i);
    }
    indices
}

/// Multinomial resampling: n_out i.i.d. categorical draws.
pub fn multinomial_resample<R: Rng>(
    weights: &[f64],
    rng: &mut R,
    n_out: usize,
) -> Result<Vec<usize>, CoreError> {
    if weights.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(CoreError::Degenerate("weights sum to zero"));
    }
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let indices = (0..n_out)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            cdf.partition_point(|c| *c < u).min(weights.len() - 1)
        })
        .collect();
    Ok(indices)
}

/// Isotropic Gaussian log-density log N(x | mean, var·I).
pub fn log_normal_isotropic(x: &[f64], mean: &[f64], var: f64) -> f64 {
    debug_assert_eq!(x.len(), mean.len());
    let d = x.len() as f64;
    let sq: f64 = x
        .iter()
        .zip(mean)
        .map(|(xi, mi)| {
            let diff = xi - mi;
            diff * diff
        })
        .sum();
    -0.5 * d * (LN_2PI + var.ln()) - 0.5 * sq / var
}

/// Draw from N(mean, var·I).
pub fn sample_normal_isotropic<R: Rng + ?Sized>(rng: &mut R, mean: &[f64], var: f64) -> Vec<f64> {
    let sd = var.sqrt();
    mean.iter()
        .map(|m| m + sd * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

/// Labels for RNG stream paths, so no two uses of randomness share a path.
pub mod stream_label {
    pub const REFERENCE: u64 = 1;
    pub const PROPAGATE: u64 = 2;
    pub const RESAMPLE: u64 = 3;
    pub const INNER: u64 = 4;
    pub const INNER_INIT: u64 = 5;
    pub const INNER_MCMC: u64 = 6;
    pub const INNER_RESAMPLE: u64 = 7;
    pub const ANNEAL_INIT: u64 = 8;
    pub const ANNEAL_MCMC: u64 = 9;
    pub const ANNEAL_RESAMPLE: u64 = 10;
    pub const METRICS: u64 = 11;
    pub const DATA_SPLIT: u64 = 12;
    pub const TARGET_GEN: u64 = 13;
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based RNG stream keyed by a root seed and a path of integers.
///
/// The generator produced by [`RngStream::rng`] is a pure function of
/// (root_seed, path); child streams with distinct paths are statistically
/// independent. This makes every draw reproducible regardless of thread
/// scheduling: each unit of work derives its own stream from its indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    root_seed: u64,
    state: u64,
}

impl RngStream {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            state: splitmix(root_seed ^ GOLDEN_GAMMA),
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    /// Extend the path by one element.
    pub fn child(&self, label: u64) -> Self {
        Self {
            root_seed: self.root_seed,
            state: splitmix(self.state ^ splitmix(label.wrapping_add(GOLDEN_GAMMA))),
        }
    }

    /// Instantiate the generator for this path.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut s = self.state;
        for chunk in key.chunks_exact_mut(8) {
            s = s.wrapping_add(GOLDEN_GAMMA);
            chunk.copy_from_slice(&splitmix(s).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

/// N weighted particles with optional cached score and log-marginal
/// estimates carried between SMC steps.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    pub positions: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
    pub scores: Option<Vec<Vec<f64>>>,
    pub log_marginals: Option<Vec<f64>>,
    pub step_index: usize,
}

impl ParticleSystem {
    pub fn new(positions: Vec<Vec<f64>>, log_weights: Vec<f64>) -> Result<Self, CoreError> {
        if positions.is_empty() {
            return Err(CoreError::InvalidArgument("need at least one particle"));
        }
        if positions.len() != log_weights.len() {
            return Err(CoreError::InvalidArgument(
                "positions and log_weights disagree on particle count",
            ));
        }
        let d = positions[0].len();
        if d == 0 || positions.iter().any(|p| p.len() != d) {
            return Err(CoreError::InvalidArgument("inconsistent dimension"));
        }
        Ok(Self {
            positions,
            log_weights,
            scores: None,
            log_marginals: None,
            step_index: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    /// True when every log-weight has underflowed or a NaN crept in.
    pub fn is_degenerate(&self) -> bool {
        self.log_weights.iter().any(|w| w.is_nan())
            || self.log_weights.iter().all(|w| *w == f64::NEG_INFINITY)
    }

    pub fn normalized_weights(&self) -> Result<Vec<f64>, CoreError> {
        if self.log_weights.iter().any(|w| w.is_nan()) {
            return Err(CoreError::Degenerate("NaN log-weight"));
        }
        normalize_log_weights(&self.log_weights)
    }

    pub fn ess(&self) -> Result<f64, CoreError> {
        ess_from_log_weights(&self.log_weights)
    }

    /// Gather particles by ancestor index, carrying every cached field.
    pub fn gather(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i].clone()).collect(),
            log_weights: indices.iter().map(|&i| self.log_weights[i]).collect(),
            scores: self
                .scores
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i].clone()).collect()),
            log_marginals: self
                .log_marginals
                .as_ref()
                .map(|m| indices.iter().map(|&i| m[i]).collect()),
            step_index: self.step_index,
        }
    }

    /// Weighted mean of the particle positions.
    pub fn weighted_mean(&self) -> Result<Vec<f64>, CoreError> {
        let weights = self.normalized_weights()?;
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (p, w) in self.positions.iter().zip(&weights) {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += w * x;
            }
        }
        Ok(mean)
    }
}
