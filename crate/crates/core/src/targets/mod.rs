//! Unnormalized target densities, their gradients, analytic ground truth
//! where available, and dataset ingestion for logistic regression.

mod dataset;
mod funnel;
mod gmm;
mod logreg;
mod rings;

pub use dataset::{load_dataset, DataSplits, Dataset};
pub use funnel::FunnelTarget;
pub use gmm::{gmm_generate, GmmTarget};
pub use logreg::{
    log_likelihood_point as logreg_log_likelihood_point, log_prior as logreg_log_prior,
    log_sigmoid, LogRegTarget,
};
pub use rings::RingsTarget;

use crate::core::{log_normal_isotropic, sample_normal_isotropic};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid target parameters: {0}")]
    InvalidParameters(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// An unnormalized density π̃(x) with optional extras used by the samplers
/// and the evaluation harness.
pub trait TargetDensity: Sync {
    fn dim(&self) -> usize;

    /// log π̃(x); may be -∞ where the density vanishes.
    fn log_unnormalized(&self, x: &[f64]) -> f64;

    /// ∇ log π̃(x), or None where the gradient is undefined/unavailable.
    fn grad_log_unnormalized(&self, x: &[f64]) -> Option<Vec<f64>>;

    /// Both at once; override when the two share work.
    fn log_unnorm_and_grad(&self, x: &[f64]) -> (f64, Option<Vec<f64>>) {
        (self.log_unnormalized(x), self.grad_log_unnormalized(x))
    }

    /// Whether gradients are available anywhere on the domain.
    fn has_gradient(&self) -> bool {
        true
    }

    /// Exact log Z when known.
    fn log_z(&self) -> Option<f64> {
        None
    }

    /// Exact sample for validation, when an analytic sampler exists.
    fn sample_exact(&self, _rng: &mut dyn rand::RngCore) -> Option<Vec<f64>> {
        None
    }

    /// (R, τ) scale pair used to initialize the annealing baselines with
    /// ρ₀ = N(0, (R² + τ²)·I).
    fn anneal_init_scale(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Scaled isotropic Gaussian c·N(mean, var·I); the workhorse validation
/// target with log Z = log c known exactly.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub variance: f64,
    pub log_scale: f64,
}

impl GaussianTarget {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: 1.0,
            log_scale: 0.0,
        }
    }

    pub fn scaled(dim: usize, scale: f64) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: 1.0,
            log_scale: scale.ln(),
        }
    }

    pub fn new(mean: Vec<f64>, variance: f64, log_scale: f64) -> Result<Self, TargetError> {
        if mean.is_empty() || !(variance > 0.0) {
            return Err(TargetError::InvalidParameters(
                "Gaussian target needs d >= 1 and variance > 0",
            ));
        }
        Ok(Self {
            mean,
            variance,
            log_scale,
        })
    }
}

impl TargetDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_unnormalized(&self, x: &[f64]) -> f64 {
        self.log_scale + log_normal_isotropic(x, &self.mean, self.variance)
    }

    fn grad_log_unnormalized(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(
            x.iter()
                .zip(&self.mean)
                .map(|(xi, mi)| -(xi - mi) / self.variance)
                .collect(),
        )
    }

    fn log_z(&self) -> Option<f64> {
        Some(self.log_scale)
    }

    fn sample_exact(&self, rng: &mut dyn rand::RngCore) -> Option<Vec<f64>> {
        Some(sample_normal_isotropic(rng, &self.mean, self.variance))
    }

    fn anneal_init_scale(&self) -> Option<(f64, f64)> {
        let norm = self.mean.iter().map(|m| m * m).sum::<f64>().sqrt();
        Some((norm, self.variance.sqrt()))
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::TargetDensity;

    /// Central finite-difference check of the analytic gradient.
    pub fn assert_gradient_matches_fd<T: TargetDensity + ?Sized>(
        target: &T,
        x: &[f64],
        rel_tol: f64,
    ) {
        let grad = target
            .grad_log_unnormalized(x)
            .expect("gradient unavailable at test point");
        let mut fd = vec![0.0; x.len()];
        for i in 0..x.len() {
            let h = 1e-5 * x[i].abs().max(1.0);
            let mut plus = x.to_vec();
            plus[i] += h;
            let mut minus = x.to_vec();
            minus[i] -= h;
            fd[i] = (target.log_unnormalized(&plus) - target.log_unnormalized(&minus)) / (2.0 * h);
        }
        let err: f64 = grad
            .iter()
            .zip(&fd)
            .map(|(g, f)| (g - f) * (g - f))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1.0);
        assert!(
            err / norm <= rel_tol,
            "gradient mismatch: rel err {} at {:?}",
            err / norm,
            x
        );
    }
}
