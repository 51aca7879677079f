//! Bayesian logistic regression posterior.
//!
//! Parameters are (w, b) with prior N(w; 0, I)·N(b; 0, 2.5²) and likelihood
//! Bernoulli(y; sigmoid(xᵀw + b)). The parameter vector stacks the weights
//! first and the intercept last, d = features + 1.

use super::{Dataset, TargetDensity, TargetError};
use crate::core::LN_2PI;

pub const INTERCEPT_VARIANCE: f64 = 6.25;

/// Numerically stable log σ(z) = -log(1 + exp(-z)).
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log N(w; 0, I) + log N(b; 0, 2.5²) for a stacked (w, b) vector.
pub fn log_prior(params: &[f64]) -> f64 {
    let (w, b) = params.split_at(params.len() - 1);
    let sq: f64 = w.iter().map(|v| v * v).sum();
    -0.5 * w.len() as f64 * LN_2PI - 0.5 * sq
        - 0.5 * (LN_2PI + INTERCEPT_VARIANCE.ln())
        - 0.5 * b[0] * b[0] / INTERCEPT_VARIANCE
}

/// log Bernoulli(y; σ(xᵀw + b)) via the stable form -log(1 + exp(-(2y-1)z)).
pub fn log_likelihood_point(features: &[f64], label: f64, params: &[f64]) -> f64 {
    let (w, b) = params.split_at(params.len() - 1);
    let z: f64 = features.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() + b[0];
    log_sigmoid((2.0 * label - 1.0) * z)
}

#[derive(Debug, Clone)]
pub struct LogRegTarget {
    features: Vec<f64>, // row-major M × (d-1)
    labels: Vec<f64>,
    n_rows: usize,
    n_features: usize,
}

impl LogRegTarget {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self, TargetError> {
        if features.len() != labels.len() {
            return Err(TargetError::InvalidParameters(
                "feature and label counts disagree",
            ));
        }
        if labels.iter().any(|y| *y != 0.0 && *y != 1.0) {
            return Err(TargetError::InvalidParameters("labels must be 0 or 1"));
        }
        let n_features = features.first().map_or(0, |r| r.len());
        if n_features == 0 && !features.is_empty() {
            return Err(TargetError::InvalidParameters("empty feature rows"));
        }
        if features.iter().any(|r| r.len() != n_features) {
            return Err(TargetError::InvalidParameters("ragged feature rows"));
        }
        let n_rows = features.len();
        Ok(Self {
            features: features.into_iter().flatten().collect(),
            labels,
            n_rows,
            n_features,
        })
    }

    pub fn from_dataset(data: &Dataset) -> Result<Self, TargetError> {
        Self::new(data.features.clone(), data.labels.clone())
    }

    /// Empty-likelihood posterior: just the prior over the given dimension.
    pub fn prior_only(n_features: usize) -> Self {
        Self {
            features: Vec::new(),
            labels: Vec::new(),
            n_rows: 0,
            n_features,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.features[j * self.n_features..(j + 1) * self.n_features]
    }
}

impl TargetDensity for LogRegTarget {
    fn dim(&self) -> usize {
        self.n_features + 1
    }

    fn log_unnormalized(&self, x: &[f64]) -> f64 {
        self.log_unnorm_and_grad_impl(x, false).0
    }

    fn grad_log_unnormalized(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.log_unnorm_and_grad_impl(x, true).1
    }

    fn log_unnorm_and_grad(&self, x: &[f64]) -> (f64, Option<Vec<f64>>) {
        self.log_unnorm_and_grad_impl(x, true)
    }
}

impl LogRegTarget {
    fn log_unnorm_and_grad_impl(&self, params: &[f64], want_grad: bool) -> (f64, Option<Vec<f64>>) {
        debug_assert_eq!(params.len(), self.n_features + 1);
        let (w, b) = params.split_at(self.n_features);
        let mut logp = log_prior(params);
        let mut grad = if want_grad {
            let mut g: Vec<f64> = w.iter().map(|wi| -wi).collect();
            g.push(-b[0] / INTERCEPT_VARIANCE);
            Some(g)
        } else {
            None
        };
        for j in 0..self.n_rows {
            let row = self.row(j);
            let z: f64 = row.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() + b[0];
            let y = self.labels[j];
            logp += log_sigmoid((2.0 * y - 1.0) * z);
            if let Some(g) = grad.as_mut() {
                let resid = y - sigmoid(z);
                for (gi, xi) in g[..self.n_features].iter_mut().zip(row) {
                    *gi += resid * xi;
                }
                g[self.n_features] += resid;
            }
        }
        (logp, grad)
    }
}
