//! Evaluation metrics: mode-weight bias, histogram TVD, sliced KSD,
//! predictive log-likelihood, and normalization-constant bias.

use crate::core::{CoreError, RngStream};
use crate::targets::GmmTarget;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("invalid metric input: {0}")]
    InvalidInput(&'static str),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// |ŵ₁ − w₁| where ŵ₁ is the weighted fraction of samples assigned to
/// component 1 by highest posterior probability.
pub fn gmm_weight_ratio_bias(
    samples: &[Vec<f64>],
    weights: &[f64],
    gmm: &GmmTarget,
) -> Result<f64, MetricError> {
    if samples.len() != weights.len() || samples.is_empty() {
        return Err(MetricError::InvalidInput("need matching, nonempty samples and weights"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(MetricError::InvalidInput("weights sum to zero"));
    }
    let mut w1 = 0.0;
    for (x, w) in samples.iter().zip(weights) {
        if gmm.most_likely_component(x) == 0 {
            w1 += w;
        }
    }
    Ok((w1 / total - gmm.weights[0]).abs())
}

/// ½·Σ|μ̂_i − ν̂_i| over weighted histogram masses on a shared binning;
/// out-of-range mass is clamped into the edge bins.
pub fn histogram_tvd(
    samples_a: &[f64],
    weights_a: &[f64],
    samples_b: &[f64],
    weights_b: &[f64],
    bins: usize,
    range: (f64, f64),
) -> Result<f64, MetricError> {
    if bins == 0 {
        return Err(MetricError::InvalidInput("need at least one bin"));
    }
    if !(range.1 > range.0) {
        return Err(MetricError::InvalidInput("empty histogram range"));
    }
    let hist = |values: &[f64], weights: &[f64]| -> Result<Vec<f64>, MetricError> {
        if values.len() != weights.len() || values.is_empty() {
            return Err(MetricError::InvalidInput("need matching, nonempty samples and weights"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(MetricError::InvalidInput("weights sum to zero"));
        }
        let width = (range.1 - range.0) / bins as f64;
        let mut h = vec![0.0; bins];
        for (v, w) in values.iter().zip(weights) {
            let idx = (((v - range.0) / width).floor() as i64).clamp(0, bins as i64 - 1);
            h[idx as usize] += w / total;
        }
        Ok(h)
    };
    let a = hist(samples_a, weights_a)?;
    let b = hist(samples_b, weights_b)?;
    Ok(0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Weighted two-sample Kolmogorov-Smirnov statistic in one dimension.
fn weighted_ks(values_a: &[f64], weights_a: &[f64], values_b: &[f64], weights_b: &[f64]) -> f64 {
    let total_a: f64 = weights_a.iter().sum();
    let total_b: f64 = weights_b.iter().sum();
    let mut a: Vec<(f64, f64)> = values_a.iter().cloned().zip(weights_a.iter().cloned()).collect();
    let mut b: Vec<(f64, f64)> = values_b.iter().cloned().zip(weights_b.iter().cloned()).collect();
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    b.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut sup: f64 = 0.0;
    while ia < a.len() || ib < b.len() {
        let next = match (a.get(ia), b.get(ib)) {
            (Some(x), Some(y)) => x.0.min(y.0),
            (Some(x), None) => x.0,
            (None, Some(y)) => y.0,
            (None, None) => break,
        };
        while ia < a.len() && a[ia].0 <= next {
            fa += a[ia].1 / total_a;
            ia += 1;
        }
        while ib < b.len() && b[ib].0 <= next {
            fb += b[ib].1 / total_b;
            ib += 1;
        }
        sup = sup.max((fa - fb).abs());
    }
    sup
}

/// Mean over random unit directions of the 1-D two-sample KS statistic
/// between the weighted empirical CDFs of the projections.
pub fn sliced_ksd(
    samples: &[Vec<f64>],
    weights: &[f64],
    reference: &[Vec<f64>],
    n_projections: usize,
    stream: &RngStream,
) -> Result<f64, MetricError> {
    if samples.is_empty() || reference.is_empty() {
        return Err(MetricError::InvalidInput("need nonempty sample sets"));
    }
    if samples.len() != weights.len() {
        return Err(MetricError::InvalidInput("need one weight per sample"));
    }
    if n_projections == 0 {
        return Err(MetricError::InvalidInput("need at least one projection"));
    }
    let d = samples[0].len();
    let ref_weights = vec![1.0; reference.len()];
    let mut acc = 0.0;
    for p in 0..n_projections {
        let mut rng = stream.child(p as u64).rng();
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        for v in &mut dir {
            *v /= norm;
        }
        let project = |xs: &[Vec<f64>]| -> Vec<f64> {
            xs.iter()
                .map(|x| x.iter().zip(&dir).map(|(xi, di)| xi * di).sum())
                .collect()
        };
        acc += weighted_ks(&project(samples), weights, &project(reference), &ref_weights);
    }
    Ok(acc / n_projections as f64)
}

/// Σ_i w̄_i·[log p(w_i, b_i) + Σ_{(x,y)∈test} log p(y | x; w_i, b_i)].
pub fn predictive_log_likelihood(
    posterior_samples: &[Vec<f64>],
    weights: &[f64],
    test_features: &[Vec<f64>],
    test_labels: &[f64],
) -> Result<f64, MetricError> {
    if posterior_samples.is_empty() || posterior_samples.len() != weights.len() {
        return Err(MetricError::InvalidInput("need matching samples and weights"));
    }
    if test_features.len() != test_labels.len() {
        return Err(MetricError::InvalidInput("test features and labels disagree"));
    }
    let d = posterior_samples[0].len();
    if let Some(row) = test_features.first() {
        if row.len() + 1 != d {
            return Err(MetricError::InvalidInput(
                "posterior samples must stack (weights, intercept) for the feature dimension",
            ));
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(MetricError::InvalidInput("weights sum to zero"));
    }
    let mut acc = 0.0;
    for (params, w) in posterior_samples.iter().zip(weights) {
        let mut term = crate::targets::logreg_log_prior(params);
        for (x, y) in test_features.iter().zip(test_labels) {
            term += crate::targets::logreg_log_likelihood_point(x, *y, params);
        }
        acc += w / total * term;
    }
    Ok(acc)
}

/// |log Ẑ − log Z|.
pub fn logz_bias(log_z_hat: f64, true_log_z: f64) -> f64 {
    (log_z_hat - true_log_z).abs()
}

/// |Ẑ − Z| on the linear scale.
pub fn z_bias(log_z_hat: f64, true_log_z: f64) -> f64 {
    (log_z_hat.exp() - true_log_z.exp()).abs()
}
