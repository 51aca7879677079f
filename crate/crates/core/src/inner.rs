//! Nested score/marginal estimation.
//!
//! Given a point x_t and schedule coefficients (α_t, σ_t), the estimators
//! here target the denoising posterior p(u | x_t) ∝ π̃(u)·N(x_t | α_t u,
//! σ_t²·I) by importance sampling or annealed importance sampling, and
//! return a score estimate s(x_t, u_t) under a chosen identity together
//! with an unbiased marginal estimate p̂(x_t, u_t) of Z·p(x_t):
//!
//!   log p̂ = log Σ_m w^(m) − log n_is.
//!
//! AIS anneals ν_k(u) ∝ q(u)^{1-β_k}·[π̃(u)·N(x_t | α_t u, σ_t²·I)]^{β_k}
//! with β_k = k/n_steps; n_steps = 1 collapses to plain IS bit-for-bit.

use crate::core::{
    ess, log_normal_isotropic, log_sum_exp, normalize_log_weights, sample_normal_isotropic,
    stream_label, systematic_resample, CoreError, RngStream,
};
use crate::targets::TargetDensity;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InnerError {
    #[error("invalid inner configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("degenerate inner estimate: all importance weights underflowed")]
    DegenerateEstimate,
    #[error("target gradient unavailable")]
    GradientUnavailable,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerEstimator {
    Is,
    Ais,
    AisResampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreIdentity {
    Dsi,
    Tsi,
    Msi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McmcKernelKind {
    Ula,
    Mala,
    Hmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// N(u | x_t/α_t, σ_t²/α_t²·I), the reversed forward kernel.
    ReversedKernel,
    /// N(u | x_t, σ_t²/α_t²·I); avoids the 1/α_t blow-up at high noise.
    Centered,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerConfig {
    pub estimator: InnerEstimator,
    pub identity: ScoreIdentity,
    pub n_is: usize,
    pub n_steps: usize,
    pub m_steps: usize,
    pub kernel: McmcKernelKind,
    pub delta_mcmc: f64,
    pub hmc_leapfrog: usize,
    pub proposal: ProposalKind,
    pub score_clip: Option<f64>,
    /// Optional [c, C] clamp on p̂ enforcing bounded marginal ratios.
    pub marginal_clamp: Option<(f64, f64)>,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            estimator: InnerEstimator::Is,
            identity: ScoreIdentity::Dsi,
            n_is: 32,
            n_steps: 1,
            m_steps: 1,
            kernel: McmcKernelKind::Mala,
            delta_mcmc: 0.05,
            hmc_leapfrog: 5,
            proposal: ProposalKind::ReversedKernel,
            score_clip: None,
            marginal_clamp: None,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<(), InnerError> {
        if self.n_is < 1 {
            return Err(InnerError::InvalidConfig("n_is must be at least 1"));
        }
        if self.n_steps < 1 {
            return Err(InnerError::InvalidConfig("n_steps must be at least 1"));
        }
        if self.m_steps < 1 {
            return Err(InnerError::InvalidConfig("m_steps must be at least 1"));
        }
        if self.estimator == InnerEstimator::Is && self.n_steps != 1 {
            return Err(InnerError::InvalidConfig("the IS estimator requires n_steps = 1"));
        }
        if self.n_steps > 1 && !(self.delta_mcmc > 0.0) {
            return Err(InnerError::InvalidConfig("MCMC step size must be positive"));
        }
        if self.kernel == McmcKernelKind::Hmc && self.hmc_leapfrog < 1 {
            return Err(InnerError::InvalidConfig("HMC needs at least one leapfrog step"));
        }
        if let Some(c) = self.score_clip {
            if !(c > 0.0) {
                return Err(InnerError::InvalidConfig("score clip threshold must be positive"));
            }
        }
        if let Some((c, big_c)) = self.marginal_clamp {
            if !(c > 0.0 && big_c > c) {
                return Err(InnerError::InvalidConfig("marginal clamp needs 0 < c < C"));
            }
        }
        Ok(())
    }
}

/// Result of one inner Monte Carlo run.
#[derive(Debug, Clone)]
pub struct InnerEstimate {
    pub score: Vec<f64>,
    pub log_marginal: f64,
    pub inner_ess: f64,
    pub acceptance_rate: f64,
}

/// Isotropic Gaussian usable as an inner proposal.
#[derive(Debug, Clone)]
pub struct IsotropicGaussian {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl IsotropicGaussian {
    pub fn logpdf(&self, x: &[f64]) -> f64 {
        log_normal_isotropic(x, &self.mean, self.variance)
    }

    pub fn grad_logpdf(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .map(|(xi, mi)| -(xi - mi) / self.variance)
            .collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        sample_normal_isotropic(rng, &self.mean, self.variance)
    }
}

/// Build the configured proposal for the posterior at (x_t, α_t, σ_t).
pub fn inner_proposal(
    kind: ProposalKind,
    x_t: &[f64],
    alpha: f64,
    sigma: f64,
) -> Result<IsotropicGaussian, InnerError> {
    if !(alpha > 0.0) {
        return Err(InnerError::InvalidConfig("proposal requires alpha > 0"));
    }
    if !(sigma > 0.0) {
        return Err(InnerError::InvalidConfig(
            "proposal degenerate at sigma = 0; the inner estimator is not defined at t = 0",
        ));
    }
    let variance = sigma * sigma / (alpha * alpha);
    let mean = match kind {
        ProposalKind::ReversedKernel => x_t.iter().map(|x| x / alpha).collect(),
        ProposalKind::Centered => x_t.to_vec(),
    };
    Ok(IsotropicGaussian { mean, variance })
}

/// Strategy producing the (initial) inner proposal per evaluation point.
pub trait ProposalBuilder: Sync {
    fn build(&self, x_t: &[f64], alpha: f64, sigma: f64) -> Result<IsotropicGaussian, InnerError>;
}

/// The two config-selectable proposals.
pub struct StandardProposal(pub ProposalKind);

impl ProposalBuilder for StandardProposal {
    fn build(&self, x_t: &[f64], alpha: f64, sigma: f64) -> Result<IsotropicGaussian, InnerError> {
        inner_proposal(self.0, x_t, alpha, sigma)
    }
}

/// Exact conjugate posterior for an isotropic Gaussian prior c·N(m, s²·I):
/// a zero-variance proposal useful for validation and for targets with a
/// known Gaussian approximation.
pub struct ConjugateGaussianProposal {
    pub prior_mean: Vec<f64>,
    pub prior_variance: f64,
}

impl ProposalBuilder for ConjugateGaussianProposal {
    fn build(&self, x_t: &[f64], alpha: f64, sigma: f64) -> Result<IsotropicGaussian, InnerError> {
        if !(sigma > 0.0) {
            return Err(InnerError::InvalidConfig("sigma must be positive"));
        }
        let s2 = self.prior_variance;
        let precision = 1.0 / s2 + alpha * alpha / (sigma * sigma);
        let variance = 1.0 / precision;
        let mean = x_t
            .iter()
            .zip(&self.prior_mean)
            .map(|(x, m)| variance * (m / s2 + alpha * x / (sigma * sigma)))
            .collect();
        Ok(IsotropicGaussian { mean, variance })
    }
}

/// Combine weighted posterior samples into a score estimate.
pub fn combine_identity<T: TargetDensity + ?Sized>(
    identity: ScoreIdentity,
    particles: &[Vec<f64>],
    weights: &[f64],
    x_t: &[f64],
    alpha: f64,
    sigma: f64,
    target: &T,
) -> Result<Vec<f64>, InnerError> {
    let d = x_t.len();
    let mut score = vec![0.0; d];
    match identity {
        ScoreIdentity::Dsi => {
            let inv_var = 1.0 / (sigma * sigma);
            for (u, w) in particles.iter().zip(weights) {
                for k in 0..d {
                    score[k] += w * (alpha * u[k] - x_t[k]) * inv_var;
                }
            }
        }
        ScoreIdentity::Tsi => {
            for (u, w) in particles.iter().zip(weights) {
                let grad = target
                    .grad_log_unnormalized(u)
                    .ok_or(InnerError::GradientUnavailable)?;
                for k in 0..d {
                    score[k] += w * grad[k] / alpha;
                }
            }
        }
        ScoreIdentity::Msi => {
            let denom = alpha * alpha + sigma * sigma;
            for (u, w) in particles.iter().zip(weights) {
                let grad = target
                    .grad_log_unnormalized(u)
                    .ok_or(InnerError::GradientUnavailable)?;
                for k in 0..d {
                    score[k] += w * (alpha * (u[k] + grad[k]) - x_t[k]) / denom;
                }
            }
        }
    }
    Ok(score)
}

/// Rescale the score to `threshold` when its norm exceeds it.
pub fn clip_score(mut score: Vec<f64>, threshold: f64) -> Vec<f64> {
    debug_assert!(threshold > 0.0);
    let norm: f64 = score.iter().map(|s| s * s).sum::<f64>().sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        for s in &mut score {
            *s *= scale;
        }
    }
    score
}

/// One MCMC transition leaving `log_density` invariant.
///
/// ULA takes the unadjusted step x' = x + δ²/2·∇log ν(x) + δ·ξ and always
/// "accepts"; MALA adds the Metropolis-Hastings correction; HMC runs
/// `hmc_leapfrog` leapfrog steps with identity mass.
pub fn mcmc_transition<R, F, G>(
    kernel: McmcKernelKind,
    log_density: &F,
    grad: &G,
    x: &[f64],
    delta: f64,
    hmc_leapfrog: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, bool), InnerError>
where
    R: Rng,
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Result<Vec<f64>, InnerError>,
{
    if !(delta > 0.0) {
        return Err(InnerError::InvalidConfig("MCMC step size must be positive"));
    }
    let check = |g: Vec<f64>, what: &'static str| -> Result<Vec<f64>, InnerError> {
        if g.iter().any(|v| !v.is_finite()) {
            Err(InnerError::NonFinite(what))
        } else {
            Ok(g)
        }
    };
    match kernel {
        McmcKernelKind::Ula => {
            let g = check(grad(x)?, "gradient")?;
            let half = 0.5 * delta * delta;
            let next: Vec<f64> = x
                .iter()
                .zip(&g)
                .map(|(xi, gi)| {
                    xi + half * gi + delta * rng.sample::<f64, _>(rand_distr::StandardNormal)
                })
                .collect();
            Ok((next, true))
        }
        McmcKernelKind::Mala => {
            let g = check(grad(x)?, "gradient")?;
            let half = 0.5 * delta * delta;
            let var = delta * delta;
            let fwd_mean: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + half * gi).collect();
            let proposal = sample_normal_isotropic(rng, &fwd_mean, var);
            let logp_prop = log_density(&proposal);
            let accept_u: f64 = rng.gen();
            if logp_prop == f64::NEG_INFINITY || !logp_prop.is_finite() {
                return Ok((x.to_vec(), false));
            }
            let g_prop = check(grad(&proposal)?, "gradient")?;
            let rev_mean: Vec<f64> = proposal
                .iter()
                .zip(&g_prop)
                .map(|(xi, gi)| xi + half * gi)
                .collect();
            let log_ratio = logp_prop - log_density(x)
                + log_normal_isotropic(x, &rev_mean, var)
                - log_normal_isotropic(&proposal, &fwd_mean, var);
            if accept_u.ln() < log_ratio {
                Ok((proposal, true))
            } else {
                Ok((x.to_vec(), false))
            }
        }
        McmcKernelKind::Hmc => {
            let d = x.len();
            let mut momentum: Vec<f64> = (0..d)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let kinetic0: f64 = momentum.iter().map(|p| p * p).sum::<f64>() * 0.5;
            let h0 = -log_density(x) + kinetic0;
            let accept_u: f64 = rng.gen();
            let mut position = x.to_vec();
            let mut g = check(grad(&position)?, "gradient")?;
            for (p, gi) in momentum.iter_mut().zip(&g) {
                *p += 0.5 * delta * gi;
            }
            let mut diverged = false;
            for l in 0..hmc_leapfrog {
                for (q, p) in position.iter_mut().zip(&momentum) {
                    *q += delta * p;
                }
                if position.iter().any(|q| !q.is_finite()) {
                    diverged = true;
                    break;
                }
                match grad(&position) {
                    Ok(gr) if gr.iter().all(|v| v.is_finite()) => g = gr,
                    _ => {
                        diverged = true;
                        break;
                    }
                }
                let scale = if l + 1 == hmc_leapfrog { 0.5 } else { 1.0 };
                for (p, gi) in momentum.iter_mut().zip(&g) {
                    *p += scale * delta * gi;
                }
            }
            if diverged {
                return Ok((x.to_vec(), false));
            }
            let kinetic1: f64 = momentum.iter().map(|p| p * p).sum::<f64>() * 0.5;
            let logp1 = log_density(&position);
            if !logp1.is_finite() {
                return Ok((x.to_vec(), false));
            }
            let h1 = -logp1 + kinetic1;
            if accept_u.ln() < h0 - h1 {
                Ok((position, true))
            } else {
                Ok((x.to_vec(), false))
            }
        }
    }
}

/// Plain importance sampling (n_steps = 1).
pub fn is_estimate<T: TargetDensity + ?Sized>(
    target: &T,
    alpha: f64,
    sigma: f64,
    x_t: &[f64],
    cfg: &InnerConfig,
    stream: &RngStream,
) -> Result<InnerEstimate, InnerError> {
    let proposal = inner_proposal(cfg.proposal, x_t, alpha, sigma)?;
    is_estimate_with_proposal(target, alpha, sigma, x_t, &proposal, cfg, stream)
}

pub fn is_estimate_with_proposal<T: TargetDensity + ?Sized>(
    target: &T,
    alpha: f64,
    sigma: f64,
    x_t: &[f64],
    proposal: &IsotropicGaussian,
    cfg: &InnerConfig,
    stream: &RngStream,
) -> Result<InnerEstimate, InnerError> {
    run_annealed(target, alpha, sigma, x_t, proposal, cfg, stream, 1, false)
}

/// Annealed importance sampling over ν_k ∝ q^{1-β_k}·(π̃·likelihood)^{β_k}.
pub fn ais_estimate<T: TargetDensity + ?Sized>(
    target: &T,
    alpha: f64,
    sigma: f64,
    x_t: &[f64],
    cfg: &InnerConfig,
    stream: &RngStream,
) -> Result<InnerEstimate, InnerError> {
    let proposal = inner_proposal(cfg.proposal, x_t, alpha, sigma)?;
    ais_estimate_with_proposal(target, alpha, sigma, x_t, &proposal, cfg, stream)
}

pub fn ais_estimate_with_proposal<T: TargetDensity + ?Sized>(
    target: &T,
    alpha: f64,
    sigma: f64,
    x_t: &[f64],
    proposal: &IsotropicGaussian,
    cfg: &InnerConfig,
    stream: &RngStream,
) -> Result<InnerEstimate, InnerError> {
    run_annealed(
        target,
        alpha,
        sigma,
        x_t,
        proposal,
        cfg,
        stream,
        cfg.n_steps,
        false,
    )
}

/// Dispatch on the configured estimator.
pub fn estimate_with_proposal<T: TargetDensity + ?Sized>(
    target: &T,
    alpha: f64,
    sigma: f64,
    x_t: &[f64],
    proposal: &IsotropicGaussian,
    cfg: &InnerConfig,
    stream: &RngStream,
) -> Result<InnerEstimate, InnerError> {
    match cfg.estimator {
        InnerEstimator::Is => {
            run_annealed(target, alpha, sigma, x_t, proposal, cfg, stream, 1, false)
        }
        InnerEstimator::Ais => run_annealed(
            target, alpha, sigma, x_t, proposal, cfg, stream, cfg.n_steps, false,
        ),
        InnerEstimator::AisResampled => run_annealed(
            target, alpha, sigma, x_t, proposal, cfg, stream, cfg.n_steps, true,
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_annealed<T: TargetDensity + ?Sized>(
    target: &T,
    alpha: f64,
    sigma: f64,
    x_t: &[f64],
    proposal: &IsotropicGaussian,
    cfg: &InnerConfig,
    stream: &RngStream,
    n_steps: usize,
    resample_levels: bool,
) -> Result<InnerEstimate, InnerError> {
    if !(sigma > 0.0) {
        return Err(InnerError::InvalidConfig("sigma must be positive for t > 0"));
    }
    let n_is = cfg.n_is;
    if n_is < 1 || n_steps < 1 {
        return Err(InnerError::InvalidConfig("n_is and n_steps must be at least 1"));
    }
    let lik_var = sigma * sigma;
    let lik_coeff = alpha / lik_var;
    // log π̃(u) + log N(x_t | αu, σ²I) − log q(u)
    let path_ratio = |u: &[f64]| -> f64 {
        let mean: Vec<f64> = u.iter().map(|ui| alpha * ui).collect();
        target.log_unnormalized(u) + log_normal_isotropic(x_t, &mean, lik_var)
            - proposal.logpdf(u)
    };

    let beta = |k: usize| k as f64 / n_steps as f64;

    // initialize from the proposal with weight ν_1/q = β_1·path_ratio
    let mut particles: Vec<Vec<f64>> = Vec::with_capacity(n_is);
    let mut ratios: Vec<f64> = Vec::with_capacity(n_is);
    let init_stream = stream.child(stream_label::INNER_INIT);
    for m in 0..n_is {
        let u = proposal.sample(&mut init_stream.child(m as u64).rng());
        ratios.push(path_ratio(&u));
        particles.push(u);
    }
    let beta1 = beta(1);
    let mut log_weights: Vec<f64> = ratios.iter().map(|r| beta1 * r).collect();

    let mut log_marginal_acc = 0.0;
    let mut accepted = 0usize;
    let mut attempted = 0usize;

    if resample_levels && n_steps > 1 {
        log_marginal_acc += level_log_mean(&log_weights)?;
        let norm = normalize_log_weights(&log_weights)?;
        let u: f64 = stream
            .child(stream_label::INNER_RESAMPLE)
            .child(0)
            .rng()
            .gen();
        let idx = systematic_resample(&norm, u, n_is);
        particles = idx.iter().map(|&i| particles[i].clone()).collect();
        log_weights = vec![0.0; n_is];
    }

    for k in 1..n_steps {
        let beta_k = beta(k);
        let delta_beta = beta(k + 1) - beta_k;
        // ν_k(u) = log q(u) + β_k·path_ratio(u)
        let level_logpdf = |u: &[f64]| -> f64 { proposal.logpdf(u) + beta_k * path_ratio(u) };
        let level_grad = |u: &[f64]| -> Result<Vec<f64>, InnerError> {
            let grad_target = target
                .grad_log_unnormalized(u)
                .ok_or(InnerError::GradientUnavailable)?;
            let grad_q = proposal.grad_logpdf(u);
            Ok(grad_q
                .iter()
                .zip(&grad_target)
                .zip(u.iter().zip(x_t))
                .map(|((gq, gt), (ui, xi))| {
                    gq + beta_k * (gt + lik_coeff * (xi - alpha * ui) - gq)
                })
                .collect())
        };
        let mcmc_stream = stream.child(stream_label::INNER_MCMC).child(k as u64);
        for (m, u) in particles.iter_mut().enumerate() {
            let mut rng = mcmc_stream.child(m as u64).rng();
            for _ in 0..cfg.m_steps {
                let (next, ok) = mcmc_transition(
                    cfg.kernel,
                    &level_logpdf,
                    &level_grad,
                    u,
                    cfg.delta_mcmc,
                    cfg.hmc_leapfrog,
                    &mut rng,
                )?;
                *u = next;
                attempted += 1;
                if ok {
                    accepted += 1;
                }
            }
            log_weights[m] += delta_beta * path_ratio(u);
        }
        if resample_levels {
            log_marginal_acc += level_log_mean(&log_weights)?;
            if k + 1 < n_steps {
                let norm = normalize_log_weights(&log_weights)?;
                let u: f64 = stream
                    .child(stream_label::INNER_RESAMPLE)
                    .child(k as u64)
                    .rng()
                    .gen();
                let idx = systematic_resample(&norm, u, n_is);
                particles = idx.iter().map(|&i| particles[i].clone()).collect();
                log_weights = vec![0.0; n_is];
            }
        }
    }

    let log_marginal = if resample_levels && n_steps > 1 {
        log_marginal_acc
    } else {
        level_log_mean(&log_weights)?
    };

    let normalized = normalize_log_weights(&log_weights).map_err(|_| InnerError::DegenerateEstimate)?;
    let mut score = combine_identity(cfg.identity, &particles, &normalized, x_t, alpha, sigma, target)?;
    if let Some(threshold) = cfg.score_clip {
        score = clip_score(score, threshold);
    }
    if score.iter().any(|s| !s.is_finite()) {
        return Err(InnerError::NonFinite("score estimate"));
    }
    let mut log_marginal = log_marginal;
    if let Some((c, big_c)) = cfg.marginal_clamp {
        log_marginal = log_marginal.clamp(c.ln(), big_c.ln());
    }
    if log_marginal.is_nan() {
        return Err(InnerError::NonFinite("marginal estimate"));
    }

    Ok(InnerEstimate {
        score,
        log_marginal,
        inner_ess: ess(&normalized)?,
        acceptance_rate: if attempted == 0 {
            1.0
        } else {
            accepted as f64 / attempted as f64
        },
    })
}

/// log[(1/M)·Σ exp(log wᵐ)]; errors when every weight underflowed.
fn level_log_mean(log_weights: &[f64]) -> Result<f64, InnerError> {
    let lse = log_sum_exp(log_weights)?;
    if lse == f64::NEG_INFINITY {
        return Err(InnerError::DegenerateEstimate);
    }
    Ok(lse - (log_weights.len() as f64).ln())
}
