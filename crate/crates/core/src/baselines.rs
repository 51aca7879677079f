//! Classical geometric-annealing samplers over ρ_β ∝ ρ₀^{1-β}·π̃^{β}.
//!
//! AIS moves N particles through a linear β-schedule with MALA transitions
//! whose step size adapts toward a 75% acceptance rate; the SMC variant
//! adds ESS-gated systematic resampling with the same no-resample weight
//! bookkeeping as the diffusion sampler. Both accumulate
//! log Ẑ = Σ_levels [logΣ_i w^(i) − log N].

use crate::core::{
    ess, log_normal_isotropic, log_sum_exp, normalize_log_weights, sample_normal_isotropic,
    stream_label, systematic_resample, RngStream,
};
use crate::inner::{mcmc_transition, InnerError, McmcKernelKind};
use crate::sampler::{
    no_resample_adjustment, RunResult, SamplerError, StepDiagnostics,
};
use crate::targets::TargetDensity;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealConfig {
    pub t_anneal: usize,
    /// Chain-count from the reference protocol; the chains are collapsed
    /// into `mcmc_steps` sequential moves, so this is bookkeeping only.
    pub n_chains: usize,
    pub mcmc_steps: usize,
    pub delta_init: f64,
    pub target_accept: f64,
    /// 0 disables resampling (plain AIS).
    pub kappa_ess: f64,
    /// ρ₀ = N(0, (r² + tau²)·I).
    pub r: f64,
    pub tau: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            t_anneal: 1000,
            n_chains: 4,
            mcmc_steps: 32,
            delta_init: 0.1,
            target_accept: 0.75,
            kappa_ess: 0.0,
            r: 1.0,
            tau: 1.0,
        }
    }
}

impl AnnealConfig {
    pub fn rho0_variance(&self) -> f64 {
        self.r * self.r + self.tau * self.tau
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.t_anneal < 1 {
            return Err(SamplerError::InvalidConfig("t_anneal must be at least 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(SamplerError::InvalidConfig("target_accept must lie in (0, 1)"));
        }
        if !(self.delta_init > 0.0) {
            return Err(SamplerError::InvalidConfig("delta_init must be positive"));
        }
        if !(0.0..=1.0).contains(&self.kappa_ess) {
            return Err(SamplerError::InvalidConfig("kappa_ess must lie in [0, 1]"));
        }
        if !(self.rho0_variance() > 0.0) {
            return Err(SamplerError::InvalidConfig("rho0 variance must be positive"));
        }
        Ok(())
    }
}

/// (1-β)·log ρ₀(x) + β·log π̃(x).
pub fn annealed_logpdf(beta: f64, log_rho0: f64, log_target: f64) -> f64 {
    (1.0 - beta) * log_rho0 + beta * log_target
}

/// Robbins-Monro multiplicative step-size update toward the target
/// acceptance rate, clamped to [1e-8, 1e3].
pub fn adapt_step_size(delta: f64, observed_accept: f64, target_accept: f64) -> f64 {
    debug_assert!(delta > 0.0);
    (delta * (0.05 * (observed_accept - target_accept)).exp()).clamp(1e-8, 1e3)
}

/// Plain AIS: the SMC machinery with the resampling gate forced off.
pub fn run_ais_baseline<T: TargetDensity + ?Sized>(
    target: &T,
    config: &AnnealConfig,
    n_particles: usize,
    seed: u64,
) -> Result<RunResult, SamplerError> {
    let cfg = AnnealConfig {
        kappa_ess: 0.0,
        ..*config
    };
    run_annealed_baseline(target, &cfg, n_particles, seed)
}

pub fn run_smc_baseline<T: TargetDensity + ?Sized>(
    target: &T,
    config: &AnnealConfig,
    n_particles: usize,
    seed: u64,
) -> Result<RunResult, SamplerError> {
    run_annealed_baseline(target, config, n_particles, seed)
}

fn run_annealed_baseline<T: TargetDensity + ?Sized>(
    target: &T,
    config: &AnnealConfig,
    n_particles: usize,
    seed: u64,
) -> Result<RunResult, SamplerError> {
    config.validate()?;
    if n_particles == 0 {
        return Err(SamplerError::InvalidConfig("need at least one particle"));
    }
    if !target.has_gradient() {
        return Err(SamplerError::InvalidConfig(
            "the annealing baselines use MALA and need a gradient-capable target",
        ));
    }
    let n = n_particles;
    let d = target.dim();
    let t_levels = config.t_anneal;
    let log_n = (n as f64).ln();
    let rho0_var = config.rho0_variance();
    let zeros = vec![0.0; d];
    let root = RngStream::new(seed);

    let mut positions: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut rng = root
                .child(stream_label::ANNEAL_INIT)
                .child(i as u64)
                .rng();
            sample_normal_isotropic(&mut rng, &zeros, rho0_var)
        })
        .collect();
    let mut log_weights = vec![0.0f64; n];
    let mut log_z = 0.0;
    let mut delta = config.delta_init;
    let mut resample_events = 0usize;
    let mut diagnostics = Vec::with_capacity(t_levels);
    let mut acc_total = 0.0;

    for level in 0..t_levels {
        let beta = level as f64 / t_levels as f64;
        let beta_next = (level + 1) as f64 / t_levels as f64;
        let delta_beta = beta_next - beta;

        let normalized = normalize_log_weights(&log_weights)?;
        let ess_val = ess(&normalized)?;
        let gate = config.kappa_ess > 0.0 && ess_val / (n as f64) < config.kappa_ess;
        let adjustments: Vec<f64> = if gate {
            let u: f64 = root
                .child(stream_label::ANNEAL_RESAMPLE)
                .child(level as u64)
                .rng()
                .gen();
            let idx = systematic_resample(&normalized, u, n);
            positions = idx.iter().map(|&i| positions[i].clone()).collect();
            resample_events += 1;
            vec![0.0; n]
        } else {
            normalized
                .iter()
                .map(|w| no_resample_adjustment(n, *w))
                .collect()
        };

        let level_logpdf = |x: &[f64]| -> f64 {
            annealed_logpdf(
                beta,
                log_normal_isotropic(x, &zeros, rho0_var),
                target.log_unnormalized(x),
            )
        };
        let level_grad = |x: &[f64]| -> Result<Vec<f64>, InnerError> {
            let gt = target
                .grad_log_unnormalized(x)
                .ok_or(InnerError::GradientUnavailable)?;
            Ok(x.iter()
                .zip(&gt)
                .map(|(xi, gi)| (1.0 - beta) * (-xi / rho0_var) + beta * gi)
                .collect())
        };

        let mcmc_stream = root.child(stream_label::ANNEAL_MCMC).child(level as u64);
        let step_delta = delta;
        let moved: Result<Vec<(Vec<f64>, usize)>, SamplerError> = positions
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut rng = mcmc_stream.child(i as u64).rng();
                let mut current = x.clone();
                let mut accepted = 0usize;
                for _ in 0..config.mcmc_steps {
                    let (next, ok) = mcmc_transition(
                        McmcKernelKind::Mala,
                        &level_logpdf,
                        &level_grad,
                        &current,
                        step_delta,
                        1,
                        &mut rng,
                    )?;
                    current = next;
                    if ok {
                        accepted += 1;
                    }
                }
                Ok((current, accepted))
            })
            .collect();
        let moved = moved?;
        let mut accepted_total = 0usize;
        positions = moved
            .into_iter()
            .map(|(x, acc)| {
                accepted_total += acc;
                x
            })
            .collect();
        let pooled_accept = accepted_total as f64 / (n * config.mcmc_steps) as f64;
        acc_total += pooled_accept;
        delta = adapt_step_size(delta, pooled_accept, config.target_accept);

        for (i, x) in positions.iter().enumerate() {
            let increment = delta_beta
                * (target.log_unnormalized(x) - log_normal_isotropic(x, &zeros, rho0_var));
            let w = adjustments[i] + increment;
            log_weights[i] = if w.is_nan() { f64::NEG_INFINITY } else { w };
        }
        let lse = log_sum_exp(&log_weights)?;
        diagnostics.push(StepDiagnostics {
            step: level,
            ess: ess_val,
            resampled: gate,
            mean_acceptance: pooled_accept,
            mean_inner_ess: f64::NAN,
            degenerate_estimates: 0,
        });
        if lse == f64::NEG_INFINITY {
            return Ok(RunResult {
                positions,
                log_weights,
                weights: vec![0.0; n],
                log_z: f64::NEG_INFINITY,
                diagnostics,
                degenerate_at: Some(level),
                resample_events,
                mean_inner_ess: f64::NAN,
                mean_acceptance: f64::NAN,
                initial_trace: None,
                trace: None,
            });
        }
        log_z += lse - log_n;
    }

    let weights = normalize_log_weights(&log_weights)?;
    Ok(RunResult {
        positions,
        log_weights,
        weights,
        log_z,
        diagnostics,
        degenerate_at: None,
        resample_events,
        mean_inner_ess: f64::NAN,
        mean_acceptance: acc_total / t_levels as f64,
        initial_trace: None,
        trace: None,
    })
}
