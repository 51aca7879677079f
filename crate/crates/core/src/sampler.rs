//! The outer reverse-diffusion SMC loop.
//!
//! Particles start at the reference distribution, walk the reverse
//! diffusion using inner score estimates, and are reweighted against
//! intermediate targets built from the inner marginal estimates:
//!
//!   w_t = p̂(x_t, u_t)·p(x_{t+1} | x_t) / [p̂(x_{t+1}, u_{t+1})·q(x_t | x_{t+1}, u_{t+1})]
//!
//! with w_T = p̂(x_T, u_T)/p(x_T) initially and the exact π̃(x_0) replacing
//! p̂ at the final step. When a step skips resampling, the incremental
//! weight picks up the factor N·w̄_{t+1} so that
//! log Ẑ = Σ_t [logΣ_i w_t^(i) − log N] stays unbiased.

use crate::core::{
    ess, log_sum_exp, multinomial_resample, normalize_log_weights, stream_label,
    systematic_resample, CoreError, RngStream,
};
use crate::diffusion::{DiffusionSchedule, ScheduleError};
use crate::inner::{
    estimate_with_proposal, InnerConfig, InnerError, ProposalBuilder, StandardProposal,
};
use crate::targets::TargetDensity;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Inner(#[from] InnerError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleScheme {
    Systematic,
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Resampling gated on ESS with the delayed-start policy.
    Full,
    /// No resampling; the final weights carry the full IS correction.
    IsOnly,
    /// No resampling and uniform output weights: the raw proposal.
    ProposalOnly,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterConfig {
    pub n_particles: usize,
    pub resample_scheme: ResampleScheme,
    /// Normalized-ESS threshold κ below which resampling triggers.
    pub kappa_ess: f64,
    /// Resampling is disabled for steps t > this index.
    pub t_start_resampling: usize,
    pub variant: Variant,
    #[serde(default)]
    pub record_trace: bool,
}

impl OuterConfig {
    pub fn validate(&self, t_steps: usize) -> Result<(), SamplerError> {
        if self.n_particles == 0 {
            return Err(SamplerError::InvalidConfig("need at least one particle"));
        }
        if !(0.0..=1.0).contains(&self.kappa_ess) {
            return Err(SamplerError::InvalidConfig("kappa_ess must lie in [0, 1]"));
        }
        if self.t_start_resampling > t_steps {
            return Err(SamplerError::InvalidConfig(
                "t_start_resampling must not exceed the step count",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    pub step: usize,
    /// ESS of the weights entering this step's resampling decision
    /// (for the initial step, of the freshly computed initial weights).
    pub ess: f64,
    pub resampled: bool,
    pub mean_acceptance: f64,
    pub mean_inner_ess: f64,
    pub degenerate_estimates: usize,
}

/// Per-step record kept only when `record_trace` is set; test instrumentation.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub step: usize,
    pub ancestors: Option<Vec<usize>>,
    pub positions_carried: Vec<Vec<f64>>,
    pub scores_carried: Vec<Vec<f64>>,
    pub log_marginals_carried: Vec<f64>,
    pub positions_new: Vec<Vec<f64>>,
    pub scores_new: Vec<Vec<f64>>,
    pub log_marginals_new: Vec<f64>,
    pub log_forward: Vec<f64>,
    pub log_reverse: Vec<f64>,
    pub raw_log_ratio: Vec<f64>,
    pub adjustment: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct InitialTrace {
    pub positions: Vec<Vec<f64>>,
    pub log_marginals: Vec<f64>,
    pub log_reference: Vec<f64>,
    pub log_weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub positions: Vec<Vec<f64>>,
    /// Final unnormalized log-weights (last incremental weights).
    pub log_weights: Vec<f64>,
    /// Final normalized weights; uniform for the proposal-only variant.
    pub weights: Vec<f64>,
    pub log_z: f64,
    pub diagnostics: Vec<StepDiagnostics>,
    pub degenerate_at: Option<usize>,
    pub resample_events: usize,
    pub mean_inner_ess: f64,
    pub mean_acceptance: f64,
    pub initial_trace: Option<InitialTrace>,
    pub trace: Option<Vec<StepTrace>>,
}

impl RunResult {
    pub fn weighted_mean(&self) -> Vec<f64> {
        let d = self.positions.first().map_or(0, |p| p.len());
        let mut mean = vec![0.0; d];
        for (p, w) in self.positions.iter().zip(&self.weights) {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += w * x;
            }
        }
        mean
    }
}

/// log w_T = log p̂(x_T, u_T) − log p(x_T).
pub fn initial_log_weights(log_marginals: &[f64], log_reference: &[f64]) -> Vec<f64> {
    log_marginals
        .iter()
        .zip(log_reference)
        .map(|(m, r)| m - r)
        .collect()
}

/// log(N·w̄) added to the incremental weight when resampling was skipped.
pub fn no_resample_adjustment(n: usize, normalized_weight: f64) -> f64 {
    (n as f64 * normalized_weight).ln()
}

/// Assemble one intermediate log-weight; any non-finite component or a
/// dead ancestor (p̂_{t+1} = 0) yields weight zero rather than NaN.
pub fn combine_incremental_log_weight(
    log_phat_t: f64,
    log_forward: f64,
    log_phat_tp1: f64,
    log_reverse: f64,
    adjustment: f64,
) -> f64 {
    if log_phat_tp1 == f64::NEG_INFINITY || adjustment == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let w = adjustment + log_phat_t + log_forward - log_phat_tp1 - log_reverse;
    if w.is_nan() {
        f64::NEG_INFINITY
    } else {
        w
    }
}

struct Carried {
    position: Vec<f64>,
    score: Vec<f64>,
    log_marginal: f64,
}

struct StepOutput {
    position: Vec<f64>,
    score: Vec<f64>,
    log_marginal: f64,
    log_forward: f64,
    log_reverse: f64,
    raw: f64,
    log_weight: f64,
    inner_ess: Option<f64>,
    acceptance: Option<f64>,
    degenerate: bool,
}

enum InnerOutcome {
    Live(Vec<f64>, f64, f64, f64),
    Dead,
}

fn run_inner<T, B>(
    target: &T,
    builder: &B,
    alpha: f64,
    sigma: f64,
    x: &[f64],
    cfg: &InnerConfig,
    stream: &RngStream,
) -> Result<InnerOutcome, SamplerError>
where
    T: TargetDensity + ?Sized,
    B: ProposalBuilder + ?Sized,
{
    if x.iter().any(|v| !v.is_finite()) {
        return Ok(InnerOutcome::Dead);
    }
    let attempt = builder
        .build(x, alpha, sigma)
        .and_then(|p| estimate_with_proposal(target, alpha, sigma, x, &p, cfg, stream));
    match attempt {
        Ok(est) => Ok(InnerOutcome::Live(
            est.score,
            est.log_marginal,
            est.inner_ess,
            est.acceptance_rate,
        )),
        // a particle whose inner weights all underflowed carries zero
        // weight from here on; the run itself continues
        Err(InnerError::DegenerateEstimate)
        | Err(InnerError::NonFinite(_))
        | Err(InnerError::Core(_)) => Ok(InnerOutcome::Dead),
        Err(e) => Err(e.into()),
    }
}

/// Run RDSMC with the proposal family named in the inner config.
pub fn run_rdsmc<T: TargetDensity + ?Sized>(
    target: &T,
    schedule: &DiffusionSchedule,
    outer: &OuterConfig,
    inner: &InnerConfig,
    seed: u64,
) -> Result<RunResult, SamplerError> {
    run_rdsmc_with_proposal(
        target,
        schedule,
        outer,
        inner,
        &StandardProposal(inner.proposal),
        seed,
    )
}

/// Run RDSMC with an explicit inner-proposal strategy.
pub fn run_rdsmc_with_proposal<T, B>(
    target: &T,
    schedule: &DiffusionSchedule,
    outer: &OuterConfig,
    inner: &InnerConfig,
    builder: &B,
    seed: u64,
) -> Result<RunResult, SamplerError>
where
    T: TargetDensity + ?Sized,
    B: ProposalBuilder + ?Sized + Sync,
{
    inner.validate()?;
    let t_steps = schedule.t_steps();
    outer.validate(t_steps)?;
    if !target.has_gradient() {
        if inner.identity != crate::inner::ScoreIdentity::Dsi {
            return Err(SamplerError::InvalidConfig(
                "TSI/MSI identities need a gradient-capable target",
            ));
        }
        if inner.n_steps > 1 {
            return Err(SamplerError::InvalidConfig(
                "AIS transitions need a gradient-capable target",
            ));
        }
    }

    let n = outer.n_particles;
    let d = target.dim();
    let log_n = (n as f64).ln();
    let root = RngStream::new(seed);
    let mut diagnostics: Vec<StepDiagnostics> = Vec::with_capacity(t_steps + 1);
    let mut trace: Option<Vec<StepTrace>> = outer.record_trace.then(Vec::new);
    let mut resample_events = 0usize;

    // initial step t = T
    let init: Result<Vec<(Vec<f64>, InnerOutcome, f64)>, SamplerError> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = root
                .child(stream_label::REFERENCE)
                .child(i as u64)
                .rng();
            let x = schedule.reference_sample(d, &mut rng);
            let stream = root
                .child(stream_label::INNER)
                .child(t_steps as u64)
                .child(i as u64);
            let est = run_inner(
                target,
                builder,
                schedule.alpha(t_steps),
                schedule.sigma(t_steps),
                &x,
                inner,
                &stream,
            )?;
            let log_ref = schedule.reference_logpdf(&x);
            Ok((x, est, log_ref))
        })
        .collect();
    let init = init?;

    let mut particles: Vec<Carried> = Vec::with_capacity(n);
    let mut log_marginals = Vec::with_capacity(n);
    let mut log_reference = Vec::with_capacity(n);
    let mut inner_ess_acc = 0.0f64;
    let mut inner_ess_count = 0usize;
    let mut acc_acc = 0.0f64;
    let mut acc_count = 0usize;
    let mut init_degenerate = 0usize;
    let mut init_ess_sum = 0.0;
    let mut init_acc_sum = 0.0;
    for (x, outcome, log_ref) in init {
        let (score, log_marginal) = match outcome {
            InnerOutcome::Live(score, lm, in_ess, acc) => {
                inner_ess_acc += in_ess;
                inner_ess_count += 1;
                acc_acc += acc;
                acc_count += 1;
                init_ess_sum += in_ess;
                init_acc_sum += acc;
                (score, lm)
            }
            InnerOutcome::Dead => {
                init_degenerate += 1;
                (vec![0.0; d], f64::NEG_INFINITY)
            }
        };
        log_marginals.push(log_marginal);
        log_reference.push(log_ref);
        particles.push(Carried {
            position: x,
            score,
            log_marginal,
        });
    }
    let mut log_weights = initial_log_weights(&log_marginals, &log_reference);

    let initial_trace = outer.record_trace.then(|| InitialTrace {
        positions: particles.iter().map(|c| c.position.clone()).collect(),
        log_marginals: log_marginals.clone(),
        log_reference: log_reference.clone(),
        log_weights: log_weights.clone(),
    });

    let mut log_z = 0.0;
    let live = n - init_degenerate;
    let finish_degenerate = |step: usize,
                             diagnostics: Vec<StepDiagnostics>,
                             particles: &[Carried],
                             log_weights: Vec<f64>,
                             resample_events: usize,
                             initial_trace: Option<InitialTrace>,
                             trace: Option<Vec<StepTrace>>| RunResult {
        positions: particles.iter().map(|c| c.position.clone()).collect(),
        log_weights: log_weights.clone(),
        weights: vec![0.0; n],
        log_z: f64::NEG_INFINITY,
        diagnostics,
        degenerate_at: Some(step),
        resample_events,
        mean_inner_ess: f64::NAN,
        mean_acceptance: f64::NAN,
        initial_trace,
        trace,
    };

    match log_sum_exp(&log_weights) {
        Ok(lse) if lse > f64::NEG_INFINITY => log_z += lse - log_n,
        _ => {
            diagnostics.push(StepDiagnostics {
                step: t_steps,
                ess: 0.0,
                resampled: false,
                mean_acceptance: f64::NAN,
                mean_inner_ess: f64::NAN,
                degenerate_estimates: init_degenerate,
            });
            return Ok(finish_degenerate(
                t_steps,
                diagnostics,
                &particles,
                log_weights,
                resample_events,
                initial_trace,
                trace,
            ));
        }
    }
    diagnostics.push(StepDiagnostics {
        step: t_steps,
        ess: crate::core::ess_from_log_weights(&log_weights)?,
        resampled: false,
        mean_acceptance: if live > 0 { init_acc_sum / live as f64 } else { f64::NAN },
        mean_inner_ess: if live > 0 { init_ess_sum / live as f64 } else { f64::NAN },
        degenerate_estimates: init_degenerate,
    });

    for t in (0..t_steps).rev() {
        let normalized = normalize_log_weights(&log_weights)?;
        let ess_val = ess(&normalized)?;
        let gate = outer.variant == Variant::Full
            && t <= outer.t_start_resampling
            && ess_val / (n as f64) < outer.kappa_ess;

        let (carried, ancestors, adjustments): (Vec<Carried>, Option<Vec<usize>>, Vec<f64>) =
            if gate {
                let resample_stream = root.child(stream_label::RESAMPLE).child(t as u64);
                let idx = match outer.resample_scheme {
                    ResampleScheme::Systematic => {
                        let u: f64 = resample_stream.rng().gen::<f64>();
                        systematic_resample(&normalized, u, n)
                    }
                    ResampleScheme::Multinomial => {
                        multinomial_resample(&normalized, &mut resample_stream.rng(), n)?
                    }
                };
                resample_events += 1;
                let gathered = idx
                    .iter()
                    .map(|&i| Carried {
                        position: particles[i].position.clone(),
                        score: particles[i].score.clone(),
                        log_marginal: particles[i].log_marginal,
                    })
                    .collect();
                (gathered, Some(idx), vec![0.0; n])
            } else {
                let adj = normalized
                    .iter()
                    .map(|w| no_resample_adjustment(n, *w))
                    .collect();
                (particles, None, adj)
            };

        let step_out: Result<Vec<StepOutput>, SamplerError> = (0..n)
            .into_par_iter()
            .map(|i| {
                let c = &carried[i];
                let mut prop_rng = root
                    .child(stream_label::PROPAGATE)
                    .child(t as u64)
                    .child(i as u64)
                    .rng();
                let (x_new, log_reverse) =
                    schedule.reverse_proposal_sample(t, &c.position, &c.score, &mut prop_rng)?;
                let (score, log_marginal, inner_ess, acceptance, degenerate) = if t > 0 {
                    let stream = root
                        .child(stream_label::INNER)
                        .child(t as u64)
                        .child(i as u64);
                    match run_inner(
                        target,
                        builder,
                        schedule.alpha(t),
                        schedule.sigma(t),
                        &x_new,
                        inner,
                        &stream,
                    )? {
                        InnerOutcome::Live(score, lm, in_ess, acc) => {
                            (score, lm, Some(in_ess), Some(acc), false)
                        }
                        InnerOutcome::Dead => {
                            (vec![0.0; d], f64::NEG_INFINITY, None, None, true)
                        }
                    }
                } else {
                    // exact marginal p̂₀ = π̃(x₀); no u₀ is sampled
                    let lm = if x_new.iter().all(|v| v.is_finite()) {
                        target.log_unnormalized(&x_new)
                    } else {
                        f64::NEG_INFINITY
                    };
                    (vec![0.0; d], lm, None, None, false)
                };
                let log_forward = if x_new.iter().all(|v| v.is_finite()) {
                    schedule.forward_kernel_logpdf(t, &x_new, &c.position)?
                } else {
                    f64::NEG_INFINITY
                };
                let raw = combine_incremental_log_weight(
                    log_marginal,
                    log_forward,
                    c.log_marginal,
                    log_reverse,
                    0.0,
                );
                let log_weight = combine_incremental_log_weight(
                    log_marginal,
                    log_forward,
                    c.log_marginal,
                    log_reverse,
                    adjustments[i],
                );
                Ok(StepOutput {
                    position: x_new,
                    score,
                    log_marginal,
                    log_forward,
                    log_reverse,
                    raw,
                    log_weight,
                    inner_ess,
                    acceptance,
                    degenerate,
                })
            })
            .collect();
        let step_out = step_out?;

        if let Some(tr) = trace.as_mut() {
            tr.push(StepTrace {
                step: t,
                ancestors: ancestors.clone(),
                positions_carried: carried.iter().map(|c| c.position.clone()).collect(),
                scores_carried: carried.iter().map(|c| c.score.clone()).collect(),
                log_marginals_carried: carried.iter().map(|c| c.log_marginal).collect(),
                positions_new: step_out.iter().map(|s| s.position.clone()).collect(),
                scores_new: step_out.iter().map(|s| s.score.clone()).collect(),
                log_marginals_new: step_out.iter().map(|s| s.log_marginal).collect(),
                log_forward: step_out.iter().map(|s| s.log_forward).collect(),
                log_reverse: step_out.iter().map(|s| s.log_reverse).collect(),
                raw_log_ratio: step_out.iter().map(|s| s.raw).collect(),
                adjustment: adjustments.clone(),
            });
        }

        let mut degenerate_count = 0usize;
        let mut step_ess_sum = 0.0;
        let mut step_ess_n = 0usize;
        let mut step_acc_sum = 0.0;
        let mut step_acc_n = 0usize;
        let mut new_particles = Vec::with_capacity(n);
        let mut new_log_weights = Vec::with_capacity(n);
        for s in step_out {
            if s.degenerate {
                degenerate_count += 1;
            }
            if let Some(e) = s.inner_ess {
                inner_ess_acc += e;
                inner_ess_count += 1;
                step_ess_sum += e;
                step_ess_n += 1;
            }
            if let Some(a) = s.acceptance {
                acc_acc += a;
                acc_count += 1;
                step_acc_sum += a;
                step_acc_n += 1;
            }
            new_log_weights.push(s.log_weight);
            new_particles.push(Carried {
                position: s.position,
                score: s.score,
                log_marginal: s.log_marginal,
            });
        }
        particles = new_particles;
        log_weights = new_log_weights;

        let lse = log_sum_exp(&log_weights)?;
        diagnostics.push(StepDiagnostics {
            step: t,
            ess: ess_val,
            resampled: gate,
            mean_acceptance: if step_acc_n > 0 { step_acc_sum / step_acc_n as f64 } else { f64::NAN },
            mean_inner_ess: if step_ess_n > 0 { step_ess_sum / step_ess_n as f64 } else { f64::NAN },
            degenerate_estimates: degenerate_count,
        });
        if lse == f64::NEG_INFINITY {
            return Ok(finish_degenerate(
                t,
                diagnostics,
                &particles,
                log_weights,
                resample_events,
                initial_trace,
                trace,
            ));
        }
        log_z += lse - log_n;
    }

    let weights = match outer.variant {
        Variant::ProposalOnly => vec![1.0 / n as f64; n],
        _ => normalize_log_weights(&log_weights)?,
    };

    Ok(RunResult {
        positions: particles.iter().map(|c| c.position.clone()).collect(),
        log_weights,
        weights,
        log_z,
        diagnostics,
        degenerate_at: None,
        resample_events,
        mean_inner_ess: if inner_ess_count > 0 {
            inner_ess_acc / inner_ess_count as f64
        } else {
            f64::NAN
        },
        mean_acceptance: if acc_count > 0 {
            acc_acc / acc_count as f64
        } else {
            f64::NAN
        },
        initial_trace,
        trace,
    })
}
