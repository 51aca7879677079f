//! Noising schedules and the Gaussian kernels of the discretized forward
//! and reverse processes.
//!
//! Time lives on the uniform grid τ_t = t/T with step δ = 1/T. A schedule
//! precomputes the per-step coefficients (α_t, σ_t, f_t, g_t). The forward
//! Euler kernel at step t is N(x_{t+1} | x_t(1 + f_t δ), g_t² δ); the
//! reverse proposal at step t is
//! N(x_t | x_{t+1} − [f_{t+1} x_{t+1} − g_{t+1}² s] δ, g_{t+1}² δ)
//! for a score estimate s at x_{t+1}.

use crate::core::{log_normal_isotropic, sample_normal_isotropic, LN_2PI};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid schedule parameters: {0}")]
    InvalidParameters(&'static str),
    #[error("zero diffusion coefficient at step {0}")]
    ZeroDiffusion(usize),
    #[error("step index {0} out of range")]
    StepOutOfRange(usize),
    #[error("non-finite score estimate")]
    NonFiniteScore,
}

/// σ(τ) profile for the variance-exploding schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VeProfile {
    Linear,
    Quadratic,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Variance preserving: f = -b(τ)/2, g = √b(τ) with
    /// b(τ) = b_min + τ(b_max − b_min).
    Vp { b_min: f64, b_max: f64 },
    /// Variance exploding: f = 0, g² = dσ²/dτ. `sigma_min` is only used by
    /// the exponential profile.
    Ve {
        profile: VeProfile,
        sigma_max: f64,
        #[serde(default = "default_sigma_min")]
        sigma_min: f64,
    },
}

fn default_sigma_min() -> f64 {
    0.01
}

/// Per-step diffusion coefficients on the uniform grid t = 0..T.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    kind: ScheduleKind,
    t_steps: usize,
    delta: f64,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

/// Default VP parameters exposed in the experiment config.
pub const DEFAULT_B_MIN: f64 = 0.1;
pub const DEFAULT_B_MAX: f64 = 20.0;

pub fn build_schedule(kind: ScheduleKind, t_steps: usize) -> Result<DiffusionSchedule, ScheduleError> {
    if t_steps == 0 {
        return Err(ScheduleError::InvalidParameters("T must be at least 1"));
    }
    let delta = 1.0 / t_steps as f64;
    let n = t_steps + 1;
    let mut alpha = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut drift = Vec::with_capacity(n);
    let mut diffusion = Vec::with_capacity(n);
    match kind {
        ScheduleKind::Vp { b_min, b_max } => {
            if !(b_min > 0.0) || !(b_max > b_min) {
                return Err(ScheduleError::InvalidParameters(
                    "VP requires 0 < b_min < b_max",
                ));
            }
            for t in 0..n {
                let tau = t as f64 * delta;
                let b = b_min + tau * (b_max - b_min);
                // ∫₀^τ b(s) ds in closed form
                let b_int = b_min * tau + 0.5 * (b_max - b_min) * tau * tau;
                alpha.push((-0.5 * b_int).exp());
                sigma.push((1.0 - (-b_int).exp()).max(0.0).sqrt());
                drift.push(-0.5 * b);
                diffusion.push(b.sqrt());
            }
        }
        ScheduleKind::Ve {
            profile,
            sigma_max,
            sigma_min,
        } => {
            if !(sigma_max > 0.0) {
                return Err(ScheduleError::InvalidParameters("VE requires sigma_max > 0"));
            }
            if profile == VeProfile::Exponential && !(sigma_min > 0.0 && sigma_min < sigma_max) {
                return Err(ScheduleError::InvalidParameters(
                    "exponential VE requires 0 < sigma_min < sigma_max",
                ));
            }
            for t in 0..n {
                let tau = t as f64 * delta;
                let (var, dvar) = match profile {
                    // σ(τ) = σ_max·τ
                    VeProfile::Linear => (sigma_max * sigma_max * tau * tau, 2.0 * sigma_max * sigma_max * tau),
                    // σ(τ) = σ_max·τ²
                    VeProfile::Quadratic => (
                        sigma_max * sigma_max * tau.powi(4),
                        4.0 * sigma_max * sigma_max * tau.powi(3),
                    ),
                    // σ(τ)² = σ_min²[(σ_max/σ_min)^{2τ} − 1]
                    VeProfile::Exponential => {
                        let ratio = sigma_max / sigma_min;
                        let pow = ratio.powf(2.0 * tau);
                        (
                            sigma_min * sigma_min * (pow - 1.0),
                            sigma_min * sigma_min * pow * 2.0 * ratio.ln(),
                        )
                    }
                };
                alpha.push(1.0);
                sigma.push(var.max(0.0).sqrt());
                drift.push(0.0);
                diffusion.push(dvar.max(0.0).sqrt());
            }
        }
    }
    Ok(DiffusionSchedule {
        kind,
        t_steps,
        delta,
        alpha,
        sigma,
        drift,
        diffusion,
    })
}

impl DiffusionSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    /// Drift coefficient f_t.
    pub fn drift(&self, t: usize) -> f64 {
        self.drift[t]
    }

    /// Diffusion coefficient g_t.
    pub fn diffusion(&self, t: usize) -> f64 {
        self.diffusion[t]
    }

    /// log N(x_{t+1} | x_t(1 + f_t δ), g_t² δ) for 0 ≤ t < T.
    pub fn forward_kernel_logpdf(
        &self,
        t: usize,
        x_t: &[f64],
        x_next: &[f64],
    ) -> Result<f64, ScheduleError> {
        if t >= self.t_steps {
            return Err(ScheduleError::StepOutOfRange(t));
        }
        let var = self.diffusion[t] * self.diffusion[t] * self.delta;
        if !(var > 0.0) {
            return Err(ScheduleError::ZeroDiffusion(t));
        }
        let scale = 1.0 + self.drift[t] * self.delta;
        let d = x_t.len() as f64;
        let sq: f64 = x_t
            .iter()
            .zip(x_next)
            .map(|(a, b)| {
                let diff = b - a * scale;
                diff * diff
            })
            .sum();
        Ok(-0.5 * d * (LN_2PI + var.ln()) - 0.5 * sq / var)
    }

    /// Mean of the reverse proposal producing x_t from (x_{t+1}, score).
    pub fn reverse_proposal_mean(&self, t: usize, x_tp1: &[f64], score: &[f64]) -> Vec<f64> {
        let f = self.drift[t + 1];
        let g2 = self.diffusion[t + 1] * self.diffusion[t + 1];
        x_tp1
            .iter()
            .zip(score)
            .map(|(x, s)| x - (f * x - g2 * s) * self.delta)
            .collect()
    }

    /// Variance g_{t+1}² δ of the reverse proposal at step t.
    pub fn reverse_proposal_var(&self, t: usize) -> f64 {
        self.diffusion[t + 1] * self.diffusion[t + 1] * self.delta
    }

    pub fn reverse_proposal_logpdf(
        &self,
        t: usize,
        x_t: &[f64],
        x_tp1: &[f64],
        score: &[f64],
    ) -> Result<f64, ScheduleError> {
        if t >= self.t_steps {
            return Err(ScheduleError::StepOutOfRange(t));
        }
        if score.iter().any(|s| !s.is_finite()) {
            return Err(ScheduleError::NonFiniteScore);
        }
        let mean = self.reverse_proposal_mean(t, x_tp1, score);
        Ok(log_normal_isotropic(x_t, &mean, self.reverse_proposal_var(t)))
    }

    /// Draw x_t ~ q(· | x_{t+1}, score); returns the sample and its log-density.
    pub fn reverse_proposal_sample<R: Rng>(
        &self,
        t: usize,
        x_tp1: &[f64],
        score: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64), ScheduleError> {
        if t >= self.t_steps {
            return Err(ScheduleError::StepOutOfRange(t));
        }
        if score.iter().any(|s| !s.is_finite()) {
            return Err(ScheduleError::NonFiniteScore);
        }
        let mean = self.reverse_proposal_mean(t, x_tp1, score);
        let var = self.reverse_proposal_var(t);
        let sample = sample_normal_isotropic(rng, &mean, var);
        let logpdf = log_normal_isotropic(&sample, &mean, var);
        Ok((sample, logpdf))
    }

    /// Variance of the reference distribution p(x_T): 1 for VP, σ_T² for VE.
    ///
    /// The same density is used for sampling x_T and in the denominator of
    /// the initial weight, which is all the unbiasedness of Ẑ requires.
    pub fn reference_variance(&self) -> f64 {
        match self.kind {
            ScheduleKind::Vp { .. } => 1.0,
            ScheduleKind::Ve { .. } => {
                let s = self.sigma[self.t_steps];
                s * s
            }
        }
    }

    pub fn reference_logpdf(&self, x: &[f64]) -> f64 {
        let zeros = vec![0.0; x.len()];
        log_normal_isotropic(x, &zeros, self.reference_variance())
    }

    pub fn reference_sample<R: Rng>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        let zeros = vec![0.0; dim];
        sample_normal_isotropic(rng, &zeros, self.reference_variance())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::RngStream;
    use rand::Rng;

    fn vp_default(t_steps: usize) -> DiffusionSchedule {
        build_schedule(
            ScheduleKind::Vp {
                b_min: DEFAULT_B_MIN,
                b_max: DEFAULT_B_MAX,
            },
            t_steps,
        )
        .unwrap()
    }

    #[test]
    fn vp_boundary_values() {
        let s = vp_default(100);
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.sigma(0), 0.0);
        assert!((s.drift(0) - (-0.05)).abs() < 1e-15);
        assert!((s.diffusion(0) - 0.1f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn vp_alpha_at_one_matches_closed_form() {
        // exp(-(0.1 + 19.9/2)/2) = exp(-5.025)
        let s = vp_default(100);
        assert!((s.alpha(100) - 0.006571586494929619).abs() < 1e-15);
    }

    #[test]
    fn vp_identity_holds_on_grid() {
        let s = vp_default(1000);
        for t in 0..=1000 {
            let a = s.alpha(t);
            let sg = s.sigma(t);
            assert!((a * a + sg * sg - 1.0).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn vp_monotonicity() {
        let s = vp_default(500);
        for t in 0..500 {
            let g0 = s.diffusion(t);
            let g1 = s.diffusion(t + 1);
            assert!(g1 * g1 > g0 * g0, "g² not strictly increasing at {t}");
            assert!(s.sigma(t + 1) >= s.sigma(t));
            assert!(s.alpha(t + 1) <= s.alpha(t));
        }
    }

    #[test]
    fn ve_schedule_shapes() {
        for profile in [VeProfile::Linear, VeProfile::Quadratic, VeProfile::Exponential] {
            let s = build_schedule(
                ScheduleKind::Ve {
                    profile,
                    sigma_max: 5.0,
                    sigma_min: 0.01,
                },
                50,
            )
            .unwrap();
            assert_eq!(s.sigma(0), 0.0);
            for t in 0..=50 {
                assert_eq!(s.alpha(t), 1.0);
                assert_eq!(s.drift(t), 0.0);
                if t > 0 {
                    assert!(s.sigma(t) >= s.sigma(t - 1));
                }
            }
            // the exponential profile reaches sigma_max only up to σ_min²
            assert!(
                (s.sigma(50) - 5.0).abs() < 1e-4 * 5.0,
                "sigma_max hit for {profile:?}"
            );
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(build_schedule(ScheduleKind::Vp { b_min: 2.0, b_max: 1.0 }, 10).is_err());
        assert!(build_schedule(ScheduleKind::Vp { b_min: 0.0, b_max: 1.0 }, 10).is_err());
        assert!(build_schedule(ScheduleKind::Vp { b_min: 0.1, b_max: 20.0 }, 0).is_err());
        assert!(build_schedule(
            ScheduleKind::Ve { profile: VeProfile::Exponential, sigma_max: 1.0, sigma_min: 2.0 },
            10
        )
        .is_err());
    }

    #[test]
    fn forward_kernel_mode_and_standard_normal_values() {
        // b_min=1, b_max=2, T=1 gives g_0²δ = 1 and f_0 = -1/2.
        let s = build_schedule(ScheduleKind::Vp { b_min: 1.0, b_max: 2.0 }, 1).unwrap();
        // at the mean the log-density is -(d/2)·log(2π g² δ)
        let x_t = [0.7, -0.3];
        let mean: Vec<f64> = x_t.iter().map(|x| x * (1.0 + s.drift(0) * s.delta())).collect();
        let v = s.forward_kernel_logpdf(0, &x_t, &mean).unwrap();
        assert!((v - (-LN_2PI)).abs() < 1e-12);
        // d=1, x_t=0, x_next=1, unit variance: standard normal log-pdf at 1
        let v = s.forward_kernel_logpdf(0, &[0.0], &[1.0]).unwrap();
        assert!((v - (-1.4189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn forward_kernel_integrates_to_one() {
        // trapezoid quadrature over x_next in d=1
        let s = vp_default(50);
        for t in [0usize, 20, 49] {
            let x_t = [0.8];
            let var = s.diffusion(t) * s.diffusion(t) * s.delta();
            let mean = x_t[0] * (1.0 + s.drift(t) * s.delta());
            let sd = var.sqrt();
            let (lo, hi) = (mean - 10.0 * sd, mean + 10.0 * sd);
            let n = 4001;
            let h = (hi - lo) / (n - 1) as f64;
            let mut total = 0.0;
            for i in 0..n {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                total += w * s.forward_kernel_logpdf(t, &x_t, &[x]).unwrap().exp();
            }
            total *= h;
            assert!((total - 1.0).abs() < 1e-6, "t={t}: integral {total}");
        }
    }

    #[test]
    fn forward_kernel_errors_on_zero_diffusion() {
        // linear VE has g_0 = 0: an ill-formed schedule at t = 0
        let s = build_schedule(
            ScheduleKind::Ve { profile: VeProfile::Linear, sigma_max: 2.0, sigma_min: 0.01 },
            10,
        )
        .unwrap();
        assert!(matches!(
            s.forward_kernel_logpdf(0, &[0.0], &[0.1]),
            Err(ScheduleError::ZeroDiffusion(0))
        ));
        assert!(s.forward_kernel_logpdf(1, &[0.0], &[0.1]).is_ok());
    }

    #[test]
    fn reverse_proposal_mean_arithmetic() {
        // drift-free: s = 0 and f_{t+1} = 0 leave the mean at x_{t+1}
        let s = build_schedule(
            ScheduleKind::Ve { profile: VeProfile::Exponential, sigma_max: 3.0, sigma_min: 0.05 },
            20,
        )
        .unwrap();
        let mean = s.reverse_proposal_mean(5, &[1.25, -0.5], &[0.0, 0.0]);
        assert_eq!(mean, vec![1.25, -0.5]);

        // b(τ)=1 at τ=0.5 for b∈[0.5,1.5]: f=-1/2, g²=1, δ=0.01 at t+1=50
        let s = build_schedule(ScheduleKind::Vp { b_min: 0.5, b_max: 1.5 }, 100).unwrap();
        assert!((s.drift(50) - (-0.5)).abs() < 1e-12);
        assert!((s.diffusion(50) - 1.0).abs() < 1e-12);
        let mean = s.reverse_proposal_mean(49, &[2.0], &[1.0]);
        assert!((mean[0] - 2.02).abs() < 1e-12);
    }

    #[test]
    fn reverse_proposal_logpdf_at_mean_and_errors() {
        let s = vp_default(100);
        let x_tp1 = [0.4, 1.1];
        let score = [0.5, -0.2];
        let mean = s.reverse_proposal_mean(30, &x_tp1, &score);
        let v = s.reverse_proposal_logpdf(30, &mean, &x_tp1, &score).unwrap();
        let expect = -(LN_2PI + s.reverse_proposal_var(30).ln());
        assert!((v - expect).abs() < 1e-12);
        assert!(matches!(
            s.reverse_proposal_logpdf(30, &mean, &x_tp1, &[f64::NAN, 0.0]),
            Err(ScheduleError::NonFiniteScore)
        ));
        let mut rng = RngStream::new(0).rng();
        assert!(s
            .reverse_proposal_sample(30, &x_tp1, &[f64::INFINITY, 0.0], &mut rng)
            .is_err());
    }

    #[test]
    fn reference_matches_standard_normal_for_vp() {
        let s = vp_default(10);
        assert!((s.reference_logpdf(&[0.0, 0.0]) - (-1.8378770664093453)).abs() < 1e-12);
        let ve = build_schedule(
            ScheduleKind::Ve { profile: VeProfile::Linear, sigma_max: 4.0, sigma_min: 0.01 },
            10,
        )
        .unwrap();
        assert!((ve.reference_variance() - 16.0).abs() < 1e-9);
    }

    #[test]
    fn reference_sample_moments() {
        let s = vp_default(10);
        let n = 100_000;
        let mut rng = RngStream::new(99).rng();
        let mut mean = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..n {
            let x = s.reference_sample(2, &mut rng);
            for k in 0..2 {
                mean[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
        for k in 0..2 {
            mean[k] /= n as f64;
            let var = sq[k] / n as f64 - mean[k] * mean[k];
            assert!(mean[k].abs() < 0.02, "mean[{k}] = {}", mean[k]);
            assert!((var - 1.0).abs() < 0.02, "var[{k}] = {var}");
        }
    }

    /// Euler-simulating the forward chain from N(0,1) keeps the terminal
    /// variance near 1 under the VP schedule.
    #[test]
    fn forward_chain_composition_preserves_variance() {
        let t_steps = 1000;
        let s = vp_default(t_steps);
        let chains = 100_000;
        let delta = s.delta();
        let mut rng = RngStream::new(5).rng();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..chains {
            let mut x: f64 = rng.sample(rand_distr::StandardNormal);
            for t in 0..t_steps {
                let noise: f64 = rng.sample(rand_distr::StandardNormal);
                x = x * (1.0 + s.drift(t) * delta) + s.diffusion(t) * delta.sqrt() * noise;
            }
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / chains as f64;
        let var = sum_sq / chains as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.05, "terminal variance {var}");
    }
}
