//! Concentric rings in the plane: uniform angle, Gaussian-mixture radius.
//!
//! The density is defined through the inverse polar map, so the Cartesian
//! form carries the Jacobian factor 1/r:
//! π̃(x) = p_r(‖x‖) · (1/2π) · 1/‖x‖.

use super::{TargetDensity, TargetError};
use crate::core::{log_sum_exp, LN_2PI};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct RingsTarget {
    pub radii: Vec<f64>,
    pub radial_sd: f64,
}

impl Default for RingsTarget {
    fn default() -> Self {
        Self {
            radii: vec![1.0, 2.0, 3.0, 4.0],
            radial_sd: 0.15,
        }
    }
}

impl RingsTarget {
    pub fn new(radii: Vec<f64>, radial_sd: f64) -> Result<Self, TargetError> {
        if radii.is_empty() || !(radial_sd > 0.0) {
            return Err(TargetError::InvalidParameters(
                "rings need at least one radius and a positive sd",
            ));
        }
        Ok(Self { radii, radial_sd })
    }

    /// log p_r(r) for the radial Gaussian mixture.
    pub fn radial_log_density(&self, r: f64) -> f64 {
        let var = self.radial_sd * self.radial_sd;
        let k = self.radii.len() as f64;
        let terms: Vec<f64> = self
            .radii
            .iter()
            .map(|c| -k.ln() - 0.5 * (LN_2PI + var.ln()) - 0.5 * (r - c) * (r - c) / var)
            .collect();
        log_sum_exp(&terms).expect("nonempty mixture")
    }

    fn radial_log_density_derivative(&self, r: f64) -> f64 {
        let var = self.radial_sd * self.radial_sd;
        let terms: Vec<f64> = self
            .radii
            .iter()
            .map(|c| -0.5 * (r - c) * (r - c) / var)
            .collect();
        let norm = log_sum_exp(&terms).expect("nonempty mixture");
        self.radii
            .iter()
            .zip(&terms)
            .map(|(c, t)| (t - norm).exp() * (-(r - c) / var))
            .sum()
    }
}

impl TargetDensity for RingsTarget {
    fn dim(&self) -> usize {
        2
    }

    fn log_unnormalized(&self, x: &[f64]) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if r == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.radial_log_density(r) - LN_2PI - r.ln()
    }

    fn grad_log_unnormalized(&self, x: &[f64]) -> Option<Vec<f64>> {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if r == 0.0 {
            return None;
        }
        let radial = self.radial_log_density_derivative(r) - 1.0 / r;
        Some(vec![radial * x[0] / r, radial * x[1] / r])
    }

    fn log_z(&self) -> Option<f64> {
        Some(0.0)
    }

    fn sample_exact(&self, rng: &mut dyn rand::RngCore) -> Option<Vec<f64>> {
        // mass below r = 0 is ~1e-11 for the benchmark radii; redraw if hit
        let r = loop {
            let k = rng.gen_range(0..self.radii.len());
            let z: f64 = rng.sample(StandardNormal);
            let r = self.radii[k] + self.radial_sd * z;
            if r > 0.0 {
                break r;
            }
        };
        let theta = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
        Some(vec![r * theta.cos(), r * theta.sin()])
    }

    fn anneal_init_scale(&self) -> Option<(f64, f64)> {
        Some((
            self.radii.iter().cloned().fold(0.0, f64::max),
            self.radial_sd,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::assert_gradient_matches_fd;
    use super::*;
    use crate::core::RngStream;

    #[test]
    fn density_vanishes_at_origin() {
        let t = RingsTarget::default();
        assert_eq!(t.log_unnormalized(&[0.0, 0.0]), f64::NEG_INFINITY);
        assert!(t.grad_log_unnormalized(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn density_is_rotation_invariant() {
        let t = RingsTarget::default();
        let a = t.log_unnormalized(&[2.0, 0.0]);
        let b = t.log_unnormalized(&[0.0, 2.0]);
        let c = t.log_unnormalized(&[2.0 / 2.0f64.sqrt(), 2.0 / 2.0f64.sqrt()]);
        assert!((a - b).abs() < 1e-12);
        assert!((a - c).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = RingsTarget::default();
        let mut rng = RngStream::new(21).rng();
        let mut checked = 0;
        while checked < 100 {
            let x = t.sample_exact(&mut rng).unwrap();
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if r < 0.3 {
                continue;
            }
            assert_gradient_matches_fd(&t, &x, 1e-5);
            checked += 1;
        }
    }

    #[test]
    fn radius_of_exact_samples_follows_the_mixture() {
        let t = RingsTarget::default();
        let mut rng = RngStream::new(3).rng();
        let n = 50_000;
        let mean_r: f64 = (0..n)
            .map(|_| {
                let x = t.sample_exact(&mut rng).unwrap();
                (x[0] * x[0] + x[1] * x[1]).sqrt()
            })
            .sum::<f64>()
            / n as f64;
        // mixture mean 2.5, sd of the mean ≈ sqrt(1.25²+0.15²)/√n ≈ 0.005
        assert!((mean_r - 2.5).abs() < 0.03, "mean radius {mean_r}");
    }

    #[test]
    fn quadrature_normalizes() {
        let t = RingsTarget::default();
        // offset grid avoids the (integrable, ~e^-22 mass) singularity at r=0
        let h = 0.02;
        let lo = -5.0 + h / 3.0;
        let n = (10.0 / h) as usize;
        let mut total = 0.0;
        for i in 0..n {
            let x = lo + i as f64 * h;
            for j in 0..n {
                let y = lo + j as f64 * h;
                total += t.log_unnormalized(&[x, y]).exp();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }
}
