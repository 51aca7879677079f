//! Neal's funnel: x₁ ~ N(0, 9), x_{2:d} | x₁ ~ N(0, exp(x₁)·I).

use super::{TargetDensity, TargetError};
use crate::core::LN_2PI;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct FunnelTarget {
    dim: usize,
    scale_variance: f64,
}

impl Default for FunnelTarget {
    fn default() -> Self {
        Self {
            dim: 10,
            scale_variance: 9.0,
        }
    }
}

impl FunnelTarget {
    pub fn new(dim: usize, scale_variance: f64) -> Result<Self, TargetError> {
        if dim < 2 || !(scale_variance > 0.0) {
            return Err(TargetError::InvalidParameters(
                "funnel needs d >= 2 and a positive scale variance",
            ));
        }
        Ok(Self {
            dim,
            scale_variance,
        })
    }
}

impl TargetDensity for FunnelTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_unnormalized(&self, x: &[f64]) -> f64 {
        let v = x[0];
        let k = (self.dim - 1) as f64;
        let tail_sq: f64 = x[1..].iter().map(|xi| xi * xi).sum();
        -0.5 * (LN_2PI + self.scale_variance.ln()) - 0.5 * v * v / self.scale_variance
            - 0.5 * k * (LN_2PI + v)
            - 0.5 * tail_sq * (-v).exp()
    }

    fn grad_log_unnormalized(&self, x: &[f64]) -> Option<Vec<f64>> {
        let v = x[0];
        let k = (self.dim - 1) as f64;
        let inv_var = (-v).exp();
        if !inv_var.is_finite() {
            return None;
        }
        let tail_sq: f64 = x[1..].iter().map(|xi| xi * xi).sum();
        let mut grad = Vec::with_capacity(self.dim);
        grad.push(-v / self.scale_variance - 0.5 * k + 0.5 * tail_sq * inv_var);
        for xi in &x[1..] {
            grad.push(-xi * inv_var);
        }
        Some(grad)
    }

    fn log_z(&self) -> Option<f64> {
        Some(0.0)
    }

    fn sample_exact(&self, rng: &mut dyn rand::RngCore) -> Option<Vec<f64>> {
        let v = self.scale_variance.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let sd = (0.5 * v).exp();
        let mut x = Vec::with_capacity(self.dim);
        x.push(v);
        for _ in 1..self.dim {
            x.push(sd * rng.sample::<f64, _>(StandardNormal));
        }
        Some(x)
    }

    fn anneal_init_scale(&self) -> Option<(f64, f64)> {
        Some((2.12, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::assert_gradient_matches_fd;
    use super::*;
    use crate::core::RngStream;

    #[test]
    fn log_density_at_origin_matches_closed_form() {
        let t = FunnelTarget::default();
        // log N(0;0,9) + 9·log N(0;0,1)
        let got = t.log_unnormalized(&vec![0.0; 10]);
        assert!((got - (-10.287997620714837)).abs() < 1e-12, "{got}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = FunnelTarget::default();
        let mut rng = RngStream::new(17).rng();
        for _ in 0..100 {
            let x = t.sample_exact(&mut rng).unwrap();
            assert_gradient_matches_fd(&t, &x, 1e-5);
        }
    }

    #[test]
    fn exact_sampler_moments() {
        let t = FunnelTarget::default();
        let mut rng = RngStream::new(4).rng();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = t.sample_exact(&mut rng).unwrap();
            sum += x[0];
            sum_sq += x[0] * x[0];
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // mean within 3 standard errors of 0; variance within 5% of 9
        let se = (9.0f64 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
        assert!((var - 9.0).abs() < 0.45, "var {var}");
    }

    #[test]
    fn two_dim_slice_quadrature_normalizes() {
        // the (x₁, x₂) slice with the remaining coordinates integrated out
        // analytically carries total mass 1
        let t = FunnelTarget::default();
        let n1 = 600;
        let h1 = 36.0 / n1 as f64;
        let mut total = 0.0;
        for i in 0..=n1 {
            let v = -18.0 + i as f64 * h1;
            let w1 = if i == 0 || i == n1 { 0.5 } else { 1.0 };
            // integrate x₂ on a v-dependent grid (sd = e^{v/2})
            let sd = (0.5 * v).exp();
            let n2 = 400;
            let h2 = 16.0 * sd / n2 as f64;
            let mut inner = 0.0;
            for j in 0..=n2 {
                let u = -8.0 * sd + j as f64 * h2;
                let w2 = if j == 0 || j == n2 { 0.5 } else { 1.0 };
                let mut x = vec![0.0; 10];
                x[0] = v;
                x[1] = u;
                // divide out the other 8 conditional factors at 0
                let log_slice = t.log_unnormalized(&x) + 8.0 * 0.5 * (LN_2PI + v);
                inner += w2 * log_slice.exp();
            }
            total += w1 * inner * h2;
        }
        total *= h1;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }
}
