//! Bi-modal Gaussian mixture with an imbalanced weight ratio.

use super::{TargetDensity, TargetError};
use crate::core::{log_normal_isotropic, log_sum_exp, sample_normal_isotropic, stream_label, RngStream};
use rand::Rng;

/// Shared component variance 2·log 2.
pub const GMM_VARIANCE: f64 = 1.3862943611198906;
/// Mixture weights [w₁, w₂] = [0.1, 0.9].
pub const GMM_WEIGHTS: [f64; 2] = [0.1, 0.9];

#[derive(Debug, Clone)]
pub struct GmmTarget {
    pub means: [Vec<f64>; 2],
    pub variance: f64,
    pub weights: [f64; 2],
}

impl GmmTarget {
    pub fn new(
        m1: Vec<f64>,
        m2: Vec<f64>,
        variance: f64,
        w1: f64,
    ) -> Result<Self, TargetError> {
        if m1.is_empty() || m1.len() != m2.len() {
            return Err(TargetError::InvalidParameters("means must share dimension"));
        }
        if !(variance > 0.0) || !(0.0 < w1 && w1 < 1.0) {
            return Err(TargetError::InvalidParameters(
                "variance must be positive and w1 in (0,1)",
            ));
        }
        Ok(Self {
            means: [m1, m2],
            variance,
            weights: [w1, 1.0 - w1],
        })
    }

    fn component_logpdfs(&self, x: &[f64]) -> [f64; 2] {
        [
            self.weights[0].ln() + log_normal_isotropic(x, &self.means[0], self.variance),
            self.weights[1].ln() + log_normal_isotropic(x, &self.means[1], self.variance),
        ]
    }

    /// Index of the component with the highest posterior probability.
    pub fn most_likely_component(&self, x: &[f64]) -> usize {
        let lp = self.component_logpdfs(x);
        if lp[0] >= lp[1] {
            0
        } else {
            1
        }
    }
}

impl TargetDensity for GmmTarget {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn log_unnormalized(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_logpdfs(x)).expect("two components")
    }

    fn grad_log_unnormalized(&self, x: &[f64]) -> Option<Vec<f64>> {
        let lp = self.component_logpdfs(x);
        let norm = log_sum_exp(&lp).expect("two components");
        if norm == f64::NEG_INFINITY {
            // gradient of the far tail: dominated by the nearer component
            let k = self.most_likely_component(x);
            return Some(
                x.iter()
                    .zip(&self.means[k])
                    .map(|(xi, mi)| -(xi - mi) / self.variance)
                    .collect(),
            );
        }
        let resp = [(lp[0] - norm).exp(), (lp[1] - norm).exp()];
        let mut grad = vec![0.0; x.len()];
        for k in 0..2 {
            for (g, (xi, mi)) in grad.iter_mut().zip(x.iter().zip(&self.means[k])) {
                *g += resp[k] * (-(xi - mi) / self.variance);
            }
        }
        Some(grad)
    }

    fn log_z(&self) -> Option<f64> {
        Some(0.0)
    }

    fn sample_exact(&self, rng: &mut dyn rand::RngCore) -> Option<Vec<f64>> {
        let k = if rng.gen::<f64>() < self.weights[0] { 0 } else { 1 };
        Some(sample_normal_isotropic(rng, &self.means[k], self.variance))
    }

    fn anneal_init_scale(&self) -> Option<(f64, f64)> {
        let dist: f64 = self.means[0]
            .iter()
            .zip(&self.means[1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Some((0.9 * dist, self.variance.sqrt()))
    }
}

/// Generate the benchmark target: means i.i.d. uniform on [-width/2, width/2]^d,
/// variance 2·log 2, weights [0.1, 0.9].
pub fn gmm_generate(dim: usize, box_width: f64, seed: u64) -> Result<GmmTarget, TargetError> {
    if dim == 0 || !(box_width > 0.0) {
        return Err(TargetError::InvalidParameters(
            "gmm_generate requires d >= 1 and a positive box width",
        ));
    }
    let mut rng = RngStream::new(seed).child(stream_label::TARGET_GEN).rng();
    let half = box_width / 2.0;
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-half..half)).collect()
    };
    let m1 = draw(&mut rng);
    let m2 = draw(&mut rng);
    GmmTarget::new(m1, m2, GMM_VARIANCE, GMM_WEIGHTS[0])
}

#[cfg(test)]
mod tests {
    use super::super::test_support::assert_gradient_matches_fd;
    use super::*;
    use crate::core::RngStream;

    #[test]
    fn log_density_at_dominant_mode() {
        // means far apart: the cross term is ~e^{-100} and drops out
        let t = GmmTarget::new(vec![-30.0, -30.0], vec![30.0, 30.0], GMM_VARIANCE, 0.1).unwrap();
        let got = t.log_unnormalized(&[30.0, 30.0]);
        let expect = 0.9f64.ln() - (2.0 * std::f64::consts::PI * GMM_VARIANCE).ln();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        assert!((expect - (-2.2698718420454527)).abs() < 1e-12);
    }

    #[test]
    fn generate_is_deterministic_and_in_box() {
        let a = gmm_generate(4, 80.0, 123).unwrap();
        let b = gmm_generate(4, 80.0, 123).unwrap();
        assert_eq!(a.means, b.means);
        let c = gmm_generate(4, 80.0, 124).unwrap();
        assert_ne!(a.means, c.means);
        for seed in 0..50 {
            let t = gmm_generate(3, 80.0, seed).unwrap();
            for m in &t.means {
                assert!(m.iter().all(|v| (-40.0..40.0).contains(v)));
            }
        }
    }

    #[test]
    fn generated_mean_coordinates_center_on_zero() {
        // CLT bound for Uniform(-40, 40): sd = 80/sqrt(12) ≈ 23.1
        let n = 10_000;
        let mut acc = 0.0;
        for seed in 0..n {
            let t = gmm_generate(1, 80.0, seed).unwrap();
            acc += t.means[0][0];
        }
        let mean = acc / n as f64;
        assert!(mean.abs() < 1.2, "mean {mean}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = gmm_generate(3, 20.0, 7).unwrap();
        let mut rng = RngStream::new(8).rng();
        for _ in 0..100 {
            let x = t.sample_exact(&mut rng).unwrap();
            assert_gradient_matches_fd(&t, &x, 1e-5);
        }
    }

    #[test]
    fn component_assignment_prefers_nearest_mode() {
        let t = GmmTarget::new(vec![-5.0], vec![5.0], 1.0, 0.1).unwrap();
        assert_eq!(t.most_likely_component(&[-4.9]), 0);
        assert_eq!(t.most_likely_component(&[5.1]), 1);
    }

    #[test]
    fn two_dim_slice_quadrature_normalizes() {
        let t = GmmTarget::new(vec![-6.0, 2.0], vec![5.0, -3.0], GMM_VARIANCE, 0.1).unwrap();
        let h = 0.05;
        let lo = -14.0;
        let n = (2.0 * 14.0 / h) as usize + 1;
        let mut total = 0.0;
        for i in 0..n {
            let x = lo + i as f64 * h;
            let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            for j in 0..n {
                let y = lo + j as f64 * h;
                let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                total += wi * wj * t.log_unnormalized(&[x, y]).exp();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }
}
