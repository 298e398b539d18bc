use nalgebra::DMatrix;
use rand::Rng;

use super::Problem;
use crate::error::{invalid, Result};
use crate::kernel::Kernel;

/// `f(·) = Σ_j α_j k(·, c_j)`, a member of the kernel's RKHS with known norm.
#[derive(Debug, Clone)]
pub struct SyntheticGPDraw {
    kernel: Kernel,
    centers: Vec<Vec<f64>>,
    weights: Vec<f64>,
    rkhs_norm_sq: f64,
    domain: Vec<(f64, f64)>,
}

impl SyntheticGPDraw {
    pub fn new(kernel: Kernel, centers: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if centers.is_empty() || centers.len() != weights.len() {
            return Err(invalid("need one weight per center and at least one center"));
        }
        let d = centers[0].len();
        kernel.check_dim(d)?;
        if centers.iter().any(|c| c.len() != d) {
            return Err(invalid("centers have mixed dimensions"));
        }
        let m = centers.len();
        let k = DMatrix::from_fn(m, m, |i, j| kernel.eval_unchecked(&centers[i], &centers[j]));
        let mut rkhs_norm_sq = 0.0;
        for i in 0..m {
            for j in 0..m {
                rkhs_norm_sq += weights[i] * weights[j] * k[(i, j)];
            }
        }
        let domain = (0..d)
            .map(|j| {
                let lo = centers.iter().map(|c| c[j]).fold(f64::INFINITY, f64::min);
                let hi = centers.iter().map(|c| c[j]).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            })
            .collect();
        Ok(SyntheticGPDraw {
            kernel,
            centers,
            weights,
            rkhs_norm_sq: rkhs_norm_sq.max(0.0),
            domain,
        })
    }

    /// `count` centers uniform in `[−half, half]^d` with standard normal weights.
    pub fn random<R: Rng + ?Sized>(kernel: Kernel, d: usize, count: usize, half: f64, rng: &mut R) -> Result<Self> {
        let centers = (0..count)
            .map(|_| (0..d).map(|_| rng.random_range(-half..=half)).collect())
            .collect();
        let weights = (0..count)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        Self::new(kernel, centers, weights)
    }

    pub fn rkhs_norm_sq(&self) -> f64 {
        self.rkhs_norm_sq
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(c, a)| a * self.kernel.eval_unchecked(x, c))
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut buf = vec![0.0; x.len()];
        for (c, a) in self.centers.iter().zip(&self.weights) {
            self.kernel.grad_first_into(x, c, &mut buf);
            for j in 0..x.len() {
                g[j] += a * buf[j];
            }
        }
        g
    }
}

impl Problem for SyntheticGPDraw {
    fn name(&self) -> &str {
        "synthetic_gp_draw"
    }

    fn dimension(&self) -> usize {
        self.centers[0].len()
    }

    fn user_count(&self) -> usize {
        1
    }

    fn user_losses(&self, theta: &[f64]) -> Vec<f64> {
        vec![self.value(theta)]
    }

    fn user_gradients(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, theta.len(), &self.gradient(theta)))
    }

    fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }
}
