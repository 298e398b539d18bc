use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Problem;
use crate::error::{invalid, Result};
use crate::rng::{stream_rng, Stream};

/// Mean estimation: user `i` holds `x_i` and has loss `½‖x_i − θ‖²`.
#[derive(Debug, Clone)]
pub struct NormalLocation {
    samples: DMatrix<f64>,
    mean: DVector<f64>,
    domain: Vec<(f64, f64)>,
}

/// Draws `n` samples from `N(θ*, I)`. The domain is `θ* ± 3` per coordinate.
pub fn normal_location_problem(n: usize, d: usize, theta_star: &[f64], seed: u64) -> Result<NormalLocation> {
    if n == 0 || d == 0 {
        return Err(invalid("need at least one user and one dimension"));
    }
    if theta_star.len() != d {
        return Err(invalid(format!("θ* has length {}, expected {d}", theta_star.len())));
    }
    let mut rng = stream_rng(seed, Stream::ProblemData, 0);
    let samples = DMatrix::from_fn(n, d, |_, j| theta_star[j] + rng.sample::<f64, _>(StandardNormal));
    Ok(NormalLocation::from_samples(samples, theta_star.iter().map(|t| (t - 3.0, t + 3.0)).collect()))
}

impl NormalLocation {
    pub fn from_samples(samples: DMatrix<f64>, domain: Vec<(f64, f64)>) -> Self {
        let n = samples.nrows() as f64;
        let mean = DVector::from_iterator(samples.ncols(), samples.column_iter().map(|c| c.sum() / n));
        NormalLocation { samples, mean, domain }
    }

    pub fn sample_mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }
}

impl Problem for NormalLocation {
    fn name(&self) -> &str {
        "normal_location"
    }

    fn dimension(&self) -> usize {
        self.samples.ncols()
    }

    fn user_count(&self) -> usize {
        self.samples.nrows()
    }

    fn user_losses(&self, theta: &[f64]) -> Vec<f64> {
        self.samples
            .row_iter()
            .map(|x| 0.5 * x.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect()
    }

    fn true_gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        Some(theta.iter().zip(self.mean.iter()).map(|(t, m)| t - m).collect())
    }

    fn user_gradients(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(self.samples.nrows(), self.samples.ncols(), |i, j| {
            theta[j] - self.samples[(i, j)]
        }))
    }

    /// Largest distance from a domain corner to any sample.
    fn gradient_bound(&self) -> Option<f64> {
        let worst = self
            .samples
            .row_iter()
            .map(|x| {
                x.iter()
                    .zip(&self.domain)
                    .map(|(xi, &(lo, hi))| (xi - lo).abs().max((xi - hi).abs()).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        Some(worst)
    }

    fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        let theta: Vec<f64> = self.mean.iter().copied().collect();
        let loss = self.true_loss(&theta)?;
        Some((theta, loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::testing::*;

    #[test]
    fn user_at_own_sample_has_zero_loss() {
        let p = normal_location_problem(4, 3, &[1.0, 1.0, 1.0], 7).unwrap();
        let x: Vec<f64> = p.samples().row(2).iter().copied().collect();
        assert_eq!(p.user_losses(&x)[2], 0.0);
    }

    #[test]
    fn gradient_is_offset_from_mean() {
        let p = normal_location_problem(50, 5, &[1.0; 5], 3).unwrap();
        let theta = [0.0, 0.5, -1.0, 2.0, 1.0];
        let g = p.true_gradient(&theta).unwrap();
        for j in 0..5 {
            let mean = p.samples().column(j).sum() / 50.0;
            assert!((g[j] - (theta[j] - mean)).abs() < 1e-14);
        }
        assert_gradient_matches_fd(&p, &theta);
        assert_decomposes(&p, &theta);
    }

    #[test]
    fn samples_are_centred_on_theta_star() {
        let p = normal_location_problem(2000, 2, &[1.0, -2.0], 1).unwrap();
        assert!((p.sample_mean()[0] - 1.0).abs() < 0.1);
        assert!((p.sample_mean()[1] + 2.0).abs() < 0.1);
    }
}
