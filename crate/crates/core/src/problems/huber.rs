use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Problem;
use crate::error::{invalid, Result};
use crate::rng::{stream_rng, Stream};

pub fn huber_loss(r: f64, c: f64) -> f64 {
    if r.abs() <= c {
        0.5 * r * r
    } else {
        c * r.abs() - 0.5 * c * c
    }
}

/// Robust linear regression with down-weighted high-leverage covariates:
/// user `i` has loss `ρ_c(y_i − x_iᵀθ)·min(1, 2/‖x_i‖²)`.
#[derive(Debug, Clone)]
pub struct HuberRegression {
    x: DMatrix<f64>,
    y: DVector<f64>,
    weights: DVector<f64>,
    c: f64,
    domain: Vec<(f64, f64)>,
}

/// `x_i ~ N(0, I_d)`, `y_i = x_iᵀθ* + N(0, 1)`. The domain is `θ* ± 3`.
pub fn huber_regression_problem(n: usize, d: usize, theta_star: &[f64], c: f64, seed: u64) -> Result<HuberRegression> {
    if n == 0 || d == 0 {
        return Err(invalid("need at least one user and one dimension"));
    }
    if theta_star.len() != d {
        return Err(invalid(format!("θ* has length {}, expected {d}", theta_star.len())));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid(format!("Huber parameter must be > 0, got {c}")));
    }
    let mut rng = stream_rng(seed, Stream::ProblemData, 0);
    let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(n, |i, _| {
        let fit: f64 = (0..d).map(|j| x[(i, j)] * theta_star[j]).sum();
        fit + rng.sample::<f64, _>(StandardNormal)
    });
    let weights = DVector::from_fn(n, |i, _| {
        let sq = x.row(i).norm_squared();
        if sq > 0.0 {
            (2.0 / sq).min(1.0)
        } else {
            1.0
        }
    });
    Ok(HuberRegression {
        x,
        y,
        weights,
        c,
        domain: theta_star.iter().map(|t| (t - 3.0, t + 3.0)).collect(),
    })
}

impl HuberRegression {
    fn residual(&self, i: usize, theta: &[f64]) -> f64 {
        self.y[i] - self.x.row(i).iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }
}

impl Problem for HuberRegression {
    fn name(&self) -> &str {
        "huber_regression"
    }

    fn dimension(&self) -> usize {
        self.x.ncols()
    }

    fn user_count(&self) -> usize {
        self.x.nrows()
    }

    fn user_losses(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.x.nrows())
            .map(|i| huber_loss(self.residual(i, theta), self.c) * self.weights[i])
            .collect()
    }

    fn user_gradients(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let mut g = DMatrix::zeros(self.x.nrows(), self.x.ncols());
        for i in 0..self.x.nrows() {
            let score = self.residual(i, theta).clamp(-self.c, self.c) * self.weights[i];
            for j in 0..self.x.ncols() {
                g[(i, j)] = -score * self.x[(i, j)];
            }
        }
        Some(g)
    }

    /// `c·‖x‖·min(1, 2/‖x‖²) ≤ c·√2`.
    fn gradient_bound(&self) -> Option<f64> {
        Some(self.c * 2f64.sqrt())
    }

    fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::testing::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_examples() {
        assert_eq!(huber_loss(0.0, 1.0), 0.0);
        assert_eq!(huber_loss(0.5, 1.0), 0.125);
        assert_eq!(huber_loss(-3.0, 1.0), 2.5);
    }

    #[test]
    fn zero_residual_gives_zero_loss() {
        let mut p = huber_regression_problem(3, 2, &[1.0, 1.0], 1.0, 0).unwrap();
        let theta = [0.3, -0.7];
        for i in 0..3 {
            p.y[i] = p.x.row(i).iter().zip(&theta).map(|(a, b)| a * b).sum();
        }
        assert!(p.user_losses(&theta).iter().all(|&l| l.abs() < 1e-15));
    }

    #[test]
    fn gradients_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..20 {
            let p = huber_regression_problem(50, 4, &[1.0; 4], 1.0, seed).unwrap();
            let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
            let g = p.user_gradients(&theta).unwrap();
            for i in 0..50 {
                let norm = g.row(i).norm();
                let xn = p.x.row(i).norm();
                assert!(norm <= xn * p.weights[i] + 1e-12);
                assert!(norm <= 2f64.sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = huber_regression_problem(100, 4, &[1.0; 4], 1.0, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..3.0)).collect();
            assert_gradient_matches_fd(&p, &theta);
            assert_decomposes(&p, &theta);
        }
    }
}
