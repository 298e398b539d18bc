//! A synthetic stand-in for tuning an SVM with per-feature lengthscales and
//! three regularization parameters. It keeps the `(d − 3) + 3` layout and
//! box bounds of that task and plants a known minimizer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::Problem;
use crate::error::{invalid, Result};
use crate::rng::{stream_rng, Stream};

/// Bounds of the three regularization-like coordinates.
pub const REGULARIZATION_BOUNDS: [(f64, f64); 3] = [(0.01, 1.0), (0.1, 3.0), (0.01, 5.0)];
const LENGTHSCALE_BOUNDS: (f64, f64) = (-2.0, 2.0);
const USERS: usize = 100;
const LOSS_FLOOR: f64 = 0.1;

/// `f_i(θ) = a_i + (1 + v_i)·base(θ) + u_iᵀ tanh((θ − θ*)/s)` with `Σ_i u_i = 0`,
/// `Σ_i v_i = 0`, and `base(θ) = Σ_j w_j (1 − exp(−((θ_j − θ*_j)/s_j)²/2))`.
/// The mean over users is minimized exactly at θ*.
#[derive(Debug, Clone)]
pub struct SvmSurrogate {
    planted: Vec<f64>,
    widths: Vec<f64>,
    weights: Vec<f64>,
    offsets: DVector<f64>,
    slopes: DVector<f64>,
    tilts: DMatrix<f64>,
    domain: Vec<(f64, f64)>,
}

pub fn svm_surrogate_problem(d: usize, seed: u64) -> Result<SvmSurrogate> {
    if d < 4 {
        return Err(invalid(format!("the surrogate needs d ≥ 4, got {d}")));
    }
    let mut rng = stream_rng(seed, Stream::ProblemData, 0);
    let domain: Vec<(f64, f64)> = (0..d - 3)
        .map(|_| LENGTHSCALE_BOUNDS)
        .chain(REGULARIZATION_BOUNDS)
        .collect();
    let planted: Vec<f64> = domain
        .iter()
        .map(|&(lo, hi)| lo + (hi - lo) * rng.random_range(0.25..0.75))
        .collect();
    let widths: Vec<f64> = domain.iter().map(|&(lo, hi)| 0.3 * (hi - lo)).collect();
    let weights: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5) / (d as f64).sqrt()).collect();

    let centred = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        DVector::from_iterator(v.len(), v.into_iter().map(|x| x - m))
    };
    let offsets = DVector::from_fn(USERS, |_, _| LOSS_FLOOR * rng.random_range(0.5..1.5));
    let slopes = centred((0..USERS).map(|_| rng.random_range(-0.5..0.5)).collect());
    let mut tilts = DMatrix::from_fn(USERS, d, |_, _| rng.random_range(-0.05..0.05));
    for j in 0..d {
        let m = tilts.column(j).mean();
        tilts.column_mut(j).add_scalar_mut(-m);
    }
    Ok(SvmSurrogate {
        planted,
        widths,
        weights,
        offsets,
        slopes,
        tilts,
        domain,
    })
}

impl SvmSurrogate {
    pub fn planted_minimum(&self) -> &[f64] {
        &self.planted
    }

    fn base_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut base = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for j in 0..theta.len() {
            let z = (theta[j] - self.planted[j]) / self.widths[j];
            let e = (-0.5 * z * z).exp();
            base += self.weights[j] * (1.0 - e);
            grad[j] = self.weights[j] * e * z / self.widths[j];
        }
        (base, grad)
    }
}

impl Problem for SvmSurrogate {
    fn name(&self) -> &str {
        "svm_surrogate"
    }

    fn dimension(&self) -> usize {
        self.planted.len()
    }

    fn user_count(&self) -> usize {
        USERS
    }

    fn user_losses(&self, theta: &[f64]) -> Vec<f64> {
        let (base, _) = self.base_and_grad(theta);
        let t: Vec<f64> = (0..theta.len())
            .map(|j| ((theta[j] - self.planted[j]) / self.widths[j]).tanh())
            .collect();
        (0..USERS)
            .map(|i| {
                let tilt: f64 = self.tilts.row(i).iter().zip(&t).map(|(u, v)| u * v).sum();
                self.offsets[i] + (1.0 + self.slopes[i]) * base + tilt
            })
            .collect()
    }

    fn user_gradients(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let (_, bg) = self.base_and_grad(theta);
        let dt: Vec<f64> = (0..theta.len())
            .map(|j| {
                let c = ((theta[j] - self.planted[j]) / self.widths[j]).cosh();
                1.0 / (c * c * self.widths[j])
            })
            .collect();
        Some(DMatrix::from_fn(USERS, theta.len(), |i, j| {
            (1.0 + self.slopes[i]) * bg[j] + self.tilts[(i, j)] * dt[j]
        }))
    }

    fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        Some((self.planted.clone(), self.offsets.mean()))
    }
}
