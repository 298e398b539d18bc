//! Per-user objectives, synthetic generators and baseline optimizers.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

mod baselines;
mod gp_tuning;
mod huber;
mod normal_location;
mod svm_surrogate;
mod synthetic;

pub use baselines::{dp_gd_baseline, random_search_baseline};
pub use gp_tuning::{gp_lengthscale_tuning_problem, GpTuning};
pub use huber::{huber_loss, huber_regression_problem, HuberRegression};
pub use normal_location::{normal_location_problem, NormalLocation};
pub use svm_surrogate::{svm_surrogate_problem, SvmSurrogate, REGULARIZATION_BOUNDS};
pub use synthetic::SyntheticGPDraw;

/// An objective that decomposes as a mean of per-user losses.
///
/// The diagnostic oracles (`true_loss`, `true_gradient`, `user_gradients`)
/// exist for reporting and for the gradient-descent baseline; the
/// Bayesian-optimization loop only ever sees [`evaluate_users`].
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn user_count(&self) -> usize;

    /// Noise-free loss of every user at θ.
    fn user_losses(&self, theta: &[f64]) -> Vec<f64>;

    /// Standard deviation of the noise added to each evaluation.
    fn evaluation_noise(&self) -> f64 {
        0.0
    }

    fn true_loss(&self, theta: &[f64]) -> Option<f64> {
        let l = self.user_losses(theta);
        Some(l.iter().sum::<f64>() / l.len() as f64)
    }

    fn true_gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let g = self.user_gradients(theta)?;
        let n = g.nrows() as f64;
        Some(g.column_iter().map(|c| c.sum() / n).collect())
    }

    /// `users × d` matrix of exact per-user gradients, when available.
    fn user_gradients(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// A bound on per-user gradient norms over the domain, when one is known.
    fn gradient_bound(&self) -> Option<f64> {
        None
    }

    /// Box used for initialization and random search.
    fn domain(&self) -> &[(f64, f64)];

    /// Known minimizer and minimal loss, when available.
    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        None
    }
}

/// Every user's loss at θ plus independent evaluation noise.
pub fn evaluate_users<R: Rng + ?Sized>(p: &dyn Problem, theta: &[f64], rng: &mut R) -> Vec<f64> {
    let sigma = p.evaluation_noise();
    let mut y = p.user_losses(theta);
    if sigma > 0.0 {
        for v in &mut y {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    y
}

/// One user's noisy loss at θ.
pub fn per_user_eval<R: Rng + ?Sized>(p: &dyn Problem, theta: &[f64], user: usize, rng: &mut R) -> f64 {
    let y = p.user_losses(theta)[user];
    let sigma = p.evaluation_noise();
    if sigma > 0.0 {
        y + sigma * rng.sample::<f64, _>(StandardNormal)
    } else {
        y
    }
}

/// Adds `N(0, λ²)` to every evaluation of the wrapped problem.
pub struct NoisyProblem<P> {
    inner: P,
    lambda: f64,
    name: String,
}

impl<P: Problem> NoisyProblem<P> {
    pub fn new(inner: P, lambda: f64) -> crate::Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(crate::error::invalid(format!("λ must be ≥ 0, got {lambda}")));
        }
        let name = format!("{}+noise", inner.name());
        Ok(NoisyProblem { inner, lambda, name })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

pub fn noisy_wrapper<P: Problem>(p: P, lambda: f64) -> crate::Result<NoisyProblem<P>> {
    NoisyProblem::new(p, lambda)
}

impl<P: Problem> Problem for NoisyProblem<P> {
    fn name(&self) -> &str {
        &self.name
    }
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
    fn user_count(&self) -> usize {
        self.inner.user_count()
    }
    fn user_losses(&self, theta: &[f64]) -> Vec<f64> {
        self.inner.user_losses(theta)
    }
    fn evaluation_noise(&self) -> f64 {
        self.inner.evaluation_noise().hypot(self.lambda)
    }
    fn true_loss(&self, theta: &[f64]) -> Option<f64> {
        self.inner.true_loss(theta)
    }
    fn true_gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        self.inner.true_gradient(theta)
    }
    fn user_gradients(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        self.inner.user_gradients(theta)
    }
    fn gradient_bound(&self) -> Option<f64> {
        self.inner.gradient_bound()
    }
    fn domain(&self) -> &[(f64, f64)] {
        self.inner.domain()
    }
    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        self.inner.optimum()
    }
}

impl Problem for Box<dyn Problem> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn user_count(&self) -> usize {
        (**self).user_count()
    }
    fn user_losses(&self, theta: &[f64]) -> Vec<f64> {
        (**self).user_losses(theta)
    }
    fn evaluation_noise(&self) -> f64 {
        (**self).evaluation_noise()
    }
    fn true_loss(&self, theta: &[f64]) -> Option<f64> {
        (**self).true_loss(theta)
    }
    fn true_gradient(&self, theta: &[f64]) -> Option<Vec<f64>> {
        (**self).true_gradient(theta)
    }
    fn user_gradients(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        (**self).user_gradients(theta)
    }
    fn gradient_bound(&self) -> Option<f64> {
        (**self).gradient_bound()
    }
    fn domain(&self) -> &[(f64, f64)] {
        (**self).domain()
    }
    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        (**self).optimum()
    }
}

/// Uniform draw from a box.
pub fn uniform_in<R: Rng + ?Sized>(domain: &[(f64, f64)], rng: &mut R) -> Vec<f64> {
    domain.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect()
}
