//! Joint GP posterior over the gradient at an iterate, conditioned on the
//! per-user evaluations gathered so far.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::gram::{gram_factorize_with, is_duplicate, GramFactorization, JitterPolicy};
use crate::kernel::Kernel;

/// Accumulated design points and the per-user observations at each of them.
///
/// Append-only apart from the explicit [`EvaluationSet::drop_oldest`] used by
/// the optional design cap.
#[derive(Debug, Clone)]
pub struct EvaluationSet {
    users: usize,
    noise_variance: f64,
    points: Vec<Vec<f64>>,
    // One column (length `users`) per design point.
    columns: Vec<Vec<f64>>,
}

impl EvaluationSet {
    pub fn new(users: usize, noise_variance: f64) -> Result<Self> {
        if users == 0 {
            return Err(invalid("an evaluation set needs at least one user"));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(invalid(format!("noise variance must be ≥ 0, got {noise_variance}")));
        }
        Ok(EvaluationSet {
            users,
            noise_variance,
            points: Vec::new(),
            columns: Vec::new(),
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.points.first().map(Vec::len)
    }

    /// Whether `point` would be merged into an existing one on append.
    pub fn would_merge(&self, point: &[f64]) -> bool {
        self.noise_variance == 0.0 && self.points.iter().any(|p| is_duplicate(p, point))
    }

    /// Appends a design point with every user's observation there. Under
    /// zero noise a duplicate of an existing point is merged (dropped) and
    /// `Ok(false)` is returned.
    pub fn append(&mut self, point: Vec<f64>, observations: Vec<f64>) -> Result<bool> {
        if observations.len() != self.users {
            return Err(invalid(format!(
                "expected {} observations, got {}",
                self.users,
                observations.len()
            )));
        }
        if let Some(d) = self.dimension() {
            if point.len() != d {
                return Err(invalid(format!("point has dimension {}, expected {d}", point.len())));
            }
        }
        if point.iter().chain(&observations).any(|x| !x.is_finite()) {
            return Err(invalid("design points and observations must be finite"));
        }
        if self.would_merge(&point) {
            return Ok(false);
        }
        self.points.push(point);
        self.columns.push(observations);
        Ok(true)
    }

    /// Removes the `count` oldest design points.
    pub fn drop_oldest(&mut self, count: usize) {
        let count = count.min(self.points.len());
        self.points.drain(..count);
        self.columns.drain(..count);
    }

    /// `users × |D|` observation matrix.
    pub fn observations(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.users, self.points.len(), |i, j| self.columns[j][i])
    }

    /// Observations at design point `j`, one per user.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    /// Observation matrix with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> EvaluationSet {
        let mut out = self.clone();
        for c in &mut out.columns {
            c.iter_mut().for_each(|y| *y *= factor);
        }
        out
    }

    /// Same design with users reordered so that new user `i` is old user `perm[i]`.
    pub fn permuted_users(&self, perm: &[usize]) -> Result<EvaluationSet> {
        let mut seen = vec![false; self.users];
        if perm.len() != self.users || !perm.iter().all(|&p| p < self.users && !std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("not a permutation of the users"));
        }
        let mut out = self.clone();
        for (c, orig) in out.columns.iter_mut().zip(&self.columns) {
            *c = perm.iter().map(|&p| orig[p]).collect();
        }
        Ok(out)
    }
}

/// Posterior of the gradient at `location`.
#[derive(Debug, Clone)]
pub struct GradientPosterior {
    pub location: Vec<f64>,
    /// `users × d`; row `i` is user `i`'s posterior mean gradient.
    pub per_user_means: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub covariance_trace: f64,
}

/// A zero-mean GP prior plus the assumed observation noise and conditioning
/// policy. All gradient-posterior and acquisition computations go through it.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    pub kernel: Kernel,
    pub noise_variance: f64,
    pub jitter: JitterPolicy,
}

impl GpSurrogate {
    pub fn new(kernel: Kernel, noise_variance: f64) -> Result<Self> {
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(invalid(format!("noise variance must be ≥ 0, got {noise_variance}")));
        }
        Ok(GpSurrogate {
            kernel,
            noise_variance,
            jitter: JitterPolicy::default(),
        })
    }

    pub fn with_jitter(mut self, jitter: JitterPolicy) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn factorize(&self, points: &[Vec<f64>]) -> Result<GramFactorization> {
        gram_factorize_with(&self.kernel, points, self.noise_variance, &self.jitter)
    }

    /// `|D| × d` matrix whose row `p` is `∇_θ k(θ, D_p)`.
    pub fn cross_covariance(&self, points: &[Vec<f64>], theta: &[f64]) -> DMatrix<f64> {
        let d = theta.len();
        let mut c = DMatrix::zeros(points.len(), d);
        let mut buf = vec![0.0; d];
        for (p, point) in points.iter().enumerate() {
            self.kernel.grad_first_into(theta, point, &mut buf);
            for j in 0..d {
                c[(p, j)] = buf[j];
            }
        }
        c
    }

    fn check_theta(&self, theta: &[f64], points: &[Vec<f64>]) -> Result<()> {
        self.kernel.check_dim(theta.len())?;
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(invalid("θ must be finite"));
        }
        if let Some(p) = points.iter().find(|p| p.len() != theta.len()) {
            return Err(invalid(format!(
                "design point has dimension {}, θ has {}",
                p.len(),
                theta.len()
            )));
        }
        Ok(())
    }

    // V = L⁻¹ C for the kept points of `fact`.
    fn whitened_cross(&self, fact: &GramFactorization, theta: &[f64]) -> DMatrix<f64> {
        let mut v = self.cross_covariance(fact.points(), theta);
        for j in 0..v.ncols() {
            let mut col: Vec<f64> = v.column(j).iter().copied().collect();
            fact.factor().forward_solve_in_place(&mut col);
            v.set_column(j, &DVector::from_vec(col));
        }
        v
    }

    /// Posterior gradient covariance given an existing factorization.
    pub fn gradient_covariance_with(&self, fact: &GramFactorization, theta: &[f64]) -> DMatrix<f64> {
        let prior = self.kernel.cross_hessian_unchecked(theta, theta);
        if fact.is_empty() {
            return prior;
        }
        let v = self.whitened_cross(fact, theta);
        prior - v.transpose() * v
    }

    /// `∇k(θ,θ)∇ᵀ − ∇k(θ,D)(K + σ²I)⁻¹k(D,θ)∇ᵀ`. Depends on the design only.
    pub fn gradient_covariance(&self, points: &[Vec<f64>], theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_theta(theta, points)?;
        let fact = self.factorize(points)?;
        Ok(self.gradient_covariance_with(&fact, theta))
    }

    /// Full gradient posterior given a factorization of `ev`'s design.
    pub fn posterior_with(
        &self,
        fact: &GramFactorization,
        ev: &EvaluationSet,
        theta: &[f64],
    ) -> Result<GradientPosterior> {
        if fact.len() > ev.len() || fact.kept_indices().iter().any(|&k| k >= ev.len()) {
            return Err(invalid("factorization does not belong to this evaluation set"));
        }
        let d = theta.len();
        let prior = self.kernel.cross_hessian_unchecked(theta, theta);
        if fact.is_empty() {
            let trace = prior.trace();
            return Ok(GradientPosterior {
                location: theta.to_vec(),
                per_user_means: DMatrix::zeros(ev.users(), d),
                covariance: prior,
                covariance_trace: trace,
            });
        }
        let v = self.whitened_cross(fact, theta);
        // A = L⁻ᵀ V = (K + σ²I)⁻¹ C
        let mut a = v.clone();
        for j in 0..d {
            let mut col: Vec<f64> = a.column(j).iter().copied().collect();
            fact.factor().backward_solve_in_place(&mut col);
            a.set_column(j, &DVector::from_vec(col));
        }
        let mut means = DMatrix::zeros(ev.users(), d);
        for (row, &k) in fact.kept_indices().iter().enumerate() {
            let column = ev.column(k);
            for j in 0..d {
                let w = a[(row, j)];
                if w != 0.0 {
                    for (i, y) in column.iter().enumerate() {
                        means[(i, j)] += y * w;
                    }
                }
            }
        }
        let covariance = prior - v.transpose() * v;
        let covariance_trace = covariance.trace();
        Ok(GradientPosterior {
            location: theta.to_vec(),
            per_user_means: means,
            covariance,
            covariance_trace,
        })
    }

    pub fn posterior(&self, ev: &EvaluationSet, theta: &[f64]) -> Result<GradientPosterior> {
        self.check_theta(theta, ev.points())?;
        let fact = self.factorize(ev.points())?;
        self.posterior_with(&fact, ev, theta)
    }
}

/// Per-user posterior mean gradients at `theta` (`users × d`), using one
/// factorization for all users.
pub fn posterior_gradient_means(k: &Kernel, ev: &EvaluationSet, theta: &[f64]) -> Result<DMatrix<f64>> {
    if ev.is_empty() {
        return Err(invalid("posterior means need at least one design point"));
    }
    let surrogate = GpSurrogate::new(k.clone(), ev.noise_variance())?;
    Ok(surrogate.posterior(ev, theta)?.per_user_means)
}

pub fn posterior_gradient_covariance(
    k: &Kernel,
    points: &[Vec<f64>],
    noise_variance: f64,
    theta: &[f64],
) -> Result<DMatrix<f64>> {
    GpSurrogate::new(k.clone(), noise_variance)?.gradient_covariance(points, theta)
}

/// Column mean of the per-user gradient matrix.
pub fn aggregate_mean_gradient(per_user: &DMatrix<f64>) -> Result<DVector<f64>> {
    if per_user.nrows() == 0 {
        return Err(invalid("cannot aggregate gradients of zero users"));
    }
    let n = per_user.nrows() as f64;
    Ok(DVector::from_iterator(
        per_user.ncols(),
        per_user.column_iter().map(|c| c.sum() / n),
    ))
}
