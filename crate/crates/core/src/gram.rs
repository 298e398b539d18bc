//! Gram-matrix conditioning: a growable packed Cholesky factor and the jitter
//! escalation policy used for every GP solve in the crate.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::kernel::Kernel;

/// Points closer than this (Euclidean) are treated as duplicates when the
/// observation noise is zero.
pub const DUPLICATE_TOLERANCE: f64 = 1e-10;

/// Jitter escalation schedule, relative to the mean Gram diagonal.
///
/// A factorization is accepted at the first level where Cholesky succeeds and
/// every squared pivot is at least `pivot_floor` times the larger of the mean
/// diagonal and that point's own diagonal entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    pub initial: f64,
    pub max: f64,
    pub growth: f64,
    pub pivot_floor: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            initial: 1e-15,
            max: 1e-4,
            growth: 10.0,
            pivot_floor: 1e-8,
        }
    }
}

impl JitterPolicy {
    fn validate(&self) -> Result<()> {
        let ok = self.initial > 0.0
            && self.max >= self.initial
            && self.growth > 1.0
            && self.pivot_floor >= 0.0
            && self.pivot_floor < self.max;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("inconsistent jitter policy {self:?}")))
        }
    }

    fn levels(&self) -> impl Iterator<Item = f64> + '_ {
        let mut next = Some(self.initial);
        std::iter::from_fn(move || {
            let cur = next?;
            // Relative slack so that repeated multiplication lands on `max`.
            next = if cur >= self.max * (1.0 - 1e-9) {
                None
            } else {
                Some((cur * self.growth).min(self.max))
            };
            Some(cur)
        })
    }
}

/// Lower-triangular Cholesky factor stored row-major in packed form, so that
/// appending a point is a single row push.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CholeskyFactor {
    n: usize,
    data: Vec<f64>,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

impl CholeskyFactor {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[row_start(i)..row_start(i) + i + 1]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[row_start(i) + j]
        }
    }

    pub fn smallest_pivot(&self) -> f64 {
        (0..self.n)
            .map(|i| self.get(i, i))
            .fold(f64::INFINITY, f64::min)
    }

    /// Factorizes a dense symmetric matrix given by `entry(i, j)` for `j ≤ i`,
    /// stopping at the first squared pivot below `floor`.
    fn factorize(n: usize, entry: impl Fn(usize, usize) -> f64, floor: impl Fn(f64) -> f64) -> Result<Self, f64> {
        let mut f = CholeskyFactor {
            n: 0,
            data: Vec::with_capacity(row_start(n)),
        };
        for i in 0..n {
            let column: Vec<f64> = (0..i).map(|j| entry(i, j)).collect();
            let diag = entry(i, i);
            f.try_push(&column, diag, floor(diag))?;
        }
        Ok(f)
    }

    /// Appends a row for a new point with covariances `cross` against the
    /// existing points and variance `diag`. Returns the offending squared
    /// pivot when it falls below `floor`; the factor is unchanged then.
    pub fn try_push(&mut self, cross: &[f64], diag: f64, floor: f64) -> Result<(), f64> {
        debug_assert_eq!(cross.len(), self.n);
        let a = self.forward_solve(cross);
        let schur = diag - a.iter().map(|x| x * x).sum::<f64>();
        if !(schur.is_finite() && schur > floor) {
            return Err(schur);
        }
        self.data.extend_from_slice(&a);
        self.data.push(schur.sqrt());
        self.n += 1;
        Ok(())
    }

    /// Solves `L x = b`.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_solve_in_place(&mut x);
        x
    }

    pub fn forward_solve_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let mut acc = x[i];
            for (l, xj) in row[..i].iter().zip(x.iter()) {
                acc -= l * xj;
            }
            x[i] = acc / row[i];
        }
    }

    /// Solves `Lᵀ x = b`.
    pub fn backward_solve_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in (0..self.n).rev() {
            let xi = x[i] / self.get(i, i);
            x[i] = xi;
            let row = self.row(i);
            for (xj, l) in x[..i].iter_mut().zip(&row[..i]) {
                *xj -= l * xi;
            }
        }
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_solve_in_place(&mut x);
        self.backward_solve_in_place(&mut x);
        x
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// Cholesky factorization of `K(D, D) + (σ² + jitter)·I`.
#[derive(Debug, Clone)]
pub struct GramFactorization {
    points: Vec<Vec<f64>>,
    /// Index into the submitted points for each retained point.
    kept: Vec<usize>,
    submitted: usize,
    noise_variance: f64,
    jitter: f64,
    mean_diagonal: f64,
    pivot_floor: f64,
    relative_floor: f64,
    factor: CholeskyFactor,
}

impl GramFactorization {
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn kept_indices(&self) -> &[usize] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Absolute jitter added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `σ² + jitter`, the total diagonal regularization.
    pub fn diagonal_shift(&self) -> f64 {
        self.noise_variance + self.jitter
    }

    /// Mean of the kernel diagonal over the design; jitter is relative to it.
    pub fn mean_diagonal(&self) -> f64 {
        self.mean_diagonal
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub(crate) fn absolute_pivot_floor(&self) -> f64 {
        self.pivot_floor
    }

    /// Smallest squared pivot accepted for a point with diagonal entry `diag`.
    pub(crate) fn pivot_floor_for(&self, diag: f64) -> f64 {
        self.pivot_floor.max(self.relative_floor * diag)
    }

    /// `K(D, D) + (σ² + jitter)·I` as a dense matrix.
    pub fn matrix(&self, kernel: &Kernel) -> DMatrix<f64> {
        let n = self.len();
        let shift = self.diagonal_shift();
        DMatrix::from_fn(n, n, |i, j| {
            let v = kernel.eval_unchecked(&self.points[i], &self.points[j]);
            if i == j {
                v + shift
            } else {
                v
            }
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.len() {
            return Err(invalid(format!(
                "right-hand side has length {} but the gram matrix is {}×{}",
                rhs.len(),
                self.len(),
                self.len()
            )));
        }
        Ok(self.factor.solve(rhs))
    }

    /// Appends a point at the current jitter. Returns `false` when the new
    /// pivot would violate the floor; the point then counts as submitted but
    /// is not retained, so `kept_indices` stays aligned with the caller's list.
    pub fn try_extend(&mut self, kernel: &Kernel, point: &[f64]) -> bool {
        let cross: Vec<f64> = self
            .points
            .iter()
            .map(|p| kernel.eval_unchecked(p, point))
            .collect();
        let diag = kernel.eval_unchecked(point, point) + self.diagonal_shift();
        let index = self.submitted;
        self.submitted += 1;
        if self.factor.try_push(&cross, diag, self.pivot_floor_for(diag)).is_err() {
            return false;
        }
        self.kept.push(index);
        self.points.push(point.to_vec());
        true
    }
}

/// Factorizes the Gram matrix of `points` under `kernel` with the default
/// jitter policy.
pub fn gram_factorize(
    kernel: &Kernel,
    points: &[Vec<f64>],
    noise_variance: f64,
) -> Result<GramFactorization> {
    gram_factorize_with(kernel, points, noise_variance, &JitterPolicy::default())
}

pub fn gram_factorize_with(
    kernel: &Kernel,
    points: &[Vec<f64>],
    noise_variance: f64,
    policy: &JitterPolicy,
) -> Result<GramFactorization> {
    policy.validate()?;
    if !(noise_variance.is_finite() && noise_variance >= 0.0) {
        return Err(invalid(format!("noise variance must be ≥ 0, got {noise_variance}")));
    }
    if let Some(first) = points.first() {
        kernel.check_dim(first.len())?;
        if let Some(p) = points.iter().find(|p| p.len() != first.len()) {
            return Err(invalid(format!(
                "points have mixed dimensions {} and {}",
                first.len(),
                p.len()
            )));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("points must be finite"));
        }
    }

    let kept = if noise_variance == 0.0 {
        dedup_indices(points)
    } else {
        (0..points.len()).collect()
    };
    let pts: Vec<Vec<f64>> = kept.iter().map(|&i| points[i].clone()).collect();
    let n = pts.len();

    let gram = DMatrix::from_fn(n, n, |i, j| kernel.eval_unchecked(&pts[i], &pts[j]));
    let mean_diagonal = if n == 0 {
        1.0
    } else {
        gram.diagonal().mean().abs().max(f64::MIN_POSITIVE)
    };
    let floor = policy.pivot_floor * mean_diagonal;

    let mut smallest = f64::NAN;
    let mut last_jitter = policy.initial * mean_diagonal;
    for level in policy.levels() {
        let jitter = level * mean_diagonal;
        last_jitter = jitter;
        let shift = noise_variance + jitter;
        let attempt = CholeskyFactor::factorize(
            n,
            |i, j| if i == j { gram[(i, i)] + shift } else { gram[(i, j)] },
            |diag| floor.max(policy.pivot_floor * diag),
        );
        match attempt {
            Ok(factor) => {
                return Ok(GramFactorization {
                    points: pts,
                    kept,
                    submitted: points.len(),
                    noise_variance,
                    jitter,
                    mean_diagonal,
                    pivot_floor: floor,
                    relative_floor: policy.pivot_floor,
                    factor,
                })
            }
            Err(pivot) => {
                smallest = pivot;
                log::trace!("gram factorization failed at jitter {jitter:e} (pivot² {pivot:e}); escalating");
            }
        }
    }
    Err(Error::IllConditionedGram {
        size: n,
        max_jitter: last_jitter,
        mean_diagonal,
        smallest_pivot: smallest,
    })
}

/// Indices of the first occurrence of each point, merging points within
/// [`DUPLICATE_TOLERANCE`].
pub fn dedup_indices(points: &[Vec<f64>]) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if !kept.iter().any(|&k| is_duplicate(&points[k], p)) {
            kept.push(i);
        }
    }
    kept
}

pub fn is_duplicate(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt() <= DUPLICATE_TOLERANCE
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect()
    }

    #[test]
    fn single_point() {
        let k = Kernel::rbf(1.0).unwrap();
        let g = gram_factorize(&k, &[vec![0.3, 0.1]], 0.0).unwrap();
        let m = g.matrix(&k);
        assert_eq!(m.shape(), (1, 1));
        assert_eq!(m[(0, 0)], 1.0 + g.jitter());
        assert!(g.jitter() > 0.0 && g.jitter() <= 1e-4);
    }

    #[test]
    fn duplicates_are_merged_when_noiseless() {
        let k = Kernel::rbf(1.0).unwrap();
        let pts = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let g = gram_factorize(&k, &pts, 0.0).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.kept_indices(), &[0]);

        let g = gram_factorize(&k, &pts, 0.1).unwrap();
        assert_eq!(g.len(), 2, "replicates are informative under noise");
    }

    #[test]
    fn solve_matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = Kernel::rbf(1.0).unwrap();
        let pts = random_points(&mut rng, 5, 3);
        let g = gram_factorize(&k, &pts, 0.01).unwrap();
        let rhs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = g.solve(&rhs).unwrap();
        let lu = g.matrix(&k).lu();
        let oracle = lu.solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        for (a, b) in x.iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn factor_reproduces_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for family in [KernelFamily::Rbf, KernelFamily::Matern52, KernelFamily::PolynomialDeg2] {
            let k = Kernel::isotropic(family, 0.8).unwrap();
            let pts = random_points(&mut rng, 12, 2);
            let g = gram_factorize(&k, &pts, 0.0).unwrap();
            let m = g.matrix(&k);
            assert!((m.clone() - m.transpose()).abs().max() <= 1e-12);
            let l = g.factor().to_dense();
            let rel = (l.clone() * l.transpose() - &m).norm() / m.norm();
            assert!(rel <= 1e-8, "{family:?}: {rel}");
        }
    }

    #[test]
    fn rank_deficient_gram_escalates_jitter() {
        // 30 points in d = 2 under the degree-2 polynomial kernel (feature rank 6).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = Kernel::polynomial_deg2();
        let pts = random_points(&mut rng, 30, 2);
        let g = gram_factorize(&k, &pts, 0.0).unwrap();
        let policy = JitterPolicy::default();
        assert!(g.jitter() > policy.initial * g.mean_diagonal);
        assert!(g.factor().smallest_pivot().powi(2) > policy.pivot_floor * g.mean_diagonal);
    }

    #[test]
    fn gram_is_positive_definite_with_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..=20 {
            let k = Kernel::new(KernelFamily::Matern72, vec![0.3, 1.0, 2.0], 2.0).unwrap();
            let pts = random_points(&mut rng, n, 3);
            let g = gram_factorize(&k, &pts, 0.0).unwrap();
            assert!((0..g.len()).all(|i| g.factor().get(i, i) > 0.0));
        }
    }

    #[test]
    fn extend_matches_full_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = Kernel::rbf(1.0).unwrap();
        let pts = random_points(&mut rng, 8, 2);
        let mut g = gram_factorize(&k, &pts[..5], 0.05).unwrap();
        for p in &pts[5..] {
            assert!(g.try_extend(&k, p));
        }
        let full = gram_factorize(&k, &pts, 0.05).unwrap();
        assert_eq!(full.jitter(), g.jitter());
        let diff = (full.factor().to_dense() - g.factor().to_dense()).abs().max();
        assert!(diff < 1e-12);
    }

    #[test]
    fn non_finite_points_rejected() {
        let k = Kernel::rbf(1.0).unwrap();
        assert!(gram_factorize(&k, &[vec![f64::NAN]], 0.0).is_err());
        assert!(gram_factorize(&k, &[vec![0.0], vec![0.0, 1.0]], 0.0).is_err());
        assert!(gram_factorize(&k, &[vec![0.0]], -1.0).is_err());
    }

    #[test]
    fn jitter_levels_cover_schedule() {
        let p = JitterPolicy {
            initial: 1e-10,
            max: 1e-4,
            growth: 10.0,
            pivot_floor: 0.0,
        };
        let levels: Vec<f64> = p.levels().collect();
        assert_eq!(levels.len(), 7);
        assert!((levels[6] - 1e-4).abs() < 1e-18);
    }
}
