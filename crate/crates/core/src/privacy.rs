//! Clipping, the Gaussian mechanism and a Gaussian-DP budget ledger.
//!
//! This is the only module that adds randomness to a released quantity.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

const LEDGER_SLACK: f64 = 1e-12;

fn check_bound(bound: f64) -> Result<()> {
    if bound > 0.0 && !bound.is_nan() {
        Ok(())
    } else {
        Err(invalid(format!("clipping bound must be > 0, got {bound}")))
    }
}

/// Radial projection onto the ball of radius `bound`. `bound = ∞` is the
/// identity. The zero vector maps to itself.
pub fn clip(v: &DVector<f64>, bound: f64) -> Result<DVector<f64>> {
    check_bound(bound)?;
    Ok(clip_unchecked(v, bound).0)
}

fn clip_unchecked(v: &DVector<f64>, bound: f64) -> (DVector<f64>, bool) {
    let norm = v.norm();
    if norm > bound {
        (v * (bound / norm), true)
    } else {
        (v.clone(), false)
    }
}

/// Mean of the row-wise clipped per-user gradients.
pub fn clip_aggregate(per_user: &DMatrix<f64>, bound: f64) -> Result<DVector<f64>> {
    Ok(clip_aggregate_with_fraction(per_user, bound)?.0)
}

/// As [`clip_aggregate`], also returning the fraction of users that were scaled down.
pub fn clip_aggregate_with_fraction(per_user: &DMatrix<f64>, bound: f64) -> Result<(DVector<f64>, f64)> {
    check_bound(bound)?;
    let n = per_user.nrows();
    if n == 0 {
        return Err(invalid("cannot aggregate gradients of zero users"));
    }
    let mut sum = DVector::zeros(per_user.ncols());
    let mut clipped = 0usize;
    for row in per_user.row_iter() {
        let (c, was) = clip_unchecked(&row.transpose(), bound);
        sum += c;
        clipped += was as usize;
    }
    Ok((sum / n as f64, clipped as f64 / n as f64))
}

/// Noise multiplier `GS / μ` of the Gaussian mechanism.
pub fn gaussian_mechanism_scale(sensitivity: f64, mu: f64) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(invalid(format!("μ must be a positive finite number, got {mu}")));
    }
    if !(sensitivity >= 0.0 && sensitivity.is_finite()) {
        return Err(invalid(format!("sensitivity must be ≥ 0, got {sensitivity}")));
    }
    Ok(sensitivity / mu)
}

/// Composition of Gaussian-DP mechanisms.
pub fn gdp_compose(mus: &[f64]) -> f64 {
    mus.iter().map(|m| m * m).sum::<f64>().sqrt()
}

/// High-probability bound on the largest norm of `iterations` standard normal
/// `d`-vectors, holding with probability at least `1 − δ`.
pub fn max_noise_envelope(iterations: usize, d: usize, delta: f64) -> Result<f64> {
    if iterations == 0 || d == 0 {
        return Err(invalid("iterations and dimension must be ≥ 1"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(invalid(format!("δ must lie in (0, 1], got {delta}")));
    }
    Ok(4.0 * (d as f64).sqrt() + 2.0 * (2.0 * (iterations as f64 / delta).ln()).sqrt())
}

/// Total μ-GDP budget split evenly over a fixed number of releases.
///
/// `mu_total = 0` is the non-private sentinel: no noise and no ledger entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyBudget {
    mu_total: f64,
    iterations: usize,
    clip_bound: f64,
    users: usize,
    ledger: Vec<f64>,
}

impl PrivacyBudget {
    pub fn new(mu_total: f64, iterations: usize, clip_bound: f64, users: usize) -> Result<Self> {
        if !(mu_total >= 0.0 && mu_total.is_finite()) {
            return Err(invalid(format!("μ must be ≥ 0 and finite (0 = non-private), got {mu_total}")));
        }
        if iterations == 0 || users == 0 {
            return Err(invalid("iterations and users must be ≥ 1"));
        }
        check_bound(clip_bound)?;
        if mu_total > 0.0 && clip_bound.is_infinite() {
            return Err(invalid("a private budget needs a finite clipping bound"));
        }
        Ok(PrivacyBudget {
            mu_total,
            iterations,
            clip_bound,
            users,
            ledger: Vec::new(),
        })
    }

    pub fn non_private(iterations: usize, clip_bound: f64, users: usize) -> Result<Self> {
        Self::new(0.0, iterations, clip_bound, users)
    }

    pub fn is_private(&self) -> bool {
        self.mu_total > 0.0
    }

    pub fn mu_total(&self) -> f64 {
        self.mu_total
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn ledger(&self) -> &[f64] {
        &self.ledger
    }

    pub fn per_step_mu(&self) -> f64 {
        self.mu_total / (self.iterations as f64).sqrt()
    }

    pub fn sensitivity(&self) -> f64 {
        2.0 * self.clip_bound / self.users as f64
    }

    /// Per-coordinate noise standard deviation `2B√T / (nμ)`; zero when non-private.
    pub fn noise_scale(&self) -> f64 {
        if self.is_private() {
            self.sensitivity() / self.per_step_mu()
        } else {
            0.0
        }
    }

    pub fn consumed(&self) -> f64 {
        gdp_compose(&self.ledger)
    }

    fn charge(&mut self) -> Result<()> {
        let step = self.per_step_mu();
        let consumed = self.consumed();
        let after = (consumed * consumed + step * step).sqrt();
        if after > self.mu_total * (1.0 + LEDGER_SLACK) + LEDGER_SLACK {
            return Err(Error::BudgetExhausted {
                consumed,
                requested: step,
                total: self.mu_total,
            });
        }
        self.ledger.push(step);
        Ok(())
    }
}

/// One privatized release.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyGradient {
    pub value: DVector<f64>,
    pub clipped_aggregate: DVector<f64>,
    pub noise: DVector<f64>,
    pub noise_scale: f64,
    pub clip_fraction: f64,
}

/// Clips, averages and perturbs the per-user gradients, charging one step to
/// the budget. Nothing is drawn and nothing is charged in non-private mode.
pub fn privatize_gradient<R: Rng + ?Sized>(
    per_user: &DMatrix<f64>,
    budget: &mut PrivacyBudget,
    rng: &mut R,
) -> Result<NoisyGradient> {
    if per_user.nrows() != budget.users {
        return Err(invalid(format!(
            "budget is for {} users but {} gradients were given",
            budget.users,
            per_user.nrows()
        )));
    }
    let (clipped_aggregate, clip_fraction) = clip_aggregate_with_fraction(per_user, budget.clip_bound)?;
    let d = clipped_aggregate.len();
    if !budget.is_private() {
        return Ok(NoisyGradient {
            value: clipped_aggregate.clone(),
            clipped_aggregate,
            noise: DVector::zeros(d),
            noise_scale: 0.0,
            clip_fraction,
        });
    }
    budget.charge()?;
    let scale = budget.noise_scale();
    let noise = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    Ok(NoisyGradient {
        value: &clipped_aggregate + &noise,
        clipped_aggregate,
        noise,
        noise_scale: scale,
        clip_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(&dv(&[0.3, 0.4]), 1.0).unwrap(), dv(&[0.3, 0.4]));
        assert_eq!(clip(&dv(&[0.0, 2.0]), 1.0).unwrap(), dv(&[0.0, 1.0]));
        let v = dv(&[1.2, -1.6]);
        assert!((clip(&v, 1.0).unwrap() - &v / 2.0).norm() < 1e-15);
        assert_eq!(clip(&dv(&[0.0, 0.0]), 1.0).unwrap(), dv(&[0.0, 0.0]));
        assert_eq!(clip(&dv(&[3.0]), f64::INFINITY).unwrap(), dv(&[3.0]));
        assert!(clip(&v, 0.0).is_err());
        assert!(clip(&v, -1.0).is_err());
    }

    #[test]
    fn clip_aggregate_examples() {
        let inside = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, -0.2]);
        assert_eq!(clip_aggregate(&inside, 1.0).unwrap(), dv(&[0.2, 0.0]));
        let opposite = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, -3.0, -4.0]);
        assert_eq!(clip_aggregate(&opposite, 1.0).unwrap(), dv(&[0.0, 0.0]));
        let (_, frac) = clip_aggregate_with_fraction(&opposite, 1.0).unwrap();
        assert_eq!(frac, 1.0);
        assert!(clip_aggregate(&DMatrix::zeros(0, 2), 1.0).is_err());
    }

    #[test]
    fn mechanism_scale_examples() {
        assert_eq!(gaussian_mechanism_scale(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(gaussian_mechanism_scale(0.0, 3.0).unwrap(), 0.0);
        assert!(gaussian_mechanism_scale(1.0, 0.0).is_err());

        // Two routes to the per-step noise scale.
        let (b, n, t, mu) = (1.0, 50usize, 150usize, 0.5);
        let direct = 2.0 * b * (t as f64).sqrt() / (n as f64 * mu);
        let via = gaussian_mechanism_scale(2.0 * b / n as f64, mu / (t as f64).sqrt()).unwrap();
        let budget = PrivacyBudget::new(mu, t, b, n).unwrap();
        assert!((direct - 0.9797958971132712).abs() < 1e-12);
        assert!((via - direct).abs() < 1e-12);
        assert!((budget.noise_scale() - direct).abs() < 1e-12);
    }

    #[test]
    fn compose_examples() {
        assert_eq!(gdp_compose(&[0.7]), 0.7);
        assert!((gdp_compose(&[1.0, 1.0]) - 2f64.sqrt()).abs() < 1e-15);
        for &t in &[1usize, 7, 25, 150, 1000] {
            for &mu in &[0.1, 0.5, 2.0] {
                let ledger = vec![mu / (t as f64).sqrt(); t];
                assert!((gdp_compose(&ledger) - mu).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn envelope_examples() {
        assert_eq!(max_noise_envelope(1, 1, 1.0).unwrap(), 4.0);
        let e = max_noise_envelope(10, 4, 0.05).unwrap();
        assert!((e - (8.0 + 2.0 * (2.0 * 200f64.ln()).sqrt())).abs() < 1e-12);
        assert!((e - 14.512).abs() < 5e-3);
        assert!(max_noise_envelope(10, 4, 0.0).is_err());
    }

    #[test]
    fn envelope_holds_empirically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let env = max_noise_envelope(20, 5, 0.01).unwrap();
        let trials = 10_000;
        let mut violations = 0;
        for _ in 0..trials {
            let worst = (0..20)
                .map(|_| DVector::<f64>::from_fn(5, |_, _| rng.sample(StandardNormal)).norm())
                .fold(0.0, f64::max);
            violations += (worst > env) as usize;
        }
        assert!(violations as f64 / trials as f64 <= 0.01 + 0.005);
    }

    #[test]
    fn non_private_release_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut budget = PrivacyBudget::non_private(10, 1.0, 2).unwrap();
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 3.0, 4.0]);
        let out = privatize_gradient(&g, &mut budget, &mut rng).unwrap();
        assert_eq!(out.value, out.clipped_aggregate);
        assert_eq!(out.value, dv(&[0.55, 0.4]));
        assert!(budget.ledger().is_empty());
        assert_eq!(out.noise_scale, 0.0);
    }

    #[test]
    fn release_is_reproducible_and_exhausts() {
        let g = DMatrix::from_row_slice(1, 3, &[0.1, 0.2, 0.3]);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut budget = PrivacyBudget::new(1.0, 4, 1.0, 1).unwrap();
            let outs: Vec<_> = (0..4).map(|_| privatize_gradient(&g, &mut budget, &mut rng).unwrap()).collect();
            let fifth = privatize_gradient(&g, &mut budget, &mut rng);
            (outs, budget, fifth)
        };
        let (a, budget, fifth) = run(3);
        let (b, _, _) = run(3);
        assert_eq!(a, b);
        assert!(matches!(fifth, Err(Error::BudgetExhausted { .. })));
        assert!((budget.consumed() - 1.0).abs() <= 1e-12);
        for out in &a {
            assert_eq!(out.value, &out.clipped_aggregate + &out.noise);
        }
    }

    #[test]
    fn noise_std_matches_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let g = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        let mut budget = PrivacyBudget::new(1.0, draws, 1.0, 2).unwrap();
        let scale = budget.noise_scale();
        let mut sq = 0.0;
        for _ in 0..draws {
            let out = privatize_gradient(&g, &mut budget, &mut rng).unwrap();
            sq += out.noise[0] * out.noise[0];
        }
        let std = (sq / draws as f64).sqrt();
        assert!((std / scale - 1.0).abs() <= 0.03, "{std} vs {scale}");
    }

    #[test]
    fn budget_rejects_bad_inputs() {
        assert!(PrivacyBudget::new(-1.0, 1, 1.0, 1).is_err());
        assert!(PrivacyBudget::new(1.0, 0, 1.0, 1).is_err());
        assert!(PrivacyBudget::new(1.0, 1, f64::INFINITY, 1).is_err());
        assert!(PrivacyBudget::non_private(1, f64::INFINITY, 1).is_ok());
    }

    fn matrix(n: usize, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-5.0..5.0f64, n * d).prop_map(move |v| DMatrix::from_row_slice(n, d, &v))
    }

    proptest! {
        #[test]
        fn clipped_norm_is_bounded(v in proptest::collection::vec(-10.0..10.0f64, 1..6), b in 0.01..5.0f64) {
            let c = clip(&DVector::from_vec(v.clone()), b).unwrap();
            prop_assert!(c.norm() <= b + 1e-12);
            // Direction is kept.
            let v = DVector::from_vec(v);
            prop_assert!(c.dot(&v) >= -1e-12);
        }

        #[test]
        fn clip_is_non_expansive_toward_the_ball(
            v in proptest::collection::vec(-10.0..10.0f64, 3),
            u in proptest::collection::vec(-1.0..1.0f64, 3),
            b in 0.5..3.0f64,
        ) {
            let v = DVector::from_vec(v);
            let u = clip(&DVector::from_vec(u), b).unwrap();
            let c = clip(&v, b).unwrap();
            prop_assert!((&c - &u).norm() <= (&v - &u).norm() + 1e-12);
        }

        #[test]
        fn neighbouring_sensitivity(m in matrix(5, 3), row in proptest::collection::vec(-9.0..9.0f64, 3), which in 0usize..5, b in 0.1..3.0f64) {
            let mut other = m.clone();
            for j in 0..3 { other[(which, j)] = row[j]; }
            let diff = clip_aggregate(&m, b).unwrap() - clip_aggregate(&other, b).unwrap();
            prop_assert!(diff.norm() <= 2.0 * b / 5.0 + 1e-12);
        }
    }
}
