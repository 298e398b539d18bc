//! Covariance functions together with the first-derivative and cross-Hessian
//! quantities needed to condition a GP on function values and read off the
//! joint posterior of the gradient.
//!
//! Stationary families are written in terms of the scaled radius
//! `r = ‖(u − v) / ℓ‖` as `k = s·ψ(r)`. Derivatives go through the two
//! radial helpers `q(r) = ψ'(r)/r` and `p(r) = q'(r)/r`, both of which are
//! finite at `r = 0` for every family admitted here:
//!
//! ```text
//! ∂k/∂u_i        = s·q(r)·δ_i/ℓ_i
//! ∂²k/∂u_i∂v_j   = −s·( p(r)·δ_iδ_j/(ℓ_iℓ_j) + q(r)·[i = j]/ℓ_i² )
//! ```
//!
//! where `δ_i = (u_i − v_i)/ℓ_i`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// Kernel family menu.
///
/// Only kernels with at least four continuous derivatives are offered; the
/// polynomial kernel is not stationary and exists for the normal-location
/// experiment, whose quadratic loss lies in its RKHS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    Rbf,
    Matern52,
    Matern72,
    /// `(⟨u, v⟩_ℓ + 1)²` with `⟨u, v⟩_ℓ = Σ u_j v_j / ℓ_j²`.
    PolynomialDeg2,
}

impl KernelFamily {
    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelFamily::PolynomialDeg2)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Rbf => "rbf",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Matern72 => "matern72",
            KernelFamily::PolynomialDeg2 => "poly2",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "rbf" | "se" | "squared_exponential" => Ok(KernelFamily::Rbf),
            "matern52" | "matern5/2" => Ok(KernelFamily::Matern52),
            "matern72" | "matern7/2" => Ok(KernelFamily::Matern72),
            "poly2" | "polynomial2" | "polynomial_deg2" => Ok(KernelFamily::PolynomialDeg2),
            other => Err(invalid(format!(
                "unknown kernel family `{other}` (expected rbf, matern52, matern72 or poly2)"
            ))),
        }
    }
}

/// A positive-definite covariance function with per-dimension or isotropic
/// lengthscales.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    family: KernelFamily,
    lengthscales: Vec<f64>,
    output_scale: f64,
}

impl Kernel {
    /// `lengthscales` of length one is isotropic and works in any dimension;
    /// otherwise its length fixes the input dimension.
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>, output_scale: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(invalid("kernel needs at least one lengthscale"));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(invalid(format!("lengthscales must be finite and positive, got {l}")));
        }
        if !(output_scale.is_finite() && output_scale > 0.0) {
            return Err(invalid(format!("output scale must be finite and positive, got {output_scale}")));
        }
        Ok(Kernel {
            family,
            lengthscales,
            output_scale,
        })
    }

    pub fn isotropic(family: KernelFamily, lengthscale: f64) -> Result<Self> {
        Kernel::new(family, vec![lengthscale], 1.0)
    }

    pub fn rbf(lengthscale: f64) -> Result<Self> {
        Kernel::isotropic(KernelFamily::Rbf, lengthscale)
    }

    pub fn polynomial_deg2() -> Self {
        Kernel {
            family: KernelFamily::PolynomialDeg2,
            lengthscales: vec![1.0],
            output_scale: 1.0,
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn is_isotropic(&self) -> bool {
        self.lengthscales.len() == 1
    }

    /// Lengthscale along coordinate `j`.
    #[inline]
    pub fn lengthscale(&self, j: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[j]
        }
    }

    /// Checks that `u` and `v` can be fed to this kernel.
    pub fn check_dims(&self, u: &[f64], v: &[f64]) -> Result<()> {
        if u.len() != v.len() {
            return Err(invalid(format!(
                "dimension mismatch: {} vs {}",
                u.len(),
                v.len()
            )));
        }
        self.check_dim(u.len())
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(invalid("points must have at least one coordinate"));
        }
        if !self.is_isotropic() && self.lengthscales.len() != d {
            return Err(invalid(format!(
                "kernel has {} lengthscales but points have dimension {d}",
                self.lengthscales.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_dims(u, v)?;
        Ok(self.eval_unchecked(u, v))
    }

    pub fn grad_first(&self, u: &[f64], v: &[f64]) -> Result<DVector<f64>> {
        self.check_dims(u, v)?;
        let mut out = DVector::zeros(u.len());
        self.grad_first_into(u, v, out.as_mut_slice());
        Ok(out)
    }

    pub fn cross_hessian(&self, u: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dims(u, v)?;
        Ok(self.cross_hessian_unchecked(u, v))
    }

    /// Same as [`Kernel::eval`] without the dimension check.
    pub(crate) fn eval_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.family {
            KernelFamily::PolynomialDeg2 => {
                let s = self.scaled_dot(u, v);
                self.output_scale * (s + 1.0) * (s + 1.0)
            }
            family => {
                let r = self.scaled_distance_sq(u, v).sqrt();
                self.output_scale * radial_value(family, r)
            }
        }
    }

    /// Writes `∂k(u, v)/∂u` into `out`.
    pub(crate) fn grad_first_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        match self.family {
            KernelFamily::PolynomialDeg2 => {
                let s = self.scaled_dot(u, v);
                for (j, o) in out.iter_mut().enumerate() {
                    let l = self.lengthscale(j);
                    *o = self.output_scale * 2.0 * (s + 1.0) * v[j] / (l * l);
                }
            }
            family => {
                let r = self.scaled_distance_sq(u, v).sqrt();
                let q = radial_q(family, r);
                for (j, o) in out.iter_mut().enumerate() {
                    let l = self.lengthscale(j);
                    *o = self.output_scale * q * (u[j] - v[j]) / (l * l);
                }
            }
        }
    }

    pub(crate) fn cross_hessian_unchecked(&self, u: &[f64], v: &[f64]) -> DMatrix<f64> {
        let d = u.len();
        let mut h = DMatrix::zeros(d, d);
        match self.family {
            KernelFamily::PolynomialDeg2 => {
                let s = self.scaled_dot(u, v);
                for i in 0..d {
                    let li2 = self.lengthscale(i).powi(2);
                    for j in 0..d {
                        let lj2 = self.lengthscale(j).powi(2);
                        let mut val = 2.0 * (v[i] / li2) * (u[j] / lj2);
                        if i == j {
                            val += 2.0 * (s + 1.0) / li2;
                        }
                        h[(i, j)] = self.output_scale * val;
                    }
                }
            }
            family => {
                let r = self.scaled_distance_sq(u, v).sqrt();
                let q = radial_q(family, r);
                let p = radial_p(family, r);
                for i in 0..d {
                    let li = self.lengthscale(i);
                    let di = (u[i] - v[i]) / li;
                    for j in 0..d {
                        let lj = self.lengthscale(j);
                        let dj = (u[j] - v[j]) / lj;
                        let mut val = p * di * dj / (li * lj);
                        if i == j {
                            val += q / (li * li);
                        }
                        h[(i, j)] = -self.output_scale * val;
                    }
                }
            }
        }
        h
    }

    /// Trace of the prior gradient covariance at `u`, i.e. of `cross_hessian(u, u)`.
    pub(crate) fn prior_gradient_trace(&self, u: &[f64]) -> f64 {
        match self.family {
            KernelFamily::PolynomialDeg2 => {
                let s = self.scaled_dot(u, u);
                (0..u.len())
                    .map(|j| {
                        let l2 = self.lengthscale(j).powi(2);
                        self.output_scale * (2.0 * u[j] * u[j] / (l2 * l2) + 2.0 * (s + 1.0) / l2)
                    })
                    .sum()
            }
            family => {
                let q0 = radial_q(family, 0.0);
                (0..u.len())
                    .map(|j| -self.output_scale * q0 / self.lengthscale(j).powi(2))
                    .sum()
            }
        }
    }

    fn scaled_distance_sq(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter()
            .zip(v)
            .enumerate()
            .map(|(j, (a, b))| {
                let z = (a - b) / self.lengthscale(j);
                z * z
            })
            .sum()
    }

    fn scaled_dot(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter()
            .zip(v)
            .enumerate()
            .map(|(j, (a, b))| a * b / self.lengthscale(j).powi(2))
            .sum()
    }
}

const SQRT5: f64 = 2.236_067_977_499_79;
const SQRT7: f64 = 2.645_751_311_064_590_6;

fn radial_value(family: KernelFamily, r: f64) -> f64 {
    match family {
        KernelFamily::Rbf => (-0.5 * r * r).exp(),
        KernelFamily::Matern52 => {
            let a = SQRT5;
            (1.0 + a * r + a * a * r * r / 3.0) * (-a * r).exp()
        }
        KernelFamily::Matern72 => {
            let a = SQRT7;
            let ar = a * r;
            (1.0 + ar + 2.0 * ar * ar / 5.0 + ar * ar * ar / 15.0) * (-ar).exp()
        }
        KernelFamily::PolynomialDeg2 => unreachable!("polynomial kernel is not radial"),
    }
}

// q(r) = ψ'(r) / r
fn radial_q(family: KernelFamily, r: f64) -> f64 {
    match family {
        KernelFamily::Rbf => -(-0.5 * r * r).exp(),
        KernelFamily::Matern52 => {
            let a = SQRT5;
            -(a * a / 3.0) * (1.0 + a * r) * (-a * r).exp()
        }
        KernelFamily::Matern72 => {
            let a = SQRT7;
            let ar = a * r;
            -(a * a / 15.0) * (3.0 + 3.0 * ar + ar * ar) * (-ar).exp()
        }
        KernelFamily::PolynomialDeg2 => unreachable!("polynomial kernel is not radial"),
    }
}

// p(r) = q'(r) / r
fn radial_p(family: KernelFamily, r: f64) -> f64 {
    match family {
        KernelFamily::Rbf => (-0.5 * r * r).exp(),
        KernelFamily::Matern52 => {
            let a = SQRT5;
            (a * a * a * a / 3.0) * (-a * r).exp()
        }
        KernelFamily::Matern72 => {
            let a = SQRT7;
            (a * a * a * a / 15.0) * (1.0 + a * r) * (-a * r).exp()
        }
        KernelFamily::PolynomialDeg2 => unreachable!("polynomial kernel is not radial"),
    }
}

/// `kernel_eval` with argument validation.
pub fn kernel_eval(k: &Kernel, u: &[f64], v: &[f64]) -> Result<f64> {
    k.eval(u, v)
}

pub fn kernel_grad_first(k: &Kernel, u: &[f64], v: &[f64]) -> Result<DVector<f64>> {
    k.grad_first(u, v)
}

pub fn kernel_cross_hessian(k: &Kernel, u: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
    k.cross_hessian(u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FAMILIES: [KernelFamily; 4] = [
        KernelFamily::Rbf,
        KernelFamily::Matern52,
        KernelFamily::Matern72,
        KernelFamily::PolynomialDeg2,
    ];

    fn fd_grad(k: &Kernel, u: &[f64], v: &[f64], h: f64) -> Vec<f64> {
        (0..u.len())
            .map(|j| {
                let mut up = u.to_vec();
                let mut um = u.to_vec();
                up[j] += h;
                um[j] -= h;
                (k.eval(&up, v).unwrap() - k.eval(&um, v).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    // ∂²k/∂u_i∂v_j by a four-point mixed central difference.
    fn fd_cross(k: &Kernel, u: &[f64], v: &[f64], h: f64) -> DMatrix<f64> {
        let d = u.len();
        DMatrix::from_fn(d, d, |i, j| {
            let shift = |x: &[f64], idx: usize, s: f64| {
                let mut y = x.to_vec();
                y[idx] += s;
                y
            };
            let f = |su: f64, sv: f64| k.eval(&shift(u, i, su), &shift(v, j, sv)).unwrap();
            (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h)
        })
    }

    fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
    }

    #[test]
    fn rbf_values() {
        let k = Kernel::rbf(1.0).unwrap();
        assert_eq!(k.eval(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        let v = k.eval(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((v - 0.606_530_659_712_633_4).abs() < 1e-15);
    }

    #[test]
    fn polynomial_at_origin() {
        let k = Kernel::polynomial_deg2();
        assert_eq!(k.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        // (1·2 + 3·(−1) + 1)² = 0
        assert_eq!(k.eval(&[1.0, 3.0], &[2.0, -1.0]).unwrap(), 0.0);
    }

    #[test]
    fn rbf_gradient_examples() {
        let k = Kernel::rbf(1.0).unwrap();
        let g0 = k.grad_first(&[0.2, 0.4], &[0.2, 0.4]).unwrap();
        assert_eq!(g0.as_slice(), &[0.0, 0.0]);

        let g = k.grad_first(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        let expected = -(-0.5f64).exp();
        assert!(close(g[0], expected, 1e-12, 0.0));
        assert_eq!(g[1], 0.0);
        let fd = fd_grad(&k, &[1.0, 0.0], &[0.0, 0.0], 1e-5);
        assert!(close(g[0], fd[0], 1e-5, 0.0));
    }

    #[test]
    fn matern52_gradient_matches_fd() {
        let k = Kernel::isotropic(KernelFamily::Matern52, 1.0).unwrap();
        let u = [0.3, 0.0];
        let v = [0.0, 0.0];
        let g = k.grad_first(&u, &v).unwrap();
        let fd = fd_grad(&k, &u, &v, 1e-5);
        assert!(close(g[0], fd[0], 1e-5, 0.0), "{} vs {}", g[0], fd[0]);
        assert!(g[1].abs() < 1e-15);
    }

    #[test]
    fn cross_hessian_examples() {
        let k = Kernel::rbf(1.0).unwrap();
        let h = k.cross_hessian(&[0.5, -0.5, 2.0], &[0.5, -0.5, 2.0]).unwrap();
        assert_eq!(h, DMatrix::identity(3, 3));
        let fd = fd_cross(&k, &[0.5, -0.5, 2.0], &[0.5, -0.5, 2.0], 1e-4);
        assert!((h - fd).abs().max() < 1e-4);

        let k = Kernel::rbf(0.5).unwrap();
        let h = k.cross_hessian(&[0.0], &[0.0]).unwrap();
        assert!(close(h[(0, 0)], 4.0, 1e-14, 0.0));

        // Finite-difference oracle on (xᵀy + 1)² at the origin.
        let p = Kernel::polynomial_deg2();
        let fd = fd_cross(&p, &[0.0, 0.0], &[0.0, 0.0], 1e-4);
        let h = p.cross_hessian(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((h.clone() - fd).abs().max() < 1e-6);
        assert!(close(h[(0, 0)], 2.0, 1e-12, 0.0));
        assert_eq!(h[(0, 1)], 0.0);
    }

    #[test]
    fn cross_hessian_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for family in [KernelFamily::Rbf, KernelFamily::Matern52, KernelFamily::Matern72] {
            let k = Kernel::new(family, vec![0.7, 1.3, 2.0], 1.5).unwrap();
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let us: Vec<f64> = u.iter().zip(&c).map(|(a, b)| a + b).collect();
            let vs: Vec<f64> = v.iter().zip(&c).map(|(a, b)| a + b).collect();
            let h1 = k.cross_hessian(&u, &v).unwrap();
            let h2 = k.cross_hessian(&us, &vs).unwrap();
            assert!((h1 - h2).abs().max() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let k = Kernel::rbf(1.0).unwrap();
        assert!(k.eval(&[0.0], &[0.0, 1.0]).is_err());
        let ard = Kernel::new(KernelFamily::Rbf, vec![1.0, 2.0], 1.0).unwrap();
        assert!(ard.eval(&[0.0; 3], &[0.0; 3]).is_err());
        assert!(ard.grad_first(&[0.0; 3], &[0.0; 3]).is_err());
        assert!(ard.cross_hessian(&[0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn construction_rejects_bad_lengthscales() {
        assert!(Kernel::rbf(0.0).is_err());
        assert!(Kernel::rbf(-1.0).is_err());
        assert!(Kernel::new(KernelFamily::Rbf, vec![1.0, f64::NAN], 1.0).is_err());
        assert!(Kernel::new(KernelFamily::Rbf, vec![], 1.0).is_err());
        assert!(Kernel::new(KernelFamily::Rbf, vec![1.0], 0.0).is_err());
    }

    #[test]
    fn symmetry_and_antisymmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for family in FAMILIES {
            let k = Kernel::new(family, vec![0.8, 1.7], 1.2).unwrap();
            for _ in 0..50 {
                let u: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
                let v: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
                assert_eq!(k.eval(&u, &v).unwrap(), k.eval(&v, &u).unwrap());
                if family.is_stationary() {
                    let a = k.grad_first(&u, &v).unwrap();
                    let b = k.grad_first(&v, &u).unwrap();
                    assert!((a + b).abs().max() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for family in FAMILIES {
            let k = Kernel::new(family, vec![0.9, 1.4, 0.6], 1.3).unwrap();
            for _ in 0..100 {
                let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g = k.grad_first(&u, &v).unwrap();
                let fd = fd_grad(&k, &u, &v, 1e-5);
                let scale = g.amax().max(1e-3);
                for j in 0..3 {
                    assert!((g[j] - fd[j]).abs() <= 1e-4 * scale, "{family:?} grad {j}");
                }
                let h = k.cross_hessian(&u, &v).unwrap();
                let fdh = fd_cross(&k, &u, &v, 1e-4);
                let scale = h.amax().max(1e-2);
                assert!((h - fdh).abs().max() <= 1e-4 * scale, "{family:?} cross-hessian");
            }
        }
    }

    #[test]
    fn prior_gradient_covariance_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for family in FAMILIES {
            let k = Kernel::new(family, vec![0.5, 1.0, 2.0, 1.5], 0.7).unwrap();
            for _ in 0..20 {
                let u: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
                let h = k.cross_hessian(&u, &u).unwrap();
                assert!((h.clone() - h.transpose()).abs().max() < 1e-12);
                let eig = h.clone().symmetric_eigen();
                assert!(eig.eigenvalues.min() >= -1e-10);
                assert!(close(h.trace(), k.prior_gradient_trace(&u), 1e-12, 1e-14));
            }
        }
    }
}
