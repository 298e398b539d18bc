//! Gradient-uncertainty acquisition and batch selection.
//!
//! The acquisition value of a batch `z` is the negated trace of the variance
//! it explains in the gradient posterior at `θ`. It never reads observations.
//!
//! Batches come from two sources and the better one wins:
//! greedy sequential selection, where each point maximizes the explained
//! variance given the earlier ones via multi-start coordinate search, and
//! axis stencils (forward and central difference layouts, replicated under
//! noise) with the offset tuned by a one-dimensional search.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::gp::GpSurrogate;
use crate::gram::{CholeskyFactor, GramFactorization};
use crate::kernel::Kernel;

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    /// Target bound on the posterior gradient-covariance trace.
    pub epsilon: f64,
    pub b_max: usize,
    /// Half-width of the candidate box around θ, in lengthscales.
    pub search_radius: f64,
    pub restarts: usize,
    /// Trial moves per restart in the coordinate search.
    pub local_steps: usize,
    pub candidate_seed_count: usize,
    /// Spend exactly this many points every iteration instead of searching
    /// for the smallest batch meeting `epsilon`.
    pub fixed_batch: Option<usize>,
}

impl AcquisitionConfig {
    pub fn new(epsilon: f64, dimension: usize) -> Self {
        AcquisitionConfig {
            epsilon,
            b_max: 2 * (dimension + 1),
            search_radius: 1.0,
            restarts: 4,
            local_steps: 30,
            candidate_seed_count: 32,
            fixed_batch: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("ε must be > 0, got {}", self.epsilon)));
        }
        if self.b_max == 0 {
            return Err(invalid("b_max must be ≥ 1"));
        }
        if !(self.search_radius > 0.0 && self.search_radius.is_finite()) {
            return Err(invalid("search radius must be > 0"));
        }
        if self.restarts == 0 || self.local_steps == 0 || self.candidate_seed_count == 0 {
            return Err(invalid("restarts, local steps and seed count must be ≥ 1"));
        }
        if self.fixed_batch == Some(0) {
            return Err(invalid("a fixed batch size must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchProposal {
    pub points: Vec<Vec<f64>>,
    /// Posterior gradient-covariance trace at θ after adding `points`.
    pub achieved_trace: f64,
    pub batch_size_used: usize,
    /// The trace target was not met within the allowed batch size.
    pub hit_cap: bool,
}

/// `−tr(explained variance)` of adding `z` to `design`, i.e. the change in the
/// posterior gradient-covariance trace at `θ`.
pub fn acquisition_value(
    surrogate: &GpSurrogate,
    design: &[Vec<f64>],
    z: &[Vec<f64>],
    theta: &[f64],
) -> Result<f64> {
    let all: Vec<Vec<f64>> = design.iter().chain(z).cloned().collect();
    if all.is_empty() {
        return Ok(0.0);
    }
    let post = surrogate.gradient_covariance(&all, theta)?.trace();
    let prior = surrogate.kernel.prior_gradient_trace(theta);
    Ok(post - prior)
}

/// `m` copies of the pairs `θ ± h e_j` for every coordinate `j`.
pub fn axis_pair_design(theta: &[f64], h: f64, m: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * m * theta.len());
    for _ in 0..m {
        for j in 0..theta.len() {
            for sign in [1.0, -1.0] {
                let mut p = theta.to_vec();
                p[j] += sign * h;
                out.push(p);
            }
        }
    }
    out
}

/// Gradient posterior at a fixed θ that can absorb points one at a time.
#[derive(Debug, Clone)]
pub(crate) struct Conditioner<'a> {
    kernel: &'a Kernel,
    theta: &'a [f64],
    shift: f64,
    floor: f64,
    relative_floor: f64,
    points: Vec<Vec<f64>>,
    factor: CholeskyFactor,
    // L⁻¹ C, row-major, one row of length d per point.
    v: Vec<f64>,
    cov: DMatrix<f64>,
}

struct Scored {
    gain: f64,
    r: Vec<f64>,
    schur: f64,
}

impl<'a> Conditioner<'a> {
    pub(crate) fn new(surrogate: &'a GpSurrogate, fact: Option<&GramFactorization>, theta: &'a [f64]) -> Self {
        let kernel = &surrogate.kernel;
        let d = theta.len();
        let prior = kernel.cross_hessian_unchecked(theta, theta);
        let (shift, floor, points, factor) = match fact {
            Some(f) if !f.is_empty() => (
                f.diagonal_shift(),
                f.absolute_pivot_floor(),
                f.points().to_vec(),
                f.factor().clone(),
            ),
            _ => {
                let scale = kernel.eval_unchecked(theta, theta).abs().max(f64::MIN_POSITIVE);
                (
                    surrogate.noise_variance + surrogate.jitter.initial * scale,
                    surrogate.jitter.pivot_floor * scale,
                    Vec::new(),
                    CholeskyFactor::default(),
                )
            }
        };
        let mut v = vec![0.0; points.len() * d];
        let mut buf = vec![0.0; d];
        for (p, point) in points.iter().enumerate() {
            kernel.grad_first_into(theta, point, &mut buf);
            v[p * d..(p + 1) * d].copy_from_slice(&buf);
        }
        let mut col = vec![0.0; points.len()];
        for j in 0..d {
            for p in 0..points.len() {
                col[p] = v[p * d + j];
            }
            factor.forward_solve_in_place(&mut col);
            for p in 0..points.len() {
                v[p * d + j] = col[p];
            }
        }
        let mut cov = prior;
        for row in v.chunks(d) {
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] -= row[i] * row[j];
                }
            }
        }
        Conditioner {
            kernel,
            theta,
            shift,
            floor,
            relative_floor: surrogate.jitter.pivot_floor,
            points,
            factor,
            v,
            cov,
        }
    }

    fn floor_for(&self, diag: f64) -> f64 {
        self.floor.max(self.relative_floor * diag)
    }

    pub(crate) fn trace(&self) -> f64 {
        self.cov.trace().max(0.0)
    }

    fn score(&self, z: &[f64]) -> Scored {
        let d = self.theta.len();
        let mut a: Vec<f64> = self.points.iter().map(|p| self.kernel.eval_unchecked(p, z)).collect();
        self.factor.forward_solve_in_place(&mut a);
        let diag = self.kernel.eval_unchecked(z, z) + self.shift;
        let schur = diag - a.iter().map(|x| x * x).sum::<f64>();
        let mut r = vec![0.0; d];
        self.kernel.grad_first_into(self.theta, z, &mut r);
        for (p, ap) in a.iter().enumerate() {
            let row = &self.v[p * d..(p + 1) * d];
            for j in 0..d {
                r[j] -= ap * row[j];
            }
        }
        let gain = if schur.is_finite() && schur > self.floor_for(diag) {
            r.iter().map(|x| x * x).sum::<f64>() / schur
        } else {
            0.0
        };
        Scored { gain, r, schur }
    }

    fn gain(&self, z: &[f64]) -> f64 {
        self.score(z).gain
    }

    /// Conditions on `z`. Points whose conditional variance is below the
    /// pivot floor carry no usable information and are skipped.
    pub(crate) fn push(&mut self, z: &[f64]) -> bool {
        let Scored { r, schur, .. } = self.score(z);
        let diag = self.kernel.eval_unchecked(z, z) + self.shift;
        if !(schur.is_finite() && schur > self.floor_for(diag)) {
            return false;
        }
        let cross: Vec<f64> = self.points.iter().map(|p| self.kernel.eval_unchecked(p, z)).collect();
        if self.factor.try_push(&cross, diag, self.floor_for(diag)).is_err() {
            return false;
        }
        let root = schur.sqrt();
        let d = self.theta.len();
        self.v.extend(r.iter().map(|x| x / root));
        for i in 0..d {
            for j in 0..d {
                self.cov[(i, j)] -= r[i] * r[j] / schur;
            }
        }
        self.points.push(z.to_vec());
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stencil {
    Forward,
    Central,
}

fn stencil_points(theta: &[f64], kernel: &Kernel, kind: Stencil, h: f64, len: usize, noisy: bool) -> Vec<Vec<f64>> {
    let d = theta.len();
    let offset = |j: usize, sign: f64| {
        let mut p = theta.to_vec();
        p[j] += sign * h * kernel.lengthscale(j);
        p
    };
    let cycle: Vec<Vec<f64>> = match kind {
        Stencil::Forward => std::iter::once(theta.to_vec())
            .chain((0..d).map(|j| offset(j, 1.0)))
            .chain((0..d).map(|j| offset(j, -1.0)))
            .collect(),
        Stencil::Central => (0..d).flat_map(|j| [offset(j, 1.0), offset(j, -1.0)]).collect(),
    };
    let len = if noisy { len } else { len.min(cycle.len()) };
    cycle.into_iter().cycle().take(len).collect()
}

fn prefix_traces(base: &Conditioner, points: &[Vec<f64>]) -> Vec<f64> {
    let mut c = base.clone();
    points
        .iter()
        .map(|p| {
            c.push(p);
            c.trace()
        })
        .collect()
}

const STENCIL_GRID: usize = 33;

struct StencilSearch<'s, 'a> {
    base: &'s Conditioner<'a>,
    kernel: &'a Kernel,
    radius: f64,
    noisy: bool,
    // traces[kind][k][b - 1]
    traces: [Vec<Vec<f64>>; 2],
}

const KINDS: [Stencil; 2] = [Stencil::Forward, Stencil::Central];

impl<'s, 'a> StencilSearch<'s, 'a> {
    fn new(base: &'s Conditioner<'a>, kernel: &'a Kernel, radius: f64, len: usize, noisy: bool) -> Self {
        let mut s = StencilSearch {
            base,
            kernel,
            radius,
            noisy,
            traces: [Vec::new(), Vec::new()],
        };
        for (ki, kind) in KINDS.iter().enumerate() {
            for k in 0..STENCIL_GRID {
                let pts = stencil_points(base.theta, kernel, *kind, s.grid_h(k as f64), len, noisy);
                s.traces[ki].push(prefix_traces(base, &pts));
            }
        }
        s
    }

    fn grid_h(&self, k: f64) -> f64 {
        self.radius * 10f64.powf(-k / 4.0)
    }

    fn max_len(&self) -> usize {
        self.traces.iter().flat_map(|t| t.iter().map(Vec::len)).max().unwrap_or(0)
    }

    /// Best grid trace at batch size `b`, with its (kind, grid index).
    fn grid_best(&self, b: usize) -> Option<(f64, usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for (ki, rows) in self.traces.iter().enumerate() {
            for (k, row) in rows.iter().enumerate() {
                if let Some(&t) = row.get(b - 1) {
                    if best.is_none_or(|(bt, _, _)| t < bt) {
                        best = Some((t, ki, k));
                    }
                }
            }
        }
        best
    }

    fn trace_at(&self, kind: Stencil, h: f64, b: usize) -> (f64, Vec<Vec<f64>>) {
        let pts = stencil_points(self.base.theta, self.kernel, kind, h, b, self.noisy);
        let t = *prefix_traces(self.base, &pts).last().unwrap_or(&self.base.trace());
        (t, pts)
    }

    /// Golden-section refinement in log h around the best grid entry at `b`.
    fn refine(&self, b: usize) -> Option<(f64, Vec<Vec<f64>>)> {
        let (grid_t, ki, k) = self.grid_best(b)?;
        let kind = KINDS[ki];
        let lo = self.grid_h((k + 1).min(STENCIL_GRID - 1) as f64).ln();
        let hi = self.grid_h(k.saturating_sub(1) as f64).ln();
        let f = |x: f64| self.trace_at(kind, x.exp(), b).0;
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut c) = (lo, hi);
        let mut x1 = c - g * (c - a);
        let mut x2 = a + g * (c - a);
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..24 {
            if f1 <= f2 {
                c = x2;
                x2 = x1;
                f2 = f1;
                x1 = c - g * (c - a);
                f1 = f(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (c - a);
                f2 = f(x2);
            }
        }
        let x = if f1 <= f2 { x1 } else { x2 };
        let (t, pts) = self.trace_at(kind, x.exp(), b);
        if t <= grid_t {
            Some((t, pts))
        } else {
            let h = self.grid_h(k as f64);
            Some(self.trace_at(kind, h, b))
        }
    }
}

struct Greedy<'s, 'a> {
    cond: Conditioner<'a>,
    lengthscales: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    axis_offset: f64,
    cfg: &'s AcquisitionConfig,
    seed: u64,
    points: Vec<Vec<f64>>,
    traces: Vec<f64>,
}

impl<'s, 'a> Greedy<'s, 'a> {
    fn new(base: &Conditioner<'a>, cfg: &'s AcquisitionConfig, seed: u64) -> Self {
        let theta = base.theta;
        let d = theta.len();
        let lengthscales: Vec<f64> = (0..d).map(|j| base.kernel.lengthscale(j)).collect();
        let lo: Vec<f64> = (0..d).map(|j| theta[j] - cfg.search_radius * lengthscales[j]).collect();
        let hi: Vec<f64> = (0..d).map(|j| theta[j] + cfg.search_radius * lengthscales[j]).collect();
        let scale = base.kernel.eval_unchecked(theta, theta).abs().max(f64::MIN_POSITIVE);
        let axis_offset = (base.shift / scale).powf(0.25).min(cfg.search_radius);
        Greedy {
            cond: base.clone(),
            lengthscales,
            lo,
            hi,
            axis_offset,
            cfg,
            seed,
            points: Vec::new(),
            traces: Vec::new(),
        }
    }

    fn clamp(&self, z: &mut [f64]) {
        for j in 0..z.len() {
            z[j] = z[j].clamp(self.lo[j], self.hi[j]);
        }
    }

    fn next_point(&self) -> Vec<f64> {
        let theta = self.cond.theta;
        let d = theta.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.points.len() as u64);

        let mut seeds: Vec<Vec<f64>> = vec![theta.to_vec()];
        for j in 0..d {
            for sign in [1.0, -1.0] {
                let mut p = theta.to_vec();
                p[j] += sign * self.axis_offset * self.lengthscales[j];
                seeds.push(p);
            }
        }
        for _ in 0..self.cfg.candidate_seed_count {
            seeds.push((0..d).map(|j| rng.random_range(self.lo[j]..=self.hi[j])).collect());
        }
        let mut scored: Vec<(f64, usize)> = seeds.iter().enumerate().map(|(i, s)| (self.cond.gain(s), i)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut best: Option<(f64, Vec<f64>)> = None;
        for &(g0, i) in scored.iter().take(self.cfg.restarts) {
            let (g, z) = self.descend(seeds[i].clone(), g0);
            if best.as_ref().is_none_or(|(bg, _)| g > *bg) {
                best = Some((g, z));
            }
        }
        best.map(|(_, z)| z).unwrap_or_else(|| theta.to_vec())
    }

    fn descend(&self, mut z: Vec<f64>, mut gain: f64) -> (f64, Vec<f64>) {
        let theta = self.cond.theta;
        let d = z.len();
        let mut step: Vec<f64> = (0..d)
            .map(|j| 0.25 * (z[j] - theta[j]).abs().max(self.axis_offset * self.lengthscales[j]))
            .collect();
        let mut trials = 0;
        let mut j = 0;
        while trials < self.cfg.local_steps {
            let mut moved = false;
            for sign in [1.0, -1.0] {
                if trials >= self.cfg.local_steps {
                    break;
                }
                let mut cand = z.clone();
                cand[j] += sign * step[j];
                self.clamp(&mut cand);
                trials += 1;
                let g = self.cond.gain(&cand);
                if g > gain {
                    gain = g;
                    z = cand;
                    moved = true;
                    break;
                }
            }
            if !moved {
                step[j] *= 0.5;
            }
            j = (j + 1) % d;
        }
        (gain, z)
    }

    fn extend_to(&mut self, b: usize, stop_below: Option<f64>) {
        while self.points.len() < b {
            if let (Some(eps), Some(&t)) = (stop_below, self.traces.last()) {
                if t <= eps {
                    return;
                }
            }
            let z = self.next_point();
            self.cond.push(&z);
            self.points.push(z);
            self.traces.push(self.cond.trace());
        }
    }
}

fn finish(points: Vec<Vec<f64>>, trace: f64, hit_cap: bool) -> BatchProposal {
    BatchProposal {
        batch_size_used: points.len(),
        points,
        achieved_trace: trace,
        hit_cap,
    }
}

fn better(a: (f64, Vec<Vec<f64>>), b: Option<(f64, Vec<Vec<f64>>)>) -> (f64, Vec<Vec<f64>>) {
    match b {
        Some(b) if b.0 < a.0 => b,
        _ => a,
    }
}

/// Batch of exactly `b` points that drives the posterior gradient trace at θ
/// down as far as the search can find.
pub fn minimize_batch<R: Rng + ?Sized>(
    surrogate: &GpSurrogate,
    design: &[Vec<f64>],
    theta: &[f64],
    b: usize,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if b == 0 {
        return Err(invalid("batch size must be ≥ 1"));
    }
    let fixed = AcquisitionConfig {
        fixed_batch: Some(b),
        b_max: cfg.b_max.max(b),
        ..cfg.clone()
    };
    Ok(select_minimal_batch(surrogate, design, theta, &fixed, rng)?.points)
}

/// Smallest batch whose addition brings the posterior gradient trace at θ to
/// at most `cfg.epsilon`, capped at `cfg.b_max`. With `cfg.fixed_batch` set,
/// the best batch of exactly that size is returned instead.
pub fn select_minimal_batch<R: Rng + ?Sized>(
    surrogate: &GpSurrogate,
    design: &[Vec<f64>],
    theta: &[f64],
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<BatchProposal> {
    surrogate.kernel.check_dim(theta.len())?;
    let fact = surrogate.factorize(design)?;
    select_minimal_batch_with(surrogate, &fact, theta, cfg, rng)
}

/// As [`select_minimal_batch`], reusing a factorization of the current design.
pub fn select_minimal_batch_with<R: Rng + ?Sized>(
    surrogate: &GpSurrogate,
    fact: &GramFactorization,
    theta: &[f64],
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<BatchProposal> {
    cfg.validate()?;
    surrogate.kernel.check_dim(theta.len())?;
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(invalid("θ must be finite"));
    }
    if fact.points().first().is_some_and(|p| p.len() != theta.len()) {
        return Err(invalid("design and θ have different dimensions"));
    }
    let seed: u64 = rng.random();
    let base = Conditioner::new(surrogate, Some(fact), theta);
    let noisy = surrogate.noise_variance > 0.0;
    let eps = cfg.epsilon;

    if let Some(b) = cfg.fixed_batch {
        let stencils = StencilSearch::new(&base, &surrogate.kernel, cfg.search_radius, b, noisy);
        let mut greedy = Greedy::new(&base, cfg, seed);
        greedy.extend_to(b, None);
        let g = (*greedy.traces.last().unwrap_or(&base.trace()), greedy.points);
        let s = if stencils.max_len() >= b { stencils.refine(b) } else { None };
        let (t, pts) = better(g, s);
        return Ok(finish(pts, t, t > eps));
    }

    let start = base.trace();
    if start <= eps {
        return Ok(finish(Vec::new(), start, false));
    }

    let stencils = StencilSearch::new(&base, &surrogate.kernel, cfg.search_radius, cfg.b_max, noisy);
    let mut stencil_hit = None;
    for b in 1..=stencils.max_len() {
        if stencils.grid_best(b).is_some_and(|(t, _, _)| t <= 2.0 * eps) {
            if let Some((t, pts)) = stencils.refine(b) {
                if t <= eps {
                    stencil_hit = Some((t, pts));
                    break;
                }
            }
        }
    }

    let greedy_limit = stencil_hit.as_ref().map_or(cfg.b_max, |(_, p)| p.len() - 1);
    let mut greedy = Greedy::new(&base, cfg, seed);
    greedy.extend_to(greedy_limit, Some(eps));
    if let Some(&t) = greedy.traces.last() {
        if t <= eps {
            return Ok(finish(greedy.points, t, false));
        }
    }
    if let Some((t, pts)) = stencil_hit {
        return Ok(finish(pts, t, false));
    }

    let g = (*greedy.traces.last().unwrap_or(&start), greedy.points);
    let s = if stencils.max_len() > 0 { stencils.refine(stencils.max_len()) } else { None };
    let (t, pts) = better(g, s);
    warn!(
        "batch cap {} reached with gradient trace {t:e} above target {eps:e}",
        cfg.b_max
    );
    Ok(finish(pts, t, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rbf(noise: f64) -> GpSurrogate {
        GpSurrogate::new(Kernel::rbf(1.0).unwrap(), noise).unwrap()
    }

    fn random_point(rng: &mut impl Rng, d: usize, half: f64) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-half..half)).collect()
    }

    fn fd_bound(d: usize, sigma2: f64, m: usize) -> f64 {
        // Forward-difference bound for the isotropic RBF with m replicates of
        // θ ± h e_j: φ(x) = exp(−‖x‖²/2), ∂²φ(0) = −1.
        let h = (sigma2 / m as f64).powf(0.25);
        let dphi = h * (-h * h / 2.0).exp();
        let phi_2h = (-2.0 * h * h).exp();
        let per = 1.0 - 2.0 * dphi * dphi / ((1.0 - phi_2h) + sigma2 / m as f64);
        d as f64 * per
    }

    #[test]
    fn empty_everything_has_zero_value() {
        let s = rbf(0.0);
        assert_eq!(acquisition_value(&s, &[], &[], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn value_links_to_posterior_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for family in [KernelFamily::Rbf, KernelFamily::Matern52, KernelFamily::PolynomialDeg2] {
            let s = GpSurrogate::new(Kernel::isotropic(family, 1.0).unwrap(), 0.01).unwrap();
            for _ in 0..10 {
                let theta = random_point(&mut rng, 3, 1.0);
                let design: Vec<_> = (0..4).map(|_| random_point(&mut rng, 3, 1.5)).collect();
                let z: Vec<_> = (0..3).map(|_| random_point(&mut rng, 3, 1.5)).collect();
                let all: Vec<_> = design.iter().chain(&z).cloned().collect();
                let post = crate::gp::posterior_gradient_covariance(&s.kernel, &all, 0.01, &theta).unwrap().trace();
                let prior = s.kernel.cross_hessian(&theta, &theta).unwrap().trace();
                let alpha = acquisition_value(&s, &design, &z, &theta).unwrap();
                assert!((prior + alpha - post).abs() <= 1e-8 * prior.max(post.abs()));
            }
        }
    }

    #[test]
    fn more_points_never_raise_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = rbf(0.02);
        for _ in 0..20 {
            let theta = random_point(&mut rng, 2, 1.0);
            let mut z: Vec<_> = (0..3).map(|_| random_point(&mut rng, 2, 1.5)).collect();
            let before = acquisition_value(&s, &[], &z, &theta).unwrap();
            z.push(random_point(&mut rng, 2, 1.5));
            let after = acquisition_value(&s, &[], &z, &theta).unwrap();
            assert!(after <= before + 1e-10);
        }
    }

    #[test]
    fn conditioner_matches_batch_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = GpSurrogate::new(Kernel::isotropic(KernelFamily::Matern72, 0.8).unwrap(), 0.05).unwrap();
        let theta = vec![0.1, -0.2, 0.3];
        let design: Vec<_> = (0..5).map(|_| random_point(&mut rng, 3, 1.0)).collect();
        let fact = s.factorize(&design).unwrap();
        let mut c = Conditioner::new(&s, Some(&fact), &theta);
        let mut all = design.clone();
        for _ in 0..4 {
            let z = random_point(&mut rng, 3, 1.0);
            assert!(c.push(&z));
            all.push(z);
        }
        let direct = s.gradient_covariance(&all, &theta).unwrap().trace();
        assert!((c.trace() - direct).abs() <= 1e-9);
    }

    #[test]
    fn one_dimensional_pair_brackets_theta() {
        let s = rbf(0.0);
        let cfg = AcquisitionConfig::new(1e-6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = minimize_batch(&s, &[], &[0.3], 2, &cfg, &mut rng).unwrap();
        assert_eq!(pts.len(), 2);
        let trace = s.gradient_covariance(&pts, &[0.3]).unwrap().trace();
        assert!(trace <= 1e-6, "trace {trace}");
        let lo = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= 0.3 && hi >= 0.3);
    }

    #[test]
    fn noisy_axis_batch_is_near_difference_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(d, sigma2) in &[(2usize, 0.01), (3, 0.1), (3, 1.0)] {
            let s = rbf(sigma2);
            let cfg = AcquisitionConfig::new(1e-9, d);
            let theta = vec![0.0; d];
            let pts = minimize_batch(&s, &[], &theta, 2 * d, &cfg, &mut rng).unwrap();
            let trace = s.gradient_covariance(&pts, &theta).unwrap().trace();
            let bound = fd_bound(d, sigma2, 1);
            assert!(trace <= 1.5 * bound, "d={d} σ²={sigma2}: {trace} vs {bound}");
        }
    }

    #[test]
    fn greedy_beats_replicating_the_best_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = rbf(0.1);
        let theta = vec![0.0, 0.0];
        let cfg = AcquisitionConfig::new(1e-3, 2);
        let batch = minimize_batch(&s, &[], &theta, 3, &cfg, &mut rng).unwrap();
        let single = minimize_batch(&s, &[], &theta, 1, &cfg, &mut rng).unwrap();
        let copies = vec![single[0].clone(); 3];
        let a_batch = acquisition_value(&s, &[], &batch, &theta).unwrap();
        let a_copies = acquisition_value(&s, &[], &copies, &theta).unwrap();
        assert!(a_batch <= a_copies + 1e-12);
    }

    #[test]
    fn batch_stays_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = GpSurrogate::new(Kernel::new(KernelFamily::Rbf, vec![0.5, 2.0], 1.0).unwrap(), 0.3).unwrap();
        let mut cfg = AcquisitionConfig::new(1e-3, 2);
        cfg.search_radius = 0.7;
        let theta = [1.0, -1.0];
        for p in minimize_batch(&s, &[], &theta, 5, &cfg, &mut rng).unwrap() {
            assert!((p[0] - 1.0).abs() <= 0.35 + 1e-12);
            assert!((p[1] + 1.0).abs() <= 1.4 + 1e-12);
        }
    }

    #[test]
    fn minimal_batch_noiseless_is_small() {
        for d in 1..=3 {
            let s = rbf(0.0);
            let cfg = AcquisitionConfig::new(1e-6, d);
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            let theta: Vec<f64> = (0..d).map(|j| 0.1 * j as f64).collect();
            let prop = select_minimal_batch(&s, &[], &theta, &cfg, &mut rng).unwrap();
            assert!(prop.batch_size_used <= d + 1, "d={d}: {}", prop.batch_size_used);
            assert!(prop.achieved_trace <= 1e-6);
            assert!(!prop.hit_cap);
            let check = s.gradient_covariance(&prop.points, &theta).unwrap().trace();
            assert!(check <= 1e-6, "recomputed {check}");
        }
    }

    #[test]
    fn satisfied_design_needs_no_points() {
        let s = rbf(0.0);
        let theta = [0.2, 0.1];
        let mut cfg = AcquisitionConfig::new(1e-6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = select_minimal_batch(&s, &[], &theta, &cfg, &mut rng).unwrap();
        cfg.epsilon = 1e-5;
        let again = select_minimal_batch(&s, &first.points, &theta, &cfg, &mut rng).unwrap();
        assert_eq!(again.batch_size_used, 0);
        assert!(again.points.is_empty());
        assert!(!again.hit_cap);
    }

    #[test]
    fn cap_is_reported() {
        let s = rbf(1.0);
        let mut cfg = AcquisitionConfig::new(1e-8, 2);
        cfg.b_max = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prop = select_minimal_batch(&s, &[], &[0.0, 0.0], &cfg, &mut rng).unwrap();
        assert!(prop.hit_cap);
        assert_eq!(prop.batch_size_used, 3);
        assert!(prop.achieved_trace > 1e-8);
    }

    #[test]
    fn selection_is_deterministic() {
        let s = rbf(0.05);
        let cfg = AcquisitionConfig::new(0.05, 3);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            select_minimal_batch(&s, &[], &[0.0, 0.5, -0.5], &cfg, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn carried_design_needs_no_more_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let s = rbf(0.01);
            let cfg = AcquisitionConfig::new(0.2, 2);
            let theta = random_point(&mut rng, 2, 1.0);
            let first = select_minimal_batch(&s, &[], &theta, &cfg, &mut rng).unwrap();
            let near: Vec<f64> = theta.iter().map(|t| t + rng.random_range(-0.05..0.05)).collect();
            let fresh = select_minimal_batch(&s, &[], &near, &cfg, &mut rng).unwrap();
            let carried = select_minimal_batch(&s, &first.points, &near, &cfg, &mut rng).unwrap();
            assert!(carried.batch_size_used <= fresh.batch_size_used);
        }
    }

    #[test]
    fn axis_design_trace_scales_with_replicates() {
        let s = rbf(1.0);
        let theta = vec![0.0; 3];
        let mut prev = f64::INFINITY;
        for m in [1usize, 4, 16, 64] {
            let h = (1.0 / m as f64).powf(0.25);
            let pts = axis_pair_design(&theta, h, m);
            assert_eq!(pts.len(), 6 * m);
            let t = s.gradient_covariance(&pts, &theta).unwrap().trace();
            assert!(t < prev);
            assert!(t * (m as f64).sqrt() / 3.0 <= 3.0);
            prev = t;
        }
    }

    #[test]
    fn config_validation() {
        let mut c = AcquisitionConfig::new(0.1, 2);
        assert!(c.validate().is_ok());
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
        let mut c = AcquisitionConfig::new(0.1, 2);
        c.b_max = 0;
        assert!(c.validate().is_err());
    }
}
