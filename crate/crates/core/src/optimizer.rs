//! The main loop: pick a batch, query every user there, estimate per-user
//! gradients from the GP posterior, privatize their clipped mean and step.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::DMatrix;

use crate::acquisition::{select_minimal_batch_with, AcquisitionConfig};
use crate::error::{invalid, Result};
use crate::gp::{EvaluationSet, GpSurrogate};
use crate::gram::JitterPolicy;
use crate::kernel::Kernel;
use crate::privacy::{privatize_gradient, PrivacyBudget};
use crate::problems::{evaluate_users, Problem};
use crate::record::{IterationRow, RunRecord, RunStatus};
use crate::rng::{stream_rng, Stream};

pub const ADAGRAD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    PlainGd,
    /// Per-coordinate steps scaled by the root of the accumulated squared
    /// (privatized) gradients plus `floor`.
    AdaGrad { floor: f64 },
}

impl StepRule {
    pub fn adagrad() -> Self {
        StepRule::AdaGrad { floor: ADAGRAD_FLOOR }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepState {
    accumulator: Vec<f64>,
}

impl StepState {
    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }
}

/// One descent step from `theta` along `grad`.
pub fn step_update(theta: &[f64], grad: &[f64], state: &mut StepState, rule: StepRule, step_size: f64) -> Vec<f64> {
    match rule {
        StepRule::PlainGd => theta.iter().zip(grad).map(|(t, g)| t - step_size * g).collect(),
        StepRule::AdaGrad { floor } => {
            if state.accumulator.len() != theta.len() {
                state.accumulator = vec![0.0; theta.len()];
            }
            theta
                .iter()
                .zip(grad)
                .zip(state.accumulator.iter_mut())
                .map(|((t, g), acc)| {
                    *acc += g * g;
                    t - step_size * g / (*acc + floor).sqrt()
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub step_rule: StepRule,
    pub theta0: Vec<f64>,
    pub clip_bound: f64,
    /// Total GDP budget; 0 runs without privacy noise.
    pub mu: f64,
    /// Observation noise variance assumed by the surrogate.
    pub noise_variance: f64,
    pub kernel: Kernel,
    pub acquisition: AcquisitionConfig,
    pub seed: u64,
    /// Keep only this many most recent design points.
    pub max_design_points: Option<usize>,
    pub jitter: JitterPolicy,
}

impl OptimizerConfig {
    pub fn new(theta0: Vec<f64>, kernel: Kernel, acquisition: AcquisitionConfig) -> Self {
        OptimizerConfig {
            iterations: 50,
            step_size: 0.1,
            step_rule: StepRule::PlainGd,
            theta0,
            clip_bound: 1.0,
            mu: 0.0,
            noise_variance: 0.0,
            kernel,
            acquisition,
            seed: 0,
            max_design_points: None,
            jitter: JitterPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("at least one iteration is required"));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(invalid(format!("step size must be ≥ 0, got {}", self.step_size)));
        }
        if self.theta0.iter().any(|x| !x.is_finite()) {
            return Err(invalid("θ0 must be finite"));
        }
        if let StepRule::AdaGrad { floor } = self.step_rule {
            if !(floor > 0.0) {
                return Err(invalid("the AdaGrad floor must be > 0"));
            }
        }
        if self.max_design_points == Some(0) {
            return Err(invalid("the design cap must be ≥ 1"));
        }
        self.kernel.check_dim(self.theta0.len())?;
        self.acquisition.validate()
    }
}

/// What a gradient source hands back for one iteration.
pub(crate) struct GradientEstimate {
    pub per_user: DMatrix<f64>,
    pub batch_size: usize,
    pub evaluations: u64,
    pub trace: Option<f64>,
    pub hit_cap: bool,
}

/// Shared clip, noise and step machinery for every gradient-based method.
pub(crate) fn descent_loop(
    problem: &dyn Problem,
    cfg: &OptimizerConfig,
    method: &str,
    mut source: impl FnMut(usize, &[f64]) -> Result<GradientEstimate>,
) -> RunRecord {
    let start = Instant::now();
    let mut record = RunRecord::new(method, cfg.theta0.clone(), problem.true_loss(&cfg.theta0), cfg.mu);
    let fail = |mut record: RunRecord, msg: String| {
        warn!("{method} failed: {msg}");
        record.status = RunStatus::Failed(msg);
        record.wall_time = start.elapsed().as_secs_f64();
        record
    };
    if let Err(e) = cfg.validate() {
        return fail(record, e.to_string());
    }
    if cfg.theta0.len() != problem.dimension() {
        return fail(
            record,
            format!("θ0 has dimension {}, problem has {}", cfg.theta0.len(), problem.dimension()),
        );
    }
    let n = problem.user_count();
    let mut budget = match PrivacyBudget::new(cfg.mu, cfg.iterations, cfg.clip_bound, n) {
        Ok(b) => b,
        Err(e) => return fail(record, e.to_string()),
    };
    let mut theta = cfg.theta0.clone();
    let mut state = StepState::default();
    let mut evaluations = 0u64;
    let mut warned_outside = false;

    for t in 1..=cfg.iterations {
        let est = match source(t, &theta) {
            Ok(e) => e,
            Err(e) => return fail(record, format!("iteration {t}: {e}")),
        };
        let mut rng = stream_rng(cfg.seed, Stream::PrivacyNoise, t as u64);
        let noisy = match privatize_gradient(&est.per_user, &mut budget, &mut rng) {
            Ok(g) => g,
            Err(e) => return fail(record, format!("iteration {t}: {e}")),
        };
        let bias_norm = problem.true_gradient(&theta).map(|g| {
            g.iter()
                .zip(noisy.clipped_aggregate.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        });
        theta = step_update(&theta, noisy.value.as_slice(), &mut state, cfg.step_rule, cfg.step_size);
        if theta.iter().any(|x| !x.is_finite()) {
            record.ledger = budget.ledger().to_vec();
            return fail(record, format!("iteration {t}: the iterate is no longer finite"));
        }
        if !warned_outside && theta.iter().zip(problem.domain()).any(|(x, &(lo, hi))| *x < lo || *x > hi) {
            warn!("{method}: iterate left the domain box at iteration {t}");
            warned_outside = true;
        }
        evaluations += est.evaluations;
        record.rows.push(IterationRow {
            t,
            loss: problem.true_loss(&theta),
            theta: theta.clone(),
            batch_size: est.batch_size,
            cumulative_evaluations: evaluations,
            trace: est.trace,
            grad_norm: Some(noisy.clipped_aggregate.norm()),
            noise_norm: Some(noisy.noise.norm()),
            bias_norm,
            mu_consumed: budget.consumed(),
            hit_cap: est.hit_cap,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    record.ledger = budget.ledger().to_vec();
    record.wall_time = start.elapsed().as_secs_f64();
    record
}

/// Differentially private gradient-informed Bayesian optimization.
pub fn dp_gibo_run(problem: &dyn Problem, cfg: &OptimizerConfig) -> RunRecord {
    let declared = cfg.noise_variance.sqrt();
    if (declared - problem.evaluation_noise()).abs() > 1e-12 {
        debug!(
            "surrogate noise σ = {declared:e} differs from the problem's evaluation noise {:e}",
            problem.evaluation_noise()
        );
    }
    let setup = GpSurrogate::new(cfg.kernel.clone(), cfg.noise_variance)
        .map(|s| s.with_jitter(cfg.jitter))
        .and_then(|s| {
            let ev = EvaluationSet::new(problem.user_count(), cfg.noise_variance)?;
            let fact = s.factorize(&[])?;
            Ok((s, ev, fact))
        });
    let (surrogate, mut ev, mut fact) = match setup {
        Ok(x) => x,
        Err(e) => {
            let mut r = RunRecord::new("dp_gibo", cfg.theta0.clone(), problem.true_loss(&cfg.theta0), cfg.mu);
            r.status = RunStatus::Failed(e.to_string());
            return r;
        }
    };
    let n = problem.user_count() as u64;
    let mut warned_cap = false;

    descent_loop(problem, cfg, "dp_gibo", |t, theta| {
        let mut arng = stream_rng(cfg.seed, Stream::Acquisition, t as u64);
        let proposal = select_minimal_batch_with(&surrogate, &fact, theta, &cfg.acquisition, &mut arng)?;

        let mut erng = stream_rng(cfg.seed, Stream::Evaluation, t as u64);
        let mut refactor = false;
        for z in &proposal.points {
            let y = evaluate_users(problem, z, &mut erng);
            if ev.append(z.clone(), y)? && !fact.try_extend(&surrogate.kernel, z) && cfg.noise_variance > 0.0 {
                refactor = true;
            }
        }
        if let Some(cap) = cfg.max_design_points {
            if ev.len() > cap {
                if !warned_cap {
                    warn!("design cap {cap} reached; discarding the oldest points");
                    warned_cap = true;
                }
                ev.drop_oldest(ev.len() - cap);
                refactor = true;
            }
        }
        if refactor {
            fact = surrogate.factorize(ev.points())?;
        }
        let post = surrogate.posterior_with(&fact, &ev, theta)?;
        Ok(GradientEstimate {
            per_user: post.per_user_means,
            batch_size: proposal.batch_size_used,
            evaluations: n * proposal.batch_size_used as u64,
            trace: Some(post.covariance_trace),
            hit_cap: proposal.hit_cap,
        })
    })
}
