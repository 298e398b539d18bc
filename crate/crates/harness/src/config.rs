//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "example"
//! seeds = [0, 1, 2]
//! output_dir = "results"
//! budget = "iterations"          # or "matched_evaluations"
//!
//! [problem]
//! kind = "normal_location"       # huber | gp_tuning | svm_surrogate
//! n = 50
//! d = 5
//!
//! [[method]]
//! name = "gibo"
//! kind = "dp_gibo"               # dp_gd | random_search
//! iterations = 100
//! step_size = 0.1
//! mu = 2.0                       # 0 = non-private
//! clip_bound = 1.0               # inf allowed when non-private
//! kernel = { family = "poly2", lengthscale = 1.0 }
//! epsilon = 1e-6
//! fixed_batch = 3                # or "d+1"
//! ```

use std::path::PathBuf;

use dpgibo::acquisition::AcquisitionConfig;
use dpgibo::optimizer::{OptimizerConfig, StepRule};
use dpgibo::problems::{
    gp_lengthscale_tuning_problem, huber_regression_problem, noisy_wrapper, normal_location_problem,
    svm_surrogate_problem, uniform_in, Problem,
};
use dpgibo::rng::{stream_rng, Stream};
use dpgibo::{Kernel, KernelFamily};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub budget: BudgetMode,
    /// Repeat the experiment at each of these dimensions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    pub problem: ProblemSpec,
    #[serde(rename = "method")]
    pub methods: Vec<MethodSpec>,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Every method runs its own configured length.
    #[default]
    Iterations,
    /// Random search without an explicit budget gets the evaluations spent
    /// by the first Bayesian-optimization method on the same seed.
    MatchedEvaluations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    NormalLocation,
    Huber,
    GpTuning,
    SvmSurrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_total: Option<usize>,
    /// Every coordinate of the true parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<f64>,
    /// Huber threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Standard deviation of extra Gaussian noise on every evaluation.
    #[serde(default)]
    pub noise_lambda: f64,
    /// Fixed data seed; by default each run seed draws its own data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    DpGibo,
    DpGd,
    RandomSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRuleSpec {
    PlainGd,
    Adagrad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: String,
    #[serde(default = "one")]
    pub lengthscale: f64,
    #[serde(default = "one")]
    pub output_scale: f64,
}

fn one() -> f64 {
    1.0
}

/// A count given directly or as `"d+k"` / `"2d+k"` relative to the dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimCount {
    Fixed(usize),
    Relative(String),
}

impl DimCount {
    pub fn resolve(&self, d: usize) -> Result<usize, HarnessError> {
        match self {
            DimCount::Fixed(n) => Ok(*n),
            DimCount::Relative(expr) => {
                let e: String = expr.chars().filter(|c| !c.is_whitespace()).collect();
                let (mult, rest) = match e.split_once('d') {
                    Some(("", rest)) => (1, rest),
                    Some((m, rest)) => (m.parse::<usize>().map_err(|_| bad_count(expr))?, rest),
                    None => return Err(bad_count(expr)),
                };
                let add = match rest {
                    "" => 0,
                    r => r
                        .strip_prefix('+')
                        .and_then(|k| k.parse::<usize>().ok())
                        .ok_or_else(|| bad_count(expr))?,
                };
                Ok(mult * d + add)
            }
        }
    }
}

fn bad_count(expr: &str) -> HarnessError {
    HarnessError::Config(format!("cannot read count {expr:?}; use an integer, \"d+k\" or \"md+k\""))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta0Spec {
    Named(String),
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub kind: MethodKind,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_rule")]
    pub step_rule: StepRuleSpec,
    #[serde(default = "one")]
    pub clip_bound: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    /// Noise standard deviation assumed by the surrogate.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_max: Option<DimCount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_batch: Option<DimCount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_seed_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_design_points: Option<usize>,
    /// `"zero"`, `"uniform"` (over the problem box), a scalar, or a vector.
    #[serde(default = "default_theta0")]
    pub theta0: Theta0Spec,
    /// Random search only: evaluation budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_evals: Option<u64>,
    /// Random search only: spend what this method spent on the same seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_evaluations: Option<String>,
}

fn default_iterations() -> usize {
    50
}
fn default_step() -> f64 {
    0.1
}
fn default_rule() -> StepRuleSpec {
    StepRuleSpec::PlainGd
}
fn default_epsilon() -> f64 {
    1e-3
}
fn default_theta0() -> Theta0Spec {
    Theta0Spec::Named("zero".into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configs always serialize")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.name.trim().is_empty() {
            return err("experiment name is empty".into());
        }
        if self.seeds.is_empty() {
            return err("at least one seed is required".into());
        }
        if self.methods.is_empty() {
            return err("at least one [[method]] is required".into());
        }
        if self.dims.as_ref().is_some_and(|d| d.is_empty() || d.contains(&0)) {
            return err("dims must be a nonempty list of positive integers".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.methods {
            if !names.insert(m.name.as_str()) {
                return err(format!("duplicate method name {:?}", m.name));
            }
            if m.name.is_empty() || m.name.contains(['/', '\\']) {
                return err(format!("method name {:?} is not usable as a directory", m.name));
            }
        }
        for m in &self.methods {
            if let Some(target) = &m.match_evaluations {
                let ok = self
                    .methods
                    .iter()
                    .any(|o| &o.name == target && o.kind != MethodKind::RandomSearch);
                if !ok {
                    return err(format!("{}: match_evaluations names unknown method {target:?}", m.name));
                }
            }
            if !(m.mu >= 0.0 && m.mu.is_finite()) {
                return err(format!("{}: mu must be ≥ 0 (0 = non-private)", m.name));
            }
            if !(m.clip_bound > 0.0) || (m.mu > 0.0 && m.clip_bound.is_infinite()) {
                return err(format!("{}: clip_bound must be > 0, and finite when mu > 0", m.name));
            }
            if m.kind == MethodKind::DpGibo && m.kernel.is_none() {
                return err(format!("{}: a kernel is required", m.name));
            }
        }
        for d in self.dimensions() {
            self.problem.validate(d)?;
            for m in &self.methods {
                if m.kind != MethodKind::RandomSearch {
                    m.optimizer_config(d, vec![0.0; d], 0)?.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Dimensions to run: `dims` when given, otherwise the problem's `d`.
    pub fn dimensions(&self) -> Vec<usize> {
        self.dims.clone().unwrap_or_else(|| vec![self.problem.d])
    }

    pub fn seed_override(&mut self, seeds: Vec<u64>) {
        self.seeds = seeds;
    }
}

impl ProblemSpec {
    fn validate(&self, d: usize) -> Result<(), HarnessError> {
        let need = |what: &str, v: Option<usize>| {
            v.map(|_| ())
                .ok_or_else(|| HarnessError::Config(format!("problem {:?} needs `{what}`", self.kind)))
        };
        match self.kind {
            ProblemKind::NormalLocation | ProblemKind::Huber => need("n", self.n)?,
            ProblemKind::GpTuning => need("n_total", self.n_total)?,
            ProblemKind::SvmSurrogate if d < 4 => {
                return Err(HarnessError::Config("svm_surrogate needs d ≥ 4".into()));
            }
            ProblemKind::SvmSurrogate => {}
        }
        if !(self.noise_lambda >= 0.0 && self.noise_lambda.is_finite()) {
            return Err(HarnessError::Config("noise_lambda must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Builds the problem for run seed `seed` at dimension `d`.
    pub fn build(&self, d: usize, seed: u64) -> Result<Box<dyn Problem>, HarnessError> {
        self.validate(d)?;
        let data_seed = self.data_seed.unwrap_or(seed);
        let star = vec![self.theta_star.unwrap_or(1.0); d];
        let base: Box<dyn Problem> = match self.kind {
            ProblemKind::NormalLocation => Box::new(normal_location_problem(self.n.unwrap_or(0), d, &star, data_seed)?),
            ProblemKind::Huber => Box::new(huber_regression_problem(
                self.n.unwrap_or(0),
                d,
                &star,
                self.c.unwrap_or(1.0),
                data_seed,
            )?),
            ProblemKind::GpTuning => Box::new(gp_lengthscale_tuning_problem(d, self.n_total.unwrap_or(0), data_seed)?),
            ProblemKind::SvmSurrogate => Box::new(svm_surrogate_problem(d, data_seed)?),
        };
        if self.noise_lambda > 0.0 {
            Ok(Box::new(noisy_wrapper(base, self.noise_lambda)?))
        } else {
            Ok(base)
        }
    }
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel, HarnessError> {
        let family = KernelFamily::parse(&self.family)?;
        Ok(Kernel::new(family, vec![self.lengthscale], self.output_scale)?)
    }
}

impl MethodSpec {
    /// Starting point for `seed`, drawn from its own stream when uniform.
    pub fn theta0(&self, problem: &dyn Problem, seed: u64) -> Result<Vec<f64>, HarnessError> {
        let d = problem.dimension();
        match &self.theta0 {
            Theta0Spec::Named(s) if s == "zero" => Ok(vec![0.0; d]),
            Theta0Spec::Named(s) if s == "uniform" => {
                let mut rng = stream_rng(seed, Stream::Init, 0);
                Ok(uniform_in(problem.domain(), &mut rng))
            }
            Theta0Spec::Named(s) => Err(HarnessError::Config(format!(
                "{}: theta0 {s:?} is not \"zero\", \"uniform\", a number or a list",
                self.name
            ))),
            Theta0Spec::Scalar(x) => Ok(vec![*x; d]),
            Theta0Spec::Vector(v) if v.len() == d => Ok(v.clone()),
            Theta0Spec::Vector(v) => Err(HarnessError::Config(format!(
                "{}: theta0 has {} entries, problem has dimension {d}",
                self.name,
                v.len()
            ))),
        }
    }

    pub fn optimizer_config(&self, d: usize, theta0: Vec<f64>, seed: u64) -> Result<OptimizerConfig, HarnessError> {
        let kernel = match &self.kernel {
            Some(k) => k.build()?,
            // Gradient descent never touches the surrogate.
            None => Kernel::rbf(1.0)?,
        };
        let mut acq = AcquisitionConfig::new(self.epsilon, d);
        if let Some(b) = &self.b_max {
            acq.b_max = b.resolve(d)?;
        }
        if let Some(b) = &self.fixed_batch {
            acq.fixed_batch = Some(b.resolve(d)?);
        }
        if let Some(r) = self.search_radius {
            acq.search_radius = r;
        }
        if let Some(r) = self.restarts {
            acq.restarts = r;
        }
        if let Some(s) = self.local_steps {
            acq.local_steps = s;
        }
        if let Some(c) = self.candidate_seed_count {
            acq.candidate_seed_count = c;
        }
        let mut cfg = OptimizerConfig::new(theta0, kernel, acq);
        cfg.iterations = self.iterations;
        cfg.step_size = self.step_size;
        cfg.step_rule = match self.step_rule {
            StepRuleSpec::PlainGd => StepRule::PlainGd,
            StepRuleSpec::Adagrad => StepRule::adagrad(),
        };
        cfg.clip_bound = self.clip_bound;
        cfg.mu = self.mu;
        cfg.noise_variance = self.noise_sigma * self.noise_sigma;
        cfg.seed = seed;
        cfg.max_design_points = self.max_design_points;
        Ok(cfg)
    }
}
