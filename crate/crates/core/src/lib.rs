//! Differentially private gradient-informed local Bayesian optimization.
//!
//! A GP surrogate fitted to every user's loss evaluations yields a posterior
//! over the gradient at the current iterate. Each iteration spends evaluations
//! until that posterior is tight enough, then clips the per-user posterior
//! mean gradients, averages them, and adds Gaussian noise calibrated to a
//! Gaussian-DP budget.

pub mod acquisition;
mod error;
pub mod gp;
pub mod gram;
pub mod kernel;
pub mod optimizer;
pub mod privacy;
pub mod problems;
pub mod record;
pub mod rng;

pub use acquisition::{
    acquisition_value, axis_pair_design, minimize_batch, select_minimal_batch, select_minimal_batch_with,
    AcquisitionConfig, BatchProposal,
};
pub use error::{Error, Result};
pub use gp::{
    aggregate_mean_gradient, posterior_gradient_covariance, posterior_gradient_means, EvaluationSet,
    GpSurrogate, GradientPosterior,
};
pub use gram::{gram_factorize, gram_factorize_with, CholeskyFactor, GramFactorization, JitterPolicy};
pub use kernel::{kernel_cross_hessian, kernel_eval, kernel_grad_first, Kernel, KernelFamily};
pub use privacy::{
    clip, clip_aggregate, gaussian_mechanism_scale, gdp_compose, max_noise_envelope, privatize_gradient,
    NoisyGradient, PrivacyBudget,
};
pub use rng::{stream_rng, Stream};
pub use optimizer::{dp_gibo_run, step_update, OptimizerConfig, StepRule, StepState};
pub use problems::{dp_gd_baseline, random_search_baseline, Problem};
pub use record::{IterationRow, RunRecord, RunStatus};
