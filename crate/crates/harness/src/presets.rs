//! Named experiment configurations shipped with the binary.

use crate::config::{ExperimentConfig, ProblemKind};
use crate::error::HarnessError;

const PRESETS: &[(&str, &str)] = &[
    ("normal_location", include_str!("../presets/normal_location.toml")),
    ("huber_vs_dpgd", include_str!("../presets/huber_vs_dpgd.toml")),
    ("gp_tuning_eps_sweep", include_str!("../presets/gp_tuning_eps_sweep.toml")),
    ("gp_tuning_mu_sweep", include_str!("../presets/gp_tuning_mu_sweep.toml")),
    ("gp_tuning_sigma_sweep", include_str!("../presets/gp_tuning_sigma_sweep.toml")),
    ("noisy_sigma_misspec", include_str!("../presets/noisy_sigma_misspec.toml")),
    ("svm_surrogate", include_str!("../presets/svm_surrogate.toml")),
    ("dim_scaling", include_str!("../presets/dim_scaling.toml")),
];

/// Sample size used for the GP-tuning data under `--paper-scale`.
pub const FULL_SCALE_N_TOTAL: usize = 2000;

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn source(name: &str) -> Result<&'static str, HarnessError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| HarnessError::Config(format!("unknown preset {name:?}; available: {}", names().join(", "))))
}

/// The named preset. `full_scale` switches the GP-tuning data to
/// [`FULL_SCALE_N_TOTAL`] points.
pub fn load(name: &str, full_scale: bool) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_toml(source(name)?)?;
    if full_scale && cfg.problem.kind == ProblemKind::GpTuning {
        cfg.problem.n_total = Some(FULL_SCALE_N_TOTAL);
    }
    Ok(cfg)
}
