use super::{evaluate_users, uniform_in, Problem};
use crate::error::invalid;
use crate::optimizer::{descent_loop, GradientEstimate, OptimizerConfig};
use crate::record::{IterationRow, RunRecord, RunStatus};
use crate::rng::{stream_rng, Stream};

/// Noisy gradient descent on the exact per-user gradients, through the same
/// clipping, noise and step code as the Bayesian-optimization loop. Each
/// iteration counts one gradient query per user.
pub fn dp_gd_baseline(problem: &dyn Problem, cfg: &OptimizerConfig) -> RunRecord {
    let n = problem.user_count() as u64;
    descent_loop(problem, cfg, "dp_gd", |_, theta| {
        let per_user = problem
            .user_gradients(theta)
            .ok_or_else(|| invalid(format!("{} has no per-user gradient oracle", problem.name())))?;
        Ok(GradientEstimate {
            per_user,
            batch_size: 1,
            evaluations: n,
            trace: None,
            hit_cap: false,
        })
    })
}

/// Uniform random search over the domain. Every configuration costs one
/// evaluation per user; the incumbent is the configuration with the lowest
/// observed mean loss, and rows report its true loss.
pub fn random_search_baseline(problem: &dyn Problem, budget_evals: u64, seed: u64) -> RunRecord {
    let n = problem.user_count() as u64;
    let configurations = (budget_evals / n).max(1);
    let mut rng = stream_rng(seed, Stream::Baseline, 0);
    let mut erng = stream_rng(seed, Stream::Evaluation, 0);
    let start = std::time::Instant::now();

    let mut record = RunRecord::new("random_search", Vec::new(), None, 0.0);
    if budget_evals == 0 {
        record.status = RunStatus::Failed(invalid("random search needs a budget ≥ 1").to_string());
        return record;
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for t in 1..=configurations as usize {
        let theta = uniform_in(problem.domain(), &mut rng);
        let y = evaluate_users(problem, &theta, &mut erng);
        let observed = y.iter().sum::<f64>() / y.len() as f64;
        if t == 1 {
            record.initial_theta = theta.clone();
            record.initial_loss = problem.true_loss(&theta);
        }
        if best.as_ref().is_none_or(|(b, _)| observed < *b) {
            best = Some((observed, theta));
        }
        let incumbent = &best.as_ref().expect("set above").1;
        record.rows.push(IterationRow {
            t,
            theta: incumbent.clone(),
            loss: problem.true_loss(incumbent),
            batch_size: 1,
            cumulative_evaluations: n * t as u64,
            trace: None,
            grad_norm: None,
            noise_norm: None,
            bias_norm: None,
            mu_consumed: 0.0,
            hit_cap: false,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    record.wall_time = start.elapsed().as_secs_f64();
    record
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::AcquisitionConfig;
    use crate::kernel::Kernel;
    use crate::optimizer::StepRule;
    use crate::privacy::clip_aggregate;
    use crate::problems::normal_location_problem;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_configuration_budget() {
        let p = normal_location_problem(10, 2, &[0.0, 0.0], 0).unwrap();
        let r = random_search_baseline(&p, 10, 3);
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.final_theta(), r.initial_theta.as_slice());
        assert_eq!(r.total_evaluations(), 10);
    }

    #[test]
    fn incumbent_loss_never_increases_without_noise() {
        let p = normal_location_problem(10, 3, &[0.0; 3], 1).unwrap();
        let r = random_search_baseline(&p, 2000, 5);
        for w in r.rows.windows(2) {
            assert!(w[1].loss.unwrap() <= w[0].loss.unwrap());
        }
    }

    #[test]
    fn more_budget_helps_in_median() {
        let p = normal_location_problem(5, 2, &[0.0, 0.0], 2).unwrap();
        let median_at = |evals: u64| {
            let mut v: Vec<f64> = (0..20)
                .map(|s| random_search_baseline(&p, evals, s).final_loss().unwrap())
                .collect();
            v.sort_by(f64::total_cmp);
            v[10]
        };
        assert!(median_at(500) < median_at(25));
    }

    #[test]
    fn non_private_gd_contracts_on_quadratic() {
        let p = normal_location_problem(30, 3, &[1.0; 3], 4).unwrap();
        let mut cfg = OptimizerConfig::new(vec![0.0; 3], Kernel::polynomial_deg2(), AcquisitionConfig::new(1e-3, 3));
        cfg.step_rule = StepRule::PlainGd;
        cfg.step_size = 0.2;
        cfg.iterations = 15;
        cfg.clip_bound = f64::INFINITY;
        let r = dp_gd_baseline(&p, &cfg);
        let mean = p.sample_mean();
        let mut prev: f64 = mean.norm();
        for row in &r.rows {
            let dist = row.theta.iter().zip(mean.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((dist - 0.8 * prev).abs() <= 1e-12);
            prev = dist;
        }
    }

    #[test]
    fn shared_aggregate_has_bounded_sensitivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let g = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-4.0..4.0));
            let mut h = g.clone();
            let i = rng.random_range(0..10);
            for j in 0..3 {
                h[(i, j)] = rng.random_range(-4.0..4.0);
            }
            let d = (clip_aggregate(&g, 1.0).unwrap() - clip_aggregate(&h, 1.0).unwrap()).norm();
            assert!(d <= 0.2 + 1e-12);
        }
    }
}
