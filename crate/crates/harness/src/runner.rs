//! Runs every (dimension, seed, method) of an experiment and writes the results.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use dpgibo::{dp_gd_baseline, dp_gibo_run, random_search_baseline, RunRecord, RunStatus};
use serde_json::json;

use crate::config::{BudgetMode, ExperimentConfig, MethodKind};
use crate::error::HarnessError;

/// One finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub d: usize,
    pub seed: u64,
    pub method: String,
    pub record: RunRecord,
    /// Loss at the problem's known minimizer, when there is one.
    pub optimum_loss: Option<f64>,
}

impl RunOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.record.final_loss()
    }

    pub fn final_gap(&self) -> Option<f64> {
        Some(self.final_loss()? - self.optimum_loss?)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Sorted by dimension, seed, then method order in the config.
    pub runs: Vec<RunOutcome>,
    pub wall_time: f64,
}

impl ExperimentResult {
    pub fn runs_for<'a>(&'a self, method: &'a str, d: usize) -> impl Iterator<Item = &'a RunOutcome> + 'a {
        self.runs.iter().filter(move |r| r.method == method && r.d == d)
    }

    /// Final losses of `method` at dimension `d`, in seed order.
    pub fn final_losses(&self, method: &str, d: usize) -> Vec<f64> {
        self.runs_for(method, d).filter_map(RunOutcome::final_loss).collect()
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.record.is_failed()).count()
    }
}

type SeedRuns = Result<Vec<RunOutcome>, HarnessError>;

/// Runs the experiment on `jobs` worker threads. Work is split by
/// (dimension, seed); the output does not depend on `jobs`.
pub fn execute(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let tasks: Vec<(usize, u64)> = cfg
        .dimensions()
        .into_iter()
        .flat_map(|d| cfg.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SeedRuns>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, tasks.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(d, seed)) = tasks.get(i) else { break };
                let out = run_seed(cfg, d, seed);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(out);
            });
        }
    });
    let mut runs = Vec::new();
    for slot in slots.into_inner().expect("workers joined") {
        runs.extend(slot.expect("every task ran")?);
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn run_seed(cfg: &ExperimentConfig, d: usize, seed: u64) -> SeedRuns {
    let problem = cfg.problem.build(d, seed)?;
    let optimum_loss = problem.optimum().map(|(_, f)| f);
    let first_bo = cfg.methods.iter().find(|m| m.kind == MethodKind::DpGibo).map(|m| m.name.clone());
    let mut done: BTreeMap<String, RunRecord> = BTreeMap::new();

    // Random search may depend on what the other methods spent, so it goes last.
    let order = cfg
        .methods
        .iter()
        .filter(|m| m.kind != MethodKind::RandomSearch)
        .chain(cfg.methods.iter().filter(|m| m.kind == MethodKind::RandomSearch));
    for m in order {
        log::info!("{}: d={d} seed={seed} method={}", cfg.name, m.name);
        let record = match m.kind {
            MethodKind::DpGibo | MethodKind::DpGd => {
                let theta0 = m.theta0(problem.as_ref(), seed)?;
                let oc = m.optimizer_config(d, theta0, seed)?;
                if m.kind == MethodKind::DpGibo {
                    dp_gibo_run(problem.as_ref(), &oc)
                } else {
                    dp_gd_baseline(problem.as_ref(), &oc)
                }
            }
            MethodKind::RandomSearch => {
                let target = m.match_evaluations.clone().or_else(|| match cfg.budget {
                    BudgetMode::MatchedEvaluations if m.budget_evals.is_none() => first_bo.clone(),
                    _ => None,
                });
                let budget = match (target, m.budget_evals) {
                    (Some(t), _) => done.get(&t).map(RunRecord::total_evaluations).unwrap_or(0),
                    (None, Some(b)) => b,
                    (None, None) => (m.iterations * problem.user_count()) as u64,
                };
                let mut r = random_search_baseline(problem.as_ref(), budget, seed);
                r.method = m.name.clone();
                r
            }
        };
        if let RunStatus::Failed(why) = &record.status {
            log::error!("{}: d={d} seed={seed} method={} failed: {why}", cfg.name, m.name);
        }
        done.insert(m.name.clone(), record);
    }
    Ok(cfg
        .methods
        .iter()
        .map(|m| RunOutcome {
            d,
            seed,
            method: m.name.clone(),
            record: done.remove(&m.name).expect("every method ran"),
            optimum_loss,
        })
        .collect())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median, lower and upper quartile.
pub fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    (quantile(&v, 0.5), quantile(&v, 0.25), quantile(&v, 0.75))
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl ExperimentResult {
    fn has_dims(&self) -> bool {
        self.config.dims.is_some()
    }

    fn run_dir(&self, root: &Path, d: usize, method: &str) -> PathBuf {
        if self.has_dims() {
            root.join(format!("d{d}")).join(method)
        } else {
            root.join(method)
        }
    }

    /// `kind,d,method,seed,status,final_loss,final_gap,total_evaluations,cap_hits`
    /// with one `run` row per run, then median and quartile rows per method.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("kind,d,method,seed,status,final_loss,final_gap,total_evaluations,cap_hits\n");
        for r in &self.runs {
            let status = if r.record.is_failed() { "failed" } else { "completed" };
            out.push_str(&format!(
                "run,{},{},{},{status},{},{},{},{}\n",
                r.d,
                r.method,
                r.seed,
                num(r.final_loss()),
                num(r.final_gap()),
                r.record.total_evaluations(),
                r.record.cap_hits()
            ));
        }
        for d in self.config.dimensions() {
            for m in &self.config.methods {
                let runs: Vec<&RunOutcome> = self.runs_for(&m.name, d).collect();
                let losses: Vec<f64> = runs.iter().filter_map(|r| r.final_loss()).collect();
                let gaps: Vec<f64> = runs.iter().filter_map(|r| r.final_gap()).collect();
                let evals: Vec<f64> = runs.iter().map(|r| r.record.total_evaluations() as f64).collect();
                let caps: Vec<f64> = runs.iter().map(|r| r.record.cap_hits() as f64).collect();
                let (lq, ge, ev, cq) = (quartiles(&losses), quartiles(&gaps), quartiles(&evals), quartiles(&caps));
                let pick = |q: (f64, f64, f64), i: usize| {
                    let x = [q.0, q.1, q.2][i];
                    if x.is_nan() {
                        String::new()
                    } else {
                        format!("{x:e}")
                    }
                };
                for (i, kind) in ["median", "q1", "q3"].iter().enumerate() {
                    out.push_str(&format!(
                        "{kind},{d},{},,,{},{},{},{}\n",
                        m.name,
                        pick(lq, i),
                        pick(ge, i),
                        pick(ev, i),
                        pick(cq, i)
                    ));
                }
            }
        }
        out
    }

    /// For every random-search method matched to another method: the median
    /// over seeds of (random-search loss − matched method loss) per dimension.
    pub fn dim_scaling_csv(&self) -> Option<String> {
        if !self.has_dims() {
            return None;
        }
        let mut out = String::from("d,method,baseline,median_gap,q1_gap,q3_gap\n");
        let pairs: Vec<(&str, &str)> = self
            .config
            .methods
            .iter()
            .filter(|m| m.kind == MethodKind::RandomSearch)
            .filter_map(|m| {
                let target = m.match_evaluations.as_deref().or_else(|| {
                    self.config
                        .methods
                        .iter()
                        .find(|o| o.kind == MethodKind::DpGibo)
                        .map(|o| o.name.as_str())
                })?;
                Some((target, m.name.as_str()))
            })
            .collect();
        for d in self.config.dimensions() {
            for &(method, baseline) in &pairs {
                let gaps = self.paired_gaps(method, baseline, d);
                let (m, q1, q3) = quartiles(&gaps);
                out.push_str(&format!("{d},{method},{baseline},{m:e},{q1:e},{q3:e}\n"));
            }
        }
        Some(out)
    }

    /// Per seed, `loss(baseline) − loss(method)` at dimension `d`.
    pub fn paired_gaps(&self, method: &str, baseline: &str, d: usize) -> Vec<f64> {
        self.runs_for(method, d)
            .filter_map(|r| {
                let b = self.runs_for(baseline, d).find(|o| o.seed == r.seed)?;
                Some(b.final_loss()? - r.final_loss()?)
            })
            .collect()
    }
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Writes per-run CSVs with JSON sidecars, `summary.csv`, `summary.meta.json`
/// and, for dimension sweeps, `dim_scaling.csv` under `<root>/<name>/`.
/// Returns the experiment directory.
pub fn write_outputs(result: &ExperimentResult, root: &Path) -> Result<PathBuf, HarnessError> {
    let base = root.join(&result.config.name);
    for r in &result.runs {
        let dir = result.run_dir(&base, r.d, &r.method);
        write(&dir.join(format!("seed_{}.csv", r.seed)), &r.record.to_csv())?;
        let spec = result.config.methods.iter().find(|m| m.name == r.method);
        let (status, error) = match &r.record.status {
            RunStatus::Completed => ("completed", None),
            RunStatus::Failed(e) => ("failed", Some(e.clone())),
        };
        let meta = json!({
            "method": spec,
            "problem": &result.config.problem,
            "d": r.d,
            "seed": r.seed,
            "status": status,
            "error": error,
            "initial_theta": &r.record.initial_theta,
            "initial_loss": r.record.initial_loss,
            "final_loss": r.final_loss(),
            "optimum_loss": r.optimum_loss,
            "total_evaluations": r.record.total_evaluations(),
            "cap_hits": r.record.cap_hits(),
            "mu_total": r.record.mu_total,
            "privacy_ledger": &r.record.ledger,
            "wall_time_seconds": r.record.wall_time,
            "iteration_wall_times": r.record.rows.iter().map(|row| row.wall_time).collect::<Vec<_>>(),
        });
        let text = serde_json::to_string_pretty(&meta).expect("json values serialize");
        write(&dir.join(format!("seed_{}.meta.json", r.seed)), &text)?;
    }
    write(&base.join("summary.csv"), &result.summary_csv())?;
    if let Some(text) = result.dim_scaling_csv() {
        write(&base.join("dim_scaling.csv"), &text)?;
    }
    let walls: Vec<_> = result
        .runs
        .iter()
        .map(|r| json!({"d": r.d, "seed": r.seed, "method": r.method, "wall_time_seconds": r.record.wall_time}))
        .collect();
    let meta = json!({
        "config": &result.config,
        "wall_time_seconds": result.wall_time,
        "runs": walls,
    });
    write(
        &base.join("summary.meta.json"),
        &serde_json::to_string_pretty(&meta).expect("json values serialize"),
    )?;
    Ok(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        assert_eq!(quartiles(&[3.0, 1.0, 2.0]), (2.0, 1.5, 2.5));
        assert_eq!(quartiles(&[5.0]), (5.0, 5.0, 5.0));
        assert!(quartiles(&[]).0.is_nan());
    }
}
