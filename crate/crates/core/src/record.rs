//! Per-iteration trace of a run and its CSV form.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Failed(String),
}

/// One completed iteration.
///
/// `theta` and `loss` are after the update; `trace`, `grad_norm`,
/// `noise_norm` and `bias_norm` describe the gradient used for it.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub t: usize,
    pub theta: Vec<f64>,
    /// Diagnostic true loss; not a released quantity.
    pub loss: Option<f64>,
    pub batch_size: usize,
    pub cumulative_evaluations: u64,
    pub trace: Option<f64>,
    pub grad_norm: Option<f64>,
    pub noise_norm: Option<f64>,
    /// Distance from the clipped aggregate to the true gradient; diagnostic only.
    pub bias_norm: Option<f64>,
    pub mu_consumed: f64,
    pub hit_cap: bool,
    /// Seconds since the start of the run.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub initial_theta: Vec<f64>,
    pub initial_loss: Option<f64>,
    pub rows: Vec<IterationRow>,
    pub status: RunStatus,
    pub mu_total: f64,
    pub ledger: Vec<f64>,
    pub wall_time: f64,
}

/// Column names, in order, for a `d`-dimensional run.
pub fn csv_header(d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..d).map(|j| format!("theta_{j}")));
    h.extend(
        [
            "oracle_loss",
            "batch_size",
            "cumulative_evaluations",
            "trace_achieved",
            "grad_norm",
            "noise_norm",
            "oracle_bias_norm",
            "mu_consumed_cum",
        ]
        .map(String::from),
    );
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl RunRecord {
    pub fn new(method: impl Into<String>, initial_theta: Vec<f64>, initial_loss: Option<f64>, mu_total: f64) -> Self {
        RunRecord {
            method: method.into(),
            initial_theta,
            initial_loss,
            rows: Vec::new(),
            status: RunStatus::Completed,
            mu_total,
            ledger: Vec::new(),
            wall_time: 0.0,
        }
    }

    pub fn dimension(&self) -> usize {
        self.initial_theta.len()
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.status, RunStatus::Failed(_))
    }

    pub fn final_theta(&self) -> &[f64] {
        self.rows.last().map_or(&self.initial_theta, |r| &r.theta)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map_or(self.initial_loss, |r| r.loss)
    }

    pub fn total_evaluations(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.cumulative_evaluations)
    }

    pub fn cap_hits(&self) -> usize {
        self.rows.iter().filter(|r| r.hit_cap).count()
    }

    /// CSV text: fixed header, one row per iteration, missing values empty.
    /// Wall time is left out so that reruns are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = csv_header(self.dimension()).join(",");
        out.push('\n');
        for r in &self.rows {
            let mut fields = vec![r.t.to_string()];
            fields.extend(r.theta.iter().map(|x| format!("{x:e}")));
            fields.push(opt(r.loss));
            fields.push(r.batch_size.to_string());
            fields.push(r.cumulative_evaluations.to_string());
            fields.push(opt(r.trace));
            fields.push(opt(r.grad_norm));
            fields.push(opt(r.noise_norm));
            fields.push(opt(r.bias_norm));
            fields.push(format!("{:e}", r.mu_consumed));
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let mut r = RunRecord::new("m", vec![0.0, 0.0], Some(1.0), 0.0);
        r.rows.push(IterationRow {
            t: 1,
            theta: vec![0.5, -1.0],
            loss: Some(0.25),
            batch_size: 3,
            cumulative_evaluations: 30,
            trace: Some(1e-7),
            grad_norm: Some(1.0),
            noise_norm: Some(0.0),
            bias_norm: None,
            mu_consumed: 0.0,
            hit_cap: false,
            wall_time: 0.1,
        });
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "t,theta_0,theta_1,oracle_loss,batch_size,cumulative_evaluations,trace_achieved,grad_norm,noise_norm,oracle_bias_norm,mu_consumed_cum"
        );
        assert_eq!(lines[1], "1,5e-1,-1e0,2.5e-1,3,30,1e-7,1e0,0e0,,0e0");
        assert_eq!(r.final_loss(), Some(0.25));
        assert_eq!(r.total_evaluations(), 30);
    }
}
