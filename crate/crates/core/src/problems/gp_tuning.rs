use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Problem;
use crate::error::{invalid, Result};
use crate::rng::{stream_rng, Stream};

const DATA_NOISE: f64 = 0.1;
const GENERATING_LOG_RANGE: (f64, f64) = (0.0, 1.0);

/// Lengthscale tuning of a GP regressor. θ holds per-dimension
/// log-lengthscales; user `i` is validation point `i` with loss equal to its
/// squared prediction error under the fit on the training half.
#[derive(Debug, Clone)]
pub struct GpTuning {
    train_x: DMatrix<f64>,
    train_y: DVector<f64>,
    valid_x: DMatrix<f64>,
    valid_y: DVector<f64>,
    generating: Vec<f64>,
    domain: Vec<(f64, f64)>,
}

/// Regression data from a draw of an RBF GP on `[−1, 1]^d` with
/// log-lengthscales uniform on `[0, 1]` and observation noise 0.1, split
/// 50/50 into training and validation. θ lives on `[−2, 2]^d`.
pub fn gp_lengthscale_tuning_problem(d: usize, n_total: usize, seed: u64) -> Result<GpTuning> {
    if d == 0 || n_total < 4 {
        return Err(invalid("need d ≥ 1 and at least 4 data points"));
    }
    let mut rng = stream_rng(seed, Stream::ProblemData, 0);
    let generating: Vec<f64> = (0..d)
        .map(|_| rng.random_range(GENERATING_LOG_RANGE.0..GENERATING_LOG_RANGE.1))
        .collect();
    let x = DMatrix::from_fn(n_total, d, |_, _| rng.random_range(-1.0..1.0));
    let mut k = rbf_gram(&x, &x, &generating);
    for i in 0..n_total {
        k[(i, i)] += 1e-8;
    }
    let l = k
        .cholesky()
        .ok_or_else(|| invalid("generating covariance is not positive definite"))?
        .l();
    let z = DVector::from_fn(n_total, |_, _| rng.sample::<f64, _>(StandardNormal));
    let f = l * z;
    let y = DVector::from_fn(n_total, |i, _| f[i] + DATA_NOISE * rng.sample::<f64, _>(StandardNormal));

    let half = n_total / 2;
    Ok(GpTuning {
        train_x: x.rows(0, half).into_owned(),
        train_y: y.rows(0, half).into_owned(),
        valid_x: x.rows(half, n_total - half).into_owned(),
        valid_y: y.rows(half, n_total - half).into_owned(),
        generating,
        domain: vec![(-2.0, 2.0); d],
    })
}

fn rbf_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, log_lengthscales: &[f64]) -> DMatrix<f64> {
    let inv: Vec<f64> = log_lengthscales.iter().map(|l| (-l).exp()).collect();
    let scale = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * inv[j]);
    let (sa, sb) = (scale(a), scale(b));
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let sq: f64 = sa.row(i).iter().zip(sb.row(j).iter()).map(|(u, v)| (u - v) * (u - v)).sum();
        (-0.5 * sq).exp()
    })
}

impl GpTuning {
    /// Log-lengthscales that generated the data.
    pub fn generating_log_lengthscales(&self) -> &[f64] {
        &self.generating
    }

    fn predictions(&self, theta: &[f64]) -> Option<DVector<f64>> {
        if theta.iter().any(|t| !t.is_finite()) {
            return None;
        }
        let mut k = rbf_gram(&self.train_x, &self.train_x, theta);
        for i in 0..k.nrows() {
            k[(i, i)] += DATA_NOISE * DATA_NOISE;
        }
        let alpha = k.cholesky()?.solve(&self.train_y);
        Some(rbf_gram(&self.valid_x, &self.train_x, theta) * alpha)
    }
}

impl Problem for GpTuning {
    fn name(&self) -> &str {
        "gp_tuning"
    }

    fn dimension(&self) -> usize {
        self.train_x.ncols()
    }

    fn user_count(&self) -> usize {
        self.valid_x.nrows()
    }

    fn user_losses(&self, theta: &[f64]) -> Vec<f64> {
        match self.predictions(theta) {
            Some(pred) => pred.iter().zip(self.valid_y.iter()).map(|(p, y)| (y - p) * (y - p)).collect(),
            // Only reachable for non-finite θ; predicting zero is the prior mean.
            None => self.valid_y.iter().map(|y| y * y).collect(),
        }
    }

    fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }
}
