//! Model fitting: least squares for the linear latency model and a
//! log-linear (Poisson-score) fit for packet survival.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::ProbeDataset;
use crate::topology::DesignMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `f(x) = x^T theta`
    Linear,
    /// `f(x) = exp(x^T theta)`
    LogLinear,
}

impl Family {
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Linear => eta,
            Family::LogLinear => eta.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEstimate {
    pub theta_hat: Vec<f64>,
    pub family: Family,
    pub iterations: usize,
    pub final_objective: f64,
    pub ridge: f64,
    pub converged: bool,
    /// Edges no probed path touches; their estimate stays at zero.
    pub uncovered: Vec<usize>,
}

impl ModelEstimate {
    pub fn predict(&self, x: &DesignMatrix) -> Vec<f64> {
        x.apply(&self.theta_hat).into_iter().map(|eta| self.family.mean(eta)).collect()
    }
}

fn uncovered_edges(x: &DesignMatrix, counts: &[f64]) -> Vec<usize> {
    let mut covered = vec![false; x.dim()];
    for (i, &c) in counts.iter().enumerate() {
        if c > 0.0 {
            for &(j, _) in x.row(i) {
                covered[j] = true;
            }
        }
    }
    (0..x.dim()).filter(|&j| !covered[j]).collect()
}

/// Edges with weight in the numerical null space of `g`.
fn null_space_edges(g: &DMatrix<f64>) -> Vec<usize> {
    let eig = g.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let mut edges = Vec::new();
    for j in 0..g.nrows() {
        let hit = (0..g.ncols()).any(|k| eig.eigenvalues[k] <= 1e-10 * top && eig.eigenvectors[(j, k)].abs() > 1e-8);
        if hit {
            edges.push(j);
        }
    }
    edges
}

/// Minimizes `sum_i (x_i^T theta - y_i)^2 + ridge |theta|^2`.
///
/// With `ridge == 0` a singular Gram matrix is an error that lists the
/// edges the data cannot identify.
pub fn fit_least_squares(dataset: &ProbeDataset, x: &DesignMatrix, ridge: f64) -> Result<ModelEstimate> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge {ridge} must be nonnegative")));
    }
    let (counts, sums) = dataset.per_path(x.n_rows())?;
    let uncovered = uncovered_edges(x, &counts);
    let mut g = x.gram(&counts);
    if ridge == 0.0 && !uncovered.is_empty() {
        return Err(Error::RankDeficient { unidentifiable: uncovered });
    }
    for i in 0..g.nrows() {
        g[(i, i)] += ridge;
    }
    let mut b = DVector::zeros(x.dim());
    for (i, &s) in sums.iter().enumerate() {
        for &(j, xj) in x.row(i) {
            b[j] += xj * s;
        }
    }
    let scale = g.diagonal().max();
    let chol = match g.clone().cholesky() {
        Some(c) if ridge > 0.0 || (0..g.nrows()).all(|i| c.l_dirty()[(i, i)].powi(2) > 1e-12 * scale) => c,
        _ => return Err(Error::RankDeficient { unidentifiable: null_space_edges(&g) }),
    };
    let theta = chol.solve(&b);
    let theta_hat: Vec<f64> = theta.iter().copied().collect();
    let rss: f64 = dataset.records.iter().map(|&(i, y)| (x.dot(i, &theta_hat) - y).powi(2)).sum();
    let penalty: f64 = ridge * theta_hat.iter().map(|t| t * t).sum::<f64>();
    Ok(ModelEstimate {
        theta_hat,
        family: Family::Linear,
        iterations: 1,
        final_objective: rss + penalty,
        ridge,
        converged: true,
        uncovered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmOptions {
    pub max_iters: usize,
    /// Bound on the norm of the projected score at convergence.
    pub tol: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        GlmOptions { max_iters: 100, tol: 1e-8 }
    }
}

struct PoissonData<'a> {
    x: &'a DesignMatrix,
    counts: Vec<f64>,
    successes: Vec<f64>,
    probed: Vec<usize>,
}

impl PoissonData<'_> {
    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        self.probed
            .iter()
            .map(|&i| {
                let eta = self.x.dot(i, theta);
                self.successes[i] * eta - self.counts[i] * eta.exp()
            })
            .sum()
    }

    fn score(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.x.dim()];
        for &i in &self.probed {
            let r = self.successes[i] - self.counts[i] * self.x.dot(i, theta).exp();
            for &(j, xj) in self.x.row(i) {
                g[j] += r * xj;
            }
        }
        g
    }

    fn information(&self, theta: &[f64]) -> DMatrix<f64> {
        let w: Vec<f64> = (0..self.x.n_rows())
            .map(|i| if self.counts[i] > 0.0 { self.counts[i] * self.x.dot(i, theta).exp() } else { 0.0 })
            .collect();
        self.x.gram(&w)
    }
}

/// Score components that can still move: at the bound `theta_e = 0` a
/// positive score (pushing upward) is blocked.
fn projected_score(theta: &[f64], score: &[f64], free: &[bool]) -> Vec<f64> {
    score
        .iter()
        .zip(theta)
        .zip(free)
        .map(|((&g, &t), &f)| if !f || (t >= 0.0 && g > 0.0) { 0.0 } else { g })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Maximum-likelihood log-linear fit of survival indicators.
///
/// Maximizes the Poisson log-likelihood `sum_i y_i eta_i - exp(eta_i)`,
/// whose stationarity condition is `sum_i (y_i - exp(x_i^T theta)) x_i = 0`,
/// by projected Newton with step halving, keeping every edge parameter at
/// or below zero so each predicted survival probability is at most one.
/// Starts from `theta = 0`. Edges no probed path touches stay at zero.
pub fn fit_log_linear(dataset: &ProbeDataset, x: &DesignMatrix, options: &GlmOptions) -> Result<ModelEstimate> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    if let Some(&(i, y)) = dataset.records.iter().find(|r| r.1 != 0.0 && r.1 != 1.0) {
        return Err(Error::InvalidArgument(format!("path {i}: observation {y} is not a 0/1 indicator")));
    }
    let (counts, successes) = dataset.per_path(x.n_rows())?;
    if successes.iter().all(|&s| s == 0.0) {
        return Err(Error::AllZeroObservations);
    }
    let uncovered = uncovered_edges(x, &counts);
    let mut free = vec![true; x.dim()];
    uncovered.iter().for_each(|&j| free[j] = false);
    let probed = (0..x.n_rows()).filter(|&i| counts[i] > 0.0).collect();
    let data = PoissonData { x, counts, successes, probed };

    let d = x.dim();
    let mut theta = vec![0.0; d];
    let mut ll = data.log_likelihood(&theta);
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..=options.max_iters {
        let score = data.score(&theta);
        let pg = projected_score(&theta, &score, &free);
        let pg_norm = norm(&pg);
        if pg_norm <= options.tol {
            converged = true;
            iterations = it;
            break;
        }
        if it == options.max_iters {
            iterations = it;
            break;
        }
        // Newton on the variables not pinned at the bound.
        let active: Vec<usize> = (0..d).filter(|&j| free[j] && !(theta[j] >= 0.0 && score[j] > 0.0)).collect();
        let info = data.information(&theta);
        let k = active.len();
        let mut h = DMatrix::from_fn(k, k, |a, b| info[(active[a], active[b])]);
        let damping = 1e-12 * (h.trace() / k as f64).max(1e-300);
        for a in 0..k {
            h[(a, a)] += damping;
        }
        let rhs = DVector::from_iterator(k, active.iter().map(|&j| score[j]));
        let step = match h.cholesky() {
            Some(c) => c.solve(&rhs),
            None => rhs.clone(),
        };
        let mut direction = vec![0.0; d];
        for (a, &j) in active.iter().enumerate() {
            direction[j] = step[a];
        }
        // near the optimum the gain drops below the rounding noise of `ll`
        let noise = 1e-13 * ll.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = theta.iter().zip(&direction).map(|(th, dr)| (th + t * dr).min(0.0)).collect();
            let cand_ll = data.log_likelihood(&candidate);
            let gain: f64 = score.iter().zip(candidate.iter().zip(&theta)).map(|(g, (c, th))| g * (c - th)).sum();
            if cand_ll >= ll + 1e-4 * gain - noise && cand_ll.is_finite() {
                theta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            iterations = it + 1;
            break;
        }
    }
    Ok(ModelEstimate {
        theta_hat: theta,
        family: Family::LogLinear,
        iterations,
        final_objective: -ll,
        ridge: 0.0,
        converged,
        uncovered,
    })
}
