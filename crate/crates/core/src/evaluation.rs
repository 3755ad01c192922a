//! Error metrics, the edge-weighted path distribution, and predicted
//! high-probability error bounds.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::Family;
use crate::topology::DesignMatrix;

/// Distribution over paths induced by drawing an edge uniformly and then
/// a path through that edge uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDistribution {
    pub weights: Vec<f64>,
}

/// `weight(x) = (1/d) sum_{e in x} 1/N_e`, where `N_e` counts the paths
/// through `e`.
pub fn path_distribution(x: &DesignMatrix) -> Result<PathDistribution> {
    let counts = x.column_counts();
    if let Some(e) = counts.iter().position(|&c| c == 0) {
        return Err(Error::UncoveredEdge(e));
    }
    let d = x.dim() as f64;
    let weights = x.rows().iter().map(|row| row.iter().map(|&(e, _)| 1.0 / counts[e] as f64).sum::<f64>() / d).collect();
    Ok(PathDistribution { weights })
}

/// Ground truth for error evaluation: either model parameters or
/// per-path reference values (replay uses empirical path means).
#[derive(Debug, Clone, Copy)]
pub enum Truth<'a> {
    Params(&'a [f64]),
    PathValues(&'a [f64]),
}

impl Truth<'_> {
    pub fn path_values(&self, x: &DesignMatrix, family: Family) -> Vec<f64> {
        match *self {
            Truth::Params(theta) => x.apply(theta).into_iter().map(|eta| family.mean(eta)).collect(),
            Truth::PathValues(v) => v.to_vec(),
        }
    }
}

/// `(f_hat(x) - f*(x))^2` for every path.
pub fn per_path_errors(theta_hat: &[f64], truth: Truth<'_>, x: &DesignMatrix, family: Family) -> Vec<f64> {
    let truth = truth.path_values(x, family);
    (0..x.n_rows()).map(|i| (family.mean(x.dot(i, theta_hat)) - truth[i]).powi(2)).collect()
}

pub fn max_error(theta_hat: &[f64], truth: Truth<'_>, x: &DesignMatrix, family: Family) -> f64 {
    per_path_errors(theta_hat, truth, x, family).into_iter().fold(0.0, f64::max)
}

pub fn avg_error(theta_hat: &[f64], truth: Truth<'_>, x: &DesignMatrix, p: &PathDistribution, family: Family) -> f64 {
    let errors = per_path_errors(theta_hat, truth, x, family);
    errors.iter().zip(&p.weights).map(|(e, w)| e * w).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub design_name: String,
    pub budget: usize,
    pub seed: u64,
    pub max_error: f64,
    pub avg_error: f64,
    pub per_path: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    theta_hat: &[f64],
    truth: Truth<'_>,
    x: &DesignMatrix,
    p: &PathDistribution,
    family: Family,
    design_name: &str,
    budget: usize,
    seed: u64,
) -> ErrorReport {
    let per_path = per_path_errors(theta_hat, truth, x, family);
    let max_error = per_path.iter().copied().fold(0.0, f64::max);
    let avg_error = per_path.iter().zip(&p.weights).map(|(e, w)| e * w).sum();
    ErrorReport { design_name: design_name.to_string(), budget, seed, max_error, avg_error, per_path }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedErrors {
    /// Per-path bound; infinite for paths outside the span of the design.
    pub bounds: Vec<f64>,
    /// Bounds sorted in descending order.
    pub curve: Vec<f64>,
    pub unbounded: usize,
}

/// `2 sigma^2 log(1/delta) x^T G^-1 x` per path, with `G = n G(alpha)`.
pub fn predicted_error_bound(
    alpha: &[f64],
    n: usize,
    x: &DesignMatrix,
    sigma: f64,
    delta: f64,
) -> Result<PredictedErrors> {
    if alpha.len() != x.n_rows() {
        return Err(Error::InvalidArgument("distribution does not match the path set".into()));
    }
    let weights: Vec<f64> = alpha.iter().map(|a| a * n as f64).collect();
    predicted_error_bound_from_counts(&weights, x, sigma, delta)
}

/// Same bound with `G` built from realized per-path probe counts.
pub fn predicted_error_bound_from_counts(
    counts: &[f64],
    x: &DesignMatrix,
    sigma: f64,
    delta: f64,
) -> Result<PredictedErrors> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} must lie in (0, 1)")));
    }
    if counts.len() != x.n_rows() {
        return Err(Error::InvalidArgument("counts do not match the path set".into()));
    }
    let g = x.gram(counts);
    let eig = g.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let d = x.dim();
    let scale = 2.0 * sigma * sigma * (1.0 / delta).ln();
    let bounds: Vec<f64> = x
        .rows()
        .iter()
        .map(|row| {
            let norm2: f64 = row.iter().map(|(_, v)| v * v).sum();
            let (mut quad, mut null) = (0.0, 0.0);
            for k in 0..d {
                let p: f64 = row.iter().map(|&(j, v)| v * eig.eigenvectors[(j, k)]).sum();
                let lambda = eig.eigenvalues[k];
                if top > 0.0 && lambda > 1e-10 * top {
                    quad += p * p / lambda;
                } else {
                    null += p * p;
                }
            }
            if null > 1e-10 * norm2 {
                f64::INFINITY
            } else {
                scale * quad
            }
        })
        .collect();
    let mut curve = bounds.clone();
    curve.sort_by(|a, b| b.total_cmp(a));
    let unbounded = bounds.iter().filter(|b| b.is_infinite()).count();
    Ok(PredictedErrors { bounds, curve, unbounded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(rows: &[&[f64]]) -> DesignMatrix {
        DesignMatrix::from_dense(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn path_distribution_examples() {
        let p = path_distribution(&dm(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(p.weights, vec![0.5, 0.5]);
        let p = path_distribution(&dm(&[&[1.0, 0.0], &[1.0, 1.0]])).unwrap();
        assert!((p.weights[0] - 0.25).abs() < 1e-15 && (p.weights[1] - 0.75).abs() < 1e-15);
        assert!(matches!(path_distribution(&dm(&[&[1.0, 0.0]])), Err(Error::UncoveredEdge(1))));
    }

    #[test]
    fn star_paths_with_equal_profile_share_weight() {
        // star with center edges 0..3; leaf-to-leaf paths use two edges
        let rows: Vec<Vec<f64>> = (0..4)
            .flat_map(|a| (a + 1..4).map(move |b| (0..4).map(|e| f64::from(u8::from(e == a || e == b))).collect()))
            .collect();
        let p = path_distribution(&DesignMatrix::from_dense(&rows).unwrap()).unwrap();
        assert!(p.weights.iter().all(|w| (w - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn error_examples() {
        let x = dm(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let theta = [0.01, 0.02];
        assert_eq!(max_error(&theta, Truth::Params(&theta), &x, Family::Linear), 0.0);
        let single = dm(&[&[1.0]]);
        let e = max_error(&[0.013], Truth::Params(&[0.010]), &single, Family::Linear);
        assert!((e - 9e-6).abs() < 1e-15);
        let p = PathDistribution { weights: vec![0.25, 0.75] };
        let e = avg_error(&[0.01, 0.022], Truth::Params(&theta), &x, &p, Family::Linear);
        assert!((e - 3e-6).abs() < 1e-15);
        let e = avg_error(&theta, Truth::Params(&theta), &x, &p, Family::LogLinear);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn bound_on_basis() {
        let x = dm(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = predicted_error_bound(&[0.5, 0.5], 2, &x, 0.5_f64.sqrt(), (-1.0_f64).exp()).unwrap();
        for v in &b.bounds {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let b10 = predicted_error_bound(&[0.5, 0.5], 20, &x, 0.5_f64.sqrt(), (-1.0_f64).exp()).unwrap();
        for (a, c) in b.bounds.iter().zip(&b10.bounds) {
            assert!((a / c - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_span_paths_are_unbounded() {
        let x = dm(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let b = predicted_error_bound(&[1.0, 0.0, 0.0], 10, &x, 0.01, 0.05).unwrap();
        assert!(b.bounds[0].is_finite());
        assert!(b.bounds[1].is_infinite() && b.bounds[2].is_infinite());
        assert_eq!(b.unbounded, 2);
        assert!(b.curve[0].is_infinite() && b.curve[2].is_finite());
    }
}
