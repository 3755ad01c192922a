//! Probing-distribution designs: Frank-Wolfe E- and A-optimal designs,
//! the pivoted-QR path-selection baseline, and the uniform baseline.
//!
//! Both optimal designs are functions of the covariance
//! `G(alpha) = sum_x alpha_x x x^T`. Inside Frank-Wolfe one symmetric
//! eigendecomposition of `G` per iteration serves the objective, the
//! gradient, and the line search: along a segment toward an LP vertex the
//! covariance is a diagonal matrix plus a low-rank update in that basis.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fw::{frank_wolfe, ConstraintSet, FwConfig, Linearization, Objective, ProbingDistribution};
use crate::topology::DesignMatrix;

pub const E_OPTIMAL: &str = "E-optimal";
pub const A_OPTIMAL: &str = "A-optimal";
pub const QR: &str = "QR";
pub const UNIFORM: &str = "uniform";

/// Singular values below this fraction of the largest count as zero.
pub const QR_RANK_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMethod {
    AOptimal,
    EOptimal,
    Qr,
    Uniform,
}

impl DesignMethod {
    pub const ALL: [DesignMethod; 4] =
        [DesignMethod::AOptimal, DesignMethod::EOptimal, DesignMethod::Qr, DesignMethod::Uniform];

    pub fn key(self) -> &'static str {
        match self {
            DesignMethod::AOptimal => "a_optimal",
            DesignMethod::EOptimal => "e_optimal",
            DesignMethod::Qr => "qr",
            DesignMethod::Uniform => "uniform",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            DesignMethod::AOptimal => A_OPTIMAL,
            DesignMethod::EOptimal => E_OPTIMAL,
            DesignMethod::Qr => QR,
            DesignMethod::Uniform => UNIFORM,
        }
    }
}

impl fmt::Display for DesignMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for DesignMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DesignMethod::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown design method {s:?}")))
    }
}

/// Computes the distribution for `method`. Baselines ignore the
/// constraints and the Frank-Wolfe configuration.
pub fn compute_design(
    method: DesignMethod,
    x: &DesignMatrix,
    constraints: &ConstraintSet,
    config: &FwConfig,
) -> Result<ProbingDistribution> {
    match method {
        DesignMethod::AOptimal => fw_a_optimal(x, constraints, config),
        DesignMethod::EOptimal => fw_e_optimal(x, constraints, config),
        DesignMethod::Qr => qr_design(x),
        DesignMethod::Uniform => Ok(uniform_design(x.n_rows())),
    }
}

pub fn covariance(alpha: &[f64], x: &DesignMatrix) -> DMatrix<f64> {
    x.gram(alpha)
}

fn check_alpha(alpha: &[f64], x: &DesignMatrix) -> Result<()> {
    if alpha.len() != x.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "distribution has {} entries for {} paths",
            alpha.len(),
            x.n_rows()
        )));
    }
    Ok(())
}

/// Sorted eigenvalues (ascending) and matching unit eigenvectors.
fn eigen(g: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `-lambda_min(G(alpha))`.
pub fn e_objective(alpha: &[f64], x: &DesignMatrix) -> Result<f64> {
    check_alpha(alpha, x)?;
    let (values, _) = eigen(covariance(alpha, x));
    Ok(-values[0])
}

/// Entry `x` is `-(v_min . x)^2` for a unit eigenvector `v_min` of the
/// smallest eigenvalue (a subgradient when it is repeated).
pub fn e_gradient(alpha: &[f64], x: &DesignMatrix) -> Result<Vec<f64>> {
    check_alpha(alpha, x)?;
    let (_, vectors) = eigen(covariance(alpha, x));
    let v: Vec<f64> = vectors.column(0).iter().copied().collect();
    Ok((0..x.n_rows()).map(|i| -x.dot(i, &v).powi(2)).collect())
}

fn ridged_cholesky(alpha: &[f64], x: &DesignMatrix, ridge: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    check_alpha(alpha, x)?;
    let mut g = covariance(alpha, x);
    for i in 0..g.nrows() {
        g[(i, i)] += ridge;
    }
    let scale = g.diagonal().max();
    let chol = g.cholesky().ok_or(Error::Singular)?;
    let l = chol.l_dirty();
    if (0..l.nrows()).any(|i| l[(i, i)] * l[(i, i)] <= 1e-14 * scale) {
        return Err(Error::Singular);
    }
    Ok(chol)
}

/// `tr((G(alpha) + ridge I)^-1)`.
pub fn a_objective(alpha: &[f64], x: &DesignMatrix, ridge: f64) -> Result<f64> {
    let chol = ridged_cholesky(alpha, x, ridge)?;
    Ok(chol.inverse().trace())
}

/// Entry `x` is `-|(G + ridge I)^-1 x|^2`.
pub fn a_gradient(alpha: &[f64], x: &DesignMatrix, ridge: f64) -> Result<Vec<f64>> {
    let chol = ridged_cholesky(alpha, x, ridge)?;
    let inv = chol.inverse();
    Ok(inverse_gradient(&inv, x))
}

fn inverse_gradient(inv: &DMatrix<f64>, x: &DesignMatrix) -> Vec<f64> {
    let d = inv.nrows();
    let mut buf = vec![0.0; d];
    x.rows()
        .iter()
        .map(|row| {
            buf.iter_mut().for_each(|b| *b = 0.0);
            for &(j, xj) in row {
                for (b, g) in buf.iter_mut().zip(inv.column(j).iter()) {
                    *b += xj * g;
                }
            }
            -buf.iter().map(|b| b * b).sum::<f64>()
        })
        .collect()
}

/// Projections of the support of `target` onto the eigenbasis: column `k`
/// is `sqrt(target_x) V^T x` for the k-th supported path.
fn projected_support(target: &[f64], x: &DesignMatrix, vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let support: Vec<usize> = (0..target.len()).filter(|&i| target[i] > 0.0).collect();
    let d = vectors.nrows();
    let mut w = DMatrix::zeros(d, support.len());
    for (k, &i) in support.iter().enumerate() {
        let scale = target[i].sqrt();
        for &(j, xj) in x.row(i) {
            for m in 0..d {
                w[(m, k)] += scale * xj * vectors[(j, m)];
            }
        }
    }
    w
}

struct ALinearization<'a> {
    x: &'a DesignMatrix,
    ridge: f64,
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    value: f64,
    gradient: Vec<f64>,
}

/// Trace of `(diag(D) + rho W W^T)^-1` by the Woodbury identity.
fn trace_inverse_update(diag: &[f64], w: &DMatrix<f64>, rho: f64) -> f64 {
    let base: f64 = diag.iter().map(|d| 1.0 / d).sum();
    if rho == 0.0 || w.ncols() == 0 {
        return base;
    }
    let r = w.ncols();
    if r == 1 {
        let (mut s1, mut s2) = (0.0, 0.0);
        for (m, &dm) in diag.iter().enumerate() {
            let z2 = w[(m, 0)] * w[(m, 0)];
            s1 += z2 / dm;
            s2 += z2 / (dm * dm);
        }
        return base - rho * s2 / (1.0 + rho * s1);
    }
    let mut k = DMatrix::identity(r, r);
    let mut n = DMatrix::zeros(r, r);
    for a in 0..r {
        for b in a..r {
            let (mut s1, mut s2) = (0.0, 0.0);
            for (m, &dm) in diag.iter().enumerate() {
                let p = w[(m, a)] * w[(m, b)];
                s1 += p / dm;
                s2 += p / (dm * dm);
            }
            k[(a, b)] += rho * s1;
            k[(b, a)] = k[(a, b)];
            n[(a, b)] = s2;
            n[(b, a)] = s2;
        }
    }
    match k.cholesky() {
        Some(chol) => base - rho * chol.solve(&n).trace(),
        None => f64::INFINITY,
    }
}

impl Linearization for ALinearization<'_> {
    fn value(&self) -> f64 {
        self.value
    }

    fn gradient(&self) -> &[f64] {
        &self.gradient
    }

    fn segment<'a>(&'a self, target: &'a [f64]) -> Result<Box<dyn Fn(f64) -> f64 + 'a>> {
        let w = projected_support(target, self.x, &self.vectors);
        Ok(Box::new(move |c| {
            let diag: Vec<f64> = self.values.iter().map(|l| c * l + self.ridge).collect();
            if diag.iter().any(|&d| d <= 0.0) {
                return f64::INFINITY;
            }
            let v = trace_inverse_update(&diag, &w, 1.0 - c);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        }))
    }
}

/// Trace of the inverse ridged covariance, minimized by Frank-Wolfe.
pub struct AObjective<'a> {
    pub x: &'a DesignMatrix,
    pub ridge: f64,
}

impl Objective for AObjective<'_> {
    fn linearize(&self, alpha: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        check_alpha(alpha, self.x)?;
        let (mut values, vectors) = eigen(covariance(alpha, self.x));
        // G is PSD; clip roundoff below zero
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        let scale = values.last().copied().unwrap_or(0.0) + self.ridge;
        if values[0] + self.ridge <= 1e-14 * scale {
            return Err(Error::Singular);
        }
        let inv_diag: Vec<f64> = values.iter().map(|l| 1.0 / (l + self.ridge)).collect();
        let value = inv_diag.iter().sum();
        let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |r, c| vectors[(r, c)] * inv_diag[c]);
        let inv = &scaled * vectors.transpose();
        let gradient = inverse_gradient(&inv, self.x);
        Ok(Box::new(ALinearization { x: self.x, ridge: self.ridge, values, vectors, value, gradient }))
    }
}

struct ELinearization<'a> {
    x: &'a DesignMatrix,
    values: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
    vectors: DMatrix<f64>,
}

/// Number of negative eigenvalues of a small symmetric matrix.
fn negative_count(s: &DMatrix<f64>) -> usize {
    if s.nrows() == 1 {
        return usize::from(s[(0, 0)] < 0.0);
    }
    s.clone().symmetric_eigenvalues().iter().filter(|&&v| v < 0.0).count()
}

/// Smallest eigenvalue of `diag(D) + rho W W^T` by bisection on the
/// inertia, which the Haynsworth formula gives from `D - t` and an r x r
/// Schur complement.
fn min_eigenvalue_update(diag: &[f64], w: &DMatrix<f64>, rho: f64) -> f64 {
    let (kmin, dmin) = diag.iter().copied().enumerate().fold((0, f64::INFINITY), |acc, (i, v)| {
        if v < acc.1 {
            (i, v)
        } else {
            acc
        }
    });
    let r = w.ncols();
    if rho == 0.0 || r == 0 {
        return dmin;
    }
    let row_norm: f64 = (0..r).map(|k| w[(kmin, k)] * w[(kmin, k)]).sum();
    let mut lo = dmin;
    let mut hi = dmin + rho * row_norm;
    // count of eigenvalues strictly below t
    let below = |t: f64| -> usize {
        let shifted: Vec<f64> = diag.iter().map(|d| d - t).collect();
        let neg_d = shifted.iter().filter(|&&v| v < 0.0).count();
        let mut s = DMatrix::zeros(r, r);
        for a in 0..r {
            for b in a..r {
                let dot: f64 = shifted.iter().enumerate().map(|(m, &dm)| w[(m, a)] * w[(m, b)] / dm).sum();
                s[(a, b)] = -dot;
                s[(b, a)] = -dot;
            }
            s[(a, a)] -= 1.0 / rho;
        }
        (neg_d + negative_count(&s)).saturating_sub(r)
    };
    for _ in 0..200 {
        let mut mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if diag.contains(&mid) {
            mid = mid.next_up();
            if mid >= hi {
                break;
            }
        }
        if below(mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

impl Linearization for ELinearization<'_> {
    fn value(&self) -> f64 {
        self.value
    }

    fn gradient(&self) -> &[f64] {
        &self.gradient
    }

    fn segment<'a>(&'a self, target: &'a [f64]) -> Result<Box<dyn Fn(f64) -> f64 + 'a>> {
        let w = projected_support(target, self.x, &self.vectors);
        Ok(Box::new(move |c| {
            let diag: Vec<f64> = self.values.iter().map(|l| c * l).collect();
            -min_eigenvalue_update(&diag, &w, 1.0 - c)
        }))
    }
}

/// Negated smallest eigenvalue of the covariance, minimized by
/// Frank-Wolfe.
pub struct EObjective<'a> {
    pub x: &'a DesignMatrix,
}

impl Objective for EObjective<'_> {
    fn linearize(&self, alpha: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        check_alpha(alpha, self.x)?;
        let (values, vectors) = eigen(covariance(alpha, self.x));
        let v: Vec<f64> = vectors.column(0).iter().copied().collect();
        let gradient = (0..self.x.n_rows()).map(|i| -self.x.dot(i, &v).powi(2)).collect();
        Ok(Box::new(ELinearization { x: self.x, value: -values[0], values, gradient, vectors }))
    }
}

fn uniform_alpha(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn fw_e_optimal(x: &DesignMatrix, constraints: &ConstraintSet, config: &FwConfig) -> Result<ProbingDistribution> {
    frank_wolfe(&EObjective { x }, constraints, config, &uniform_alpha(x.n_rows()), E_OPTIMAL)
}

/// Ridge used by the A-design: `ridge_scale` times the mean diagonal of
/// the uniform-distribution covariance.
pub fn a_ridge(x: &DesignMatrix, config: &FwConfig) -> f64 {
    let n = x.n_rows() as f64;
    let total: f64 = x.rows().iter().flat_map(|r| r.iter().map(|(_, v)| v * v)).sum();
    config.ridge_scale * total / (n * x.dim() as f64)
}

pub fn fw_a_optimal(x: &DesignMatrix, constraints: &ConstraintSet, config: &FwConfig) -> Result<ProbingDistribution> {
    let ridge = a_ridge(x, config);
    frank_wolfe(&AObjective { x, ridge }, constraints, config, &uniform_alpha(x.n_rows()), A_OPTIMAL)
}

pub fn uniform_design(n_paths: usize) -> ProbingDistribution {
    ProbingDistribution::new(uniform_alpha(n_paths), UNIFORM, Vec::new())
}

/// Path indices chosen by the QR baseline: the SVD `M = U S V^T`, keep the
/// first `k = rank(M)` left singular vectors, and run column-pivoted QR on
/// `U_k^T`; the first `k` pivots are the selected paths.
pub fn qr_selection(x: &DesignMatrix) -> Result<Vec<usize>> {
    if x.n_rows() == 0 {
        return Err(Error::EmptyPathSet);
    }
    let m = x.to_dense();
    let svd = m.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sigma = &svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let smax = sigma[order[0]];
    let k = order.iter().filter(|&&i| sigma[i] > QR_RANK_THRESHOLD * smax).count();
    if k == 0 {
        return Err(Error::Singular);
    }
    // Column j of U_k^T is row j of U_k.
    let n = x.n_rows();
    let mut cols: Vec<DVector<f64>> =
        (0..n).map(|r| DVector::from_iterator(k, order[..k].iter().map(|&c| u[(r, c)]))).collect();
    let mut norms: Vec<f64> = cols.iter().map(|c| c.norm_squared()).collect();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    for _ in 0..k {
        let mut best = usize::MAX;
        for j in 0..n {
            if !taken[j] && (best == usize::MAX || norms[j] > norms[best]) {
                best = j;
            }
        }
        taken[best] = true;
        chosen.push(best);
        let q = &cols[best] / norms[best].sqrt();
        for j in 0..n {
            if taken[j] {
                continue;
            }
            let proj = q.dot(&cols[j]);
            cols[j].axpy(-proj, &q, 1.0);
            norms[j] = cols[j].norm_squared();
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn qr_design(x: &DesignMatrix) -> Result<ProbingDistribution> {
    let chosen = qr_selection(x)?;
    let mut alpha = vec![0.0; x.n_rows()];
    let share = 1.0 / chosen.len() as f64;
    for i in chosen {
        alpha[i] = share;
    }
    Ok(ProbingDistribution::new(alpha, QR, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(rows: &[&[f64]]) -> DesignMatrix {
        DesignMatrix::from_dense(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn basis(d: usize) -> DesignMatrix {
        let rows: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        DesignMatrix::from_dense(&rows).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn e_objective_examples() {
        let x = basis(2);
        assert!(close(e_objective(&[0.5, 0.5], &x).unwrap(), -0.5, 1e-14));
        assert!(close(e_objective(&[1.0, 0.0], &x).unwrap(), 0.0, 1e-14));
        let x = dm(&[&[1.0, 0.0], &[0.0, 2.0]]);
        assert!(close(e_objective(&[0.8, 0.2], &x).unwrap(), -0.8, 1e-12));
    }

    #[test]
    fn e_gradient_examples() {
        let x = basis(2);
        let g = e_gradient(&[0.4, 0.6], &x).unwrap();
        assert!(close(g[0], -1.0, 1e-12) && close(g[1], 0.0, 1e-12), "{g:?}");
        let x = dm(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let g = e_gradient(&[0.5, 0.5], &x).unwrap();
        assert!(close(g[0], -1.0, 1e-12) && close(g[1], 0.0, 1e-12), "{g:?}");
    }

    #[test]
    fn a_objective_examples() {
        assert!(close(a_objective(&[0.5, 0.5], &basis(2), 0.0).unwrap(), 4.0, 1e-12));
        let x = dm(&[&[1.0, 0.0], &[0.0, 2.0]]);
        assert!(close(a_objective(&[2.0 / 3.0, 1.0 / 3.0], &x, 0.0).unwrap(), 2.25, 1e-12));
        assert!(matches!(a_objective(&[1.0, 0.0], &x, 0.0), Err(Error::Singular)));
    }

    #[test]
    fn a_gradient_examples() {
        let g = a_gradient(&[1.0, 1.0], &basis(2), 0.0).unwrap();
        assert!(close(g[0], -1.0, 1e-12) && close(g[1], -1.0, 1e-12));
        let x = dm(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let g = a_gradient(&[2.0 / 3.0, 1.0 / 3.0], &x, 0.0).unwrap();
        assert!(close(g[0], -2.25, 1e-12) && close(g[1], -2.25, 1e-12), "{g:?}");
    }

    #[test]
    fn fw_two_path_optima() {
        let x = dm(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let c = ConstraintSet::simplex(2);
        let cfg = FwConfig { ridge_scale: 0.0, ..FwConfig::default() };
        let a = fw_a_optimal(&x, &c, &cfg).unwrap();
        assert!(close(a.alpha[0], 2.0 / 3.0, 1e-3), "{:?}", a.alpha);
        assert_eq!(a.design_name, A_OPTIMAL);
        let e = fw_e_optimal(&x, &c, &cfg).unwrap();
        assert!(close(e.alpha[0], 0.8, 1e-3), "{:?}", e.alpha);
        assert_eq!(e.design_name, E_OPTIMAL);
    }

    #[test]
    fn fw_basis_is_uniform() {
        let x = basis(3);
        let c = ConstraintSet::simplex(3);
        let cfg = FwConfig::default();
        for dist in [fw_a_optimal(&x, &c, &cfg).unwrap(), fw_e_optimal(&x, &c, &cfg).unwrap()] {
            for a in &dist.alpha {
                assert!(close(*a, 1.0 / 3.0, 1e-3), "{:?}", dist.alpha);
            }
        }
        let e = fw_e_optimal(&x, &c, &cfg).unwrap();
        assert!(close(e_objective(&e.alpha, &x).unwrap(), -1.0 / 3.0, 1e-3));
    }

    #[test]
    fn single_path_designs() {
        let x = dm(&[&[1.0]]);
        let c = ConstraintSet::simplex(1);
        assert_eq!(fw_e_optimal(&x, &c, &FwConfig::default()).unwrap().alpha, vec![1.0]);
        assert_eq!(qr_design(&x).unwrap().alpha, vec![1.0]);
        assert_eq!(uniform_design(1).alpha, vec![1.0]);
    }

    #[test]
    fn infeasible_caps_propagate() {
        let x = basis(2);
        let c = ConstraintSet::with_caps(2, Some((vec![0, 1], vec![0.9, 0.1])), Some((vec![0, 1], vec![0.1, 0.9])))
            .unwrap();
        assert!(fw_a_optimal(&x, &c, &FwConfig::default()).is_err());
    }

    #[test]
    fn qr_on_line_graph() {
        let x = dm(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let chosen = qr_selection(&x).unwrap();
        assert_eq!(chosen.len(), 2);
        let sub: Vec<Vec<f64>> =
            chosen.iter().map(|&i| x.to_dense().row(i).iter().copied().collect()).collect();
        let m = DMatrix::from_fn(2, 2, |r, c| sub[r][c]);
        assert!(m.determinant().abs() > 0.5);
        let q = qr_design(&x).unwrap();
        assert_eq!(q.alpha.iter().filter(|&&a| a == 0.5).count(), 2);
    }

    #[test]
    fn uniform_sums_to_one() {
        let u = uniform_design(5050);
        assert!((u.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(uniform_design(4).alpha, vec![0.25; 4]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in DesignMethod::ALL {
            assert_eq!(m.key().parse::<DesignMethod>().unwrap(), m);
        }
        assert!("d_optimal".parse::<DesignMethod>().is_err());
    }
}
