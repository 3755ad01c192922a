//! Frank-Wolfe over the probing-distribution polytope.
//!
//! Each iteration linearizes the objective at the current distribution,
//! solves the linear program over the feasible set exactly, and takes the
//! best point on the segment between the iterate and the LP vertex. The
//! line-search parameter `c` weights the old iterate:
//! `next = c * current + (1 - c) * vertex`.

mod flow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for simplex and cap feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FwConfig {
    pub iterations: usize,
    pub line_search_tolerance: f64,
    /// A-objective ridge, relative to the mean diagonal of the covariance
    /// of the uniform distribution.
    pub ridge_scale: f64,
}

impl Default for FwConfig {
    fn default() -> Self {
        FwConfig { iterations: 300, line_search_tolerance: 1e-6, ridge_scale: 1e-9 }
    }
}

impl FwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if !(self.line_search_tolerance > 0.0) {
            return Err(Error::InvalidArgument("line search tolerance must be positive".into()));
        }
        if !(self.ridge_scale >= 0.0) {
            return Err(Error::InvalidArgument("ridge scale must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbingDistribution {
    pub alpha: Vec<f64>,
    pub design_name: String,
    pub objective_trace: Vec<f64>,
}

impl ProbingDistribution {
    /// Wraps `alpha`, renormalizing it to sum to one exactly.
    pub fn new(mut alpha: Vec<f64>, design_name: impl Into<String>, objective_trace: Vec<f64>) -> Self {
        let total: f64 = alpha.iter().sum();
        alpha.iter_mut().for_each(|a| *a = a.max(0.0) / total);
        ProbingDistribution { alpha, design_name: design_name.into(), objective_trace }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// A cap partition: every path belongs to exactly one group.
#[derive(Debug, Clone, PartialEq)]
struct Partition {
    group_of: Vec<usize>,
    caps: Vec<f64>,
}

/// Feasible set: the probability simplex over paths, optionally
/// intersected with per-source and per-destination caps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    n_paths: usize,
    source: Option<Partition>,
    destination: Option<Partition>,
}

impl ConstraintSet {
    pub fn simplex(n_paths: usize) -> Self {
        ConstraintSet { n_paths, source: None, destination: None }
    }

    /// Caps from explicit group assignments. `source_groups[x]` indexes
    /// into `source_caps`; likewise for destinations. Either side may be
    /// absent.
    pub fn with_caps(
        n_paths: usize,
        source: Option<(Vec<usize>, Vec<f64>)>,
        destination: Option<(Vec<usize>, Vec<f64>)>,
    ) -> Result<Self> {
        let check = |side: &str, part: Option<(Vec<usize>, Vec<f64>)>| -> Result<Option<Partition>> {
            let Some((group_of, caps)) = part else { return Ok(None) };
            if group_of.len() != n_paths {
                return Err(Error::InvalidArgument(format!("{side} groups: expected {n_paths} entries")));
            }
            if let Some(&g) = group_of.iter().find(|&&g| g >= caps.len()) {
                return Err(Error::InvalidArgument(format!("{side} group {g} has no cap")));
            }
            if let Some(c) = caps.iter().find(|c| !(**c > 0.0)) {
                return Err(Error::Infeasible(format!("{side} cap {c} must be positive")));
            }
            let mut used = vec![false; caps.len()];
            group_of.iter().for_each(|&g| used[g] = true);
            let total: f64 = caps.iter().zip(&used).filter(|(_, &u)| u).map(|(c, _)| c.min(1.0)).sum();
            if total < 1.0 - FEASIBILITY_TOL {
                return Err(Error::Infeasible(format!("{side} caps sum to {total} < 1")));
            }
            Ok(Some(Partition { group_of, caps }))
        };
        let source = check("source", source)?;
        let destination = check("destination", destination)?;
        Ok(ConstraintSet { n_paths, source, destination })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn has_caps(&self) -> bool {
        self.source.is_some() || self.destination.is_some()
    }

    /// Every active cap as (member paths, cap).
    pub fn local_caps(&self) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::new();
        for part in [&self.source, &self.destination].into_iter().flatten() {
            let mut members = vec![Vec::new(); part.caps.len()];
            for (x, &g) in part.group_of.iter().enumerate() {
                members[g].push(x);
            }
            out.extend(members.into_iter().zip(part.caps.iter().copied()).filter(|(m, _)| !m.is_empty()));
        }
        out
    }

    fn source_partition(&self) -> (Vec<usize>, Vec<f64>) {
        Self::partition_or_trivial(&self.source, self.n_paths)
    }

    fn destination_partition(&self) -> (Vec<usize>, Vec<f64>) {
        Self::partition_or_trivial(&self.destination, self.n_paths)
    }

    fn partition_or_trivial(part: &Option<Partition>, n: usize) -> (Vec<usize>, Vec<f64>) {
        match part {
            Some(p) => (p.group_of.clone(), p.caps.clone()),
            None => (vec![0; n], vec![1.0]),
        }
    }

    /// Largest violation of any constraint (0 when feasible).
    pub fn violation(&self, alpha: &[f64]) -> f64 {
        let mut worst = (alpha.iter().sum::<f64>() - 1.0).abs();
        worst = alpha.iter().fold(worst, |w, &a| w.max(-a));
        for part in [&self.source, &self.destination].into_iter().flatten() {
            let mut load = vec![0.0; part.caps.len()];
            for (&g, &a) in part.group_of.iter().zip(alpha) {
                load[g] += a;
            }
            for (l, c) in load.iter().zip(&part.caps) {
                worst = worst.max(l - c);
            }
        }
        worst
    }

    pub fn is_feasible(&self, alpha: &[f64]) -> bool {
        alpha.len() == self.n_paths && self.violation(alpha) <= FEASIBILITY_TOL
    }
}

/// Per-source and per-destination caps `count(v) / |X| + b`, or the plain
/// simplex when `excess_budget` is `None`.
pub fn build_constraints(endpoints: &[(usize, usize)], excess_budget: Option<f64>) -> Result<ConstraintSet> {
    let n = endpoints.len();
    let Some(b) = excess_budget else {
        return Ok(ConstraintSet::simplex(n));
    };
    if !(b >= 0.0) {
        return Err(Error::InvalidArgument(format!("excess local budget {b} must be nonnegative")));
    }
    let partition = |node_of: &dyn Fn(&(usize, usize)) -> usize| {
        let mut nodes: Vec<usize> = endpoints.iter().map(node_of).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let group_of: Vec<usize> =
            endpoints.iter().map(|e| nodes.binary_search(&node_of(e)).unwrap()).collect();
        let mut counts = vec![0usize; nodes.len()];
        group_of.iter().for_each(|&g| counts[g] += 1);
        let caps = counts.iter().map(|&c| c as f64 / n as f64 + b).collect();
        (group_of, caps)
    };
    let source = partition(&|e| e.0);
    let destination = partition(&|e| e.1);
    ConstraintSet::with_caps(n, Some(source), Some(destination))
}

/// Exact minimizer of `gradient . alpha` over the feasible set. Without
/// caps this is the simplex vertex at the smallest gradient entry (lowest
/// index on ties).
pub fn lp_oracle(gradient: &[f64], constraints: &ConstraintSet) -> Result<Vec<f64>> {
    if gradient.len() != constraints.n_paths {
        return Err(Error::InvalidArgument(format!(
            "gradient has {} entries for {} paths",
            gradient.len(),
            constraints.n_paths
        )));
    }
    if constraints.n_paths == 0 {
        return Err(Error::EmptyPathSet);
    }
    if !constraints.has_caps() {
        let mut best = 0;
        for (i, &g) in gradient.iter().enumerate() {
            if g < gradient[best] {
                best = i;
            }
        }
        let mut vertex = vec![0.0; gradient.len()];
        vertex[best] = 1.0;
        return Ok(vertex);
    }
    flow::capped_oracle(gradient, constraints)
}

/// Golden-section search for the minimizer of `phi` on [0, 1], falling
/// back to the better endpoint when the interior point is not better.
/// Returns `(c, phi(c))`.
pub fn line_search(phi: &dyn Fn(f64) -> f64, tol: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = phi(x1);
    let mut f2 = phi(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = phi(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = phi(x2);
        }
    }
    let (mut best_c, mut best_f) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for c in [1.0, 0.0] {
        let f = phi(c);
        if f < best_f || (f == best_f && c == 1.0) {
            best_c = c;
            best_f = f;
        }
    }
    (best_c, best_f)
}

/// Objective value, gradient, and segment evaluator at one point.
pub trait Linearization {
    fn value(&self) -> f64;

    fn gradient(&self) -> &[f64];

    /// `c -> f(c * current + (1 - c) * target)`.
    fn segment<'a>(&'a self, target: &'a [f64]) -> Result<Box<dyn Fn(f64) -> f64 + 'a>>;
}

/// A convex function of the probing distribution.
pub trait Objective {
    fn linearize(&self, alpha: &[f64]) -> Result<Box<dyn Linearization + '_>>;
}

/// Objective from a value closure and a gradient closure; segment
/// evaluation re-evaluates the value at the mixed point.
pub struct FnObjective<F, G> {
    pub value: F,
    pub gradient: G,
}

struct FnLinearization<'a, F> {
    value_fn: &'a F,
    alpha: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn linearize(&self, alpha: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        Ok(Box::new(FnLinearization {
            value_fn: &self.value,
            alpha: alpha.to_vec(),
            value: (self.value)(alpha),
            gradient: (self.gradient)(alpha),
        }))
    }
}

impl<F: Fn(&[f64]) -> f64> Linearization for FnLinearization<'_, F> {
    fn value(&self) -> f64 {
        self.value
    }

    fn gradient(&self) -> &[f64] {
        &self.gradient
    }

    fn segment<'a>(&'a self, target: &'a [f64]) -> Result<Box<dyn Fn(f64) -> f64 + 'a>> {
        Ok(Box::new(move |c| {
            let mixed: Vec<f64> = self.alpha.iter().zip(target).map(|(a, t)| c * a + (1.0 - c) * t).collect();
            (self.value_fn)(&mixed)
        }))
    }
}

/// Runs `config.iterations` Frank-Wolfe steps from `init`. The trace holds
/// the exact objective at `init` followed by its value after each
/// iteration. A step whose exact value is worse than the current one is
/// rejected, so the trace is nonincreasing.
pub fn frank_wolfe(
    objective: &dyn Objective,
    constraints: &ConstraintSet,
    config: &FwConfig,
    init: &[f64],
    design_name: &str,
) -> Result<ProbingDistribution> {
    config.validate()?;
    if init.len() != constraints.n_paths {
        return Err(Error::InvalidArgument(format!(
            "initial distribution has {} entries for {} paths",
            init.len(),
            constraints.n_paths
        )));
    }
    if !constraints.is_feasible(init) {
        return Err(Error::Infeasible("initial distribution violates the constraints".into()));
    }
    let mut alpha = init.to_vec();
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let first = objective.linearize(&alpha)?;
    trace.push(first.value());
    if constraints.n_paths == 1 {
        return Ok(ProbingDistribution::new(alpha, design_name, trace));
    }
    let mut current = first;
    for _ in 0..config.iterations {
        let vertex = lp_oracle(current.gradient(), constraints)?;
        let phi = current.segment(&vertex)?;
        let (c, _) = line_search(&*phi, config.line_search_tolerance);
        drop(phi);
        if c < 1.0 {
            let candidate: Vec<f64> = alpha.iter().zip(&vertex).map(|(a, v)| c * a + (1.0 - c) * v).collect();
            let next = objective.linearize(&candidate)?;
            // the segment evaluator can disagree with the exact value in the
            // last few bits; never accept a step that is worse
            if next.value() <= current.value() {
                alpha = candidate;
                current = next;
            }
        }
        trace.push(current.value());
    }
    Ok(ProbingDistribution::new(alpha, design_name, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_oracle_picks_argmin() {
        let c = ConstraintSet::simplex(3);
        assert_eq!(lp_oracle(&[3.0, 1.0, 2.0], &c).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(lp_oracle(&[1.0, 1.0, 1.0], &c).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(lp_oracle(&[1.0], &c).is_err());
    }

    #[test]
    fn capped_oracle_small_instance() {
        // paths 0,1 from source s1; paths 2,3 from s2; caps 0.5 each
        let c = ConstraintSet::with_caps(4, Some((vec![0, 0, 1, 1], vec![0.5, 0.5])), None).unwrap();
        let v = lp_oracle(&[0.0, 1.0, 2.0, 3.0], &c).unwrap();
        for (a, b) in v.iter().zip([0.5, 0.0, 0.5, 0.0]) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn infeasible_caps_rejected() {
        let err = ConstraintSet::with_caps(2, Some((vec![0, 1], vec![0.3, 0.3])), None).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
        // each side fine alone, but the joint flow cannot reach one unit
        let c = ConstraintSet::with_caps(
            2,
            Some((vec![0, 1], vec![0.9, 0.1])),
            Some((vec![0, 1], vec![0.1, 0.9])),
        )
        .unwrap();
        assert!(matches!(lp_oracle(&[0.0, 0.0], &c), Err(Error::Infeasible(_))));
    }

    #[test]
    fn build_constraints_caps() {
        assert!(!build_constraints(&[(0, 1), (0, 2)], None).unwrap().has_caps());
        let endpoints = [(0, 1), (0, 2), (1, 2), (1, 3)];
        let c = build_constraints(&endpoints, Some(0.1)).unwrap();
        let caps = c.local_caps();
        let node0 = caps.iter().find(|(m, _)| m == &vec![0, 1]).unwrap();
        assert!((node0.1 - 0.6).abs() < 1e-15);
        assert!(build_constraints(&endpoints, Some(-0.1)).is_err());
    }

    #[test]
    fn zero_excess_on_star_keeps_uniform_feasible() {
        // star centered at node 0 with leaves 1..3
        let endpoints = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let c = build_constraints(&endpoints, Some(0.0)).unwrap();
        let uniform = vec![1.0 / 6.0; 6];
        assert!(c.is_feasible(&uniform));
        let v = lp_oracle(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], &c).unwrap();
        assert!(c.is_feasible(&v));
        // every cap binds at the vertex because the shares sum to one
        for (members, cap) in c.local_caps() {
            let load: f64 = members.iter().map(|&x| v[x]).sum();
            assert!((load - cap).abs() < 1e-12);
        }
    }

    #[test]
    fn line_search_quadratic_and_boundary() {
        let (c, _) = line_search(&|c| (c - 0.3) * (c - 0.3), 1e-6);
        assert!((c - 0.3).abs() < 1e-6);
        let (c, _) = line_search(&|c| -c, 1e-6);
        assert_eq!(c, 1.0);
        let (c, _) = line_search(&|c| c, 1e-6);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn line_search_on_two_path_a_objective() {
        // current (1/2, 1/2), target (1, 0): a = c/2 + (1 - c)
        let phi = |c: f64| {
            let a = 0.5 * c + (1.0 - c);
            1.0 / a + 1.0 / (4.0 * (1.0 - a))
        };
        let (c, value) = line_search(&phi, 1e-9);
        // optimum at a = 2/3
        assert!((0.5 * c + (1.0 - c) - 2.0 / 3.0).abs() < 1e-6);
        assert!((value - 2.25).abs() < 1e-9);
    }

    #[allow(clippy::type_complexity)]
    fn barycenter_objective() -> FnObjective<impl Fn(&[f64]) -> f64, impl Fn(&[f64]) -> Vec<f64>> {
        FnObjective {
            value: |a: &[f64]| a.iter().map(|x| (x - 1.0 / 3.0).powi(2)).sum(),
            gradient: |a: &[f64]| a.iter().map(|x| 2.0 * (x - 1.0 / 3.0)).collect(),
        }
    }

    #[test]
    fn frank_wolfe_reaches_barycenter() {
        let obj = barycenter_objective();
        let c = ConstraintSet::simplex(3);
        let out = frank_wolfe(&obj, &c, &FwConfig::default(), &[1.0, 0.0, 0.0], "test").unwrap();
        for a in &out.alpha {
            assert!((a - 1.0 / 3.0).abs() < 1e-4, "{:?}", out.alpha);
        }
        assert_eq!(out.objective_trace.len(), 301);
        assert!(out.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn single_path_is_unchanged() {
        let obj = barycenter_objective();
        let out = frank_wolfe(&obj, &ConstraintSet::simplex(1), &FwConfig::default(), &[1.0], "x").unwrap();
        assert_eq!(out.alpha, vec![1.0]);
    }

    #[test]
    fn rejects_infeasible_start() {
        let obj = barycenter_objective();
        let r = frank_wolfe(&obj, &ConstraintSet::simplex(3), &FwConfig::default(), &[0.5, 0.0, 0.0], "x");
        assert!(r.is_err());
    }
}
