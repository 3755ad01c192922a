//! Probe allocation and observation sources: the latency simulator, the
//! packet-loss simulator, and replay from recorded probe pools.
//!
//! All randomness flows through [`ProbeRng`] (ChaCha8 seeded from a `u64`),
//! so a seed reproduces a dataset bit for bit on every platform.

use std::fs;
use std::path::Path as FsPath;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::DesignMatrix;

pub type ProbeRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> ProbeRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    #[default]
    Multinomial,
    ExpectedRounding,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeAllocation {
    pub counts: Vec<usize>,
    pub n: usize,
}

/// Splits a budget of `n` probes over paths according to `alpha`.
///
/// Multinomial mode draws the counts as sequential conditional binomials.
/// Rounding mode floors `alpha_x * n` and hands the remaining probes to
/// the largest fractional parts (lowest index on ties).
pub fn allocate_probes(alpha: &[f64], n: usize, mode: AllocationMode, rng: &mut ProbeRng) -> Result<ProbeAllocation> {
    if n == 0 {
        return Err(Error::InvalidArgument("probe budget must be at least 1".into()));
    }
    if alpha.is_empty() || alpha.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::InvalidArgument("distribution must be nonempty and nonnegative".into()));
    }
    let total: f64 = alpha.iter().sum();
    let mut counts = vec![0usize; alpha.len()];
    match mode {
        AllocationMode::Multinomial => {
            let mut remaining = n as u64;
            let mut mass = total;
            let last = alpha.iter().rposition(|&a| a > 0.0).unwrap_or(alpha.len() - 1);
            for (i, &a) in alpha.iter().enumerate() {
                if remaining == 0 {
                    break;
                }
                if i == last {
                    counts[i] = remaining as usize;
                    break;
                }
                if a == 0.0 {
                    continue;
                }
                let p = (a / mass).clamp(0.0, 1.0);
                let k = Binomial::new(remaining, p).expect("valid binomial").sample(rng);
                counts[i] = k as usize;
                remaining -= k;
                mass -= a;
            }
        }
        AllocationMode::ExpectedRounding => {
            let targets: Vec<f64> = alpha.iter().map(|a| a / total * n as f64).collect();
            for (c, t) in counts.iter_mut().zip(&targets) {
                *c = t.floor() as usize;
            }
            let assigned: usize = counts.iter().sum();
            let mut order: Vec<usize> = (0..alpha.len()).collect();
            order.sort_by(|&a, &b| {
                let fa = targets[a] - targets[a].floor();
                let fb = targets[b] - targets[b].floor();
                fb.total_cmp(&fa).then(a.cmp(&b))
            });
            for &i in order.iter().take(n.saturating_sub(assigned)) {
                counts[i] += 1;
            }
        }
    }
    Ok(ProbeAllocation { counts, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LatencyS,
    LossIndicator,
}

/// Collected `(path index, observation)` records.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub records: Vec<(usize, f64)>,
    pub metric: Metric,
    /// Set when replay had to sample some pool with replacement.
    pub with_replacement: bool,
}

impl ProbeDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-path probe counts and observation sums.
    pub fn per_path(&self, n_paths: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut counts = vec![0.0; n_paths];
        let mut sums = vec![0.0; n_paths];
        for &(i, y) in &self.records {
            if i >= n_paths {
                return Err(Error::InvalidArgument(format!("record references path {i} of {n_paths}")));
            }
            counts[i] += 1.0;
            sums[i] += y;
        }
        Ok((counts, sums))
    }
}

fn check_dims(allocation: &ProbeAllocation, x: &DesignMatrix, theta: &[f64]) -> Result<()> {
    if allocation.counts.len() != x.n_rows() {
        return Err(Error::InvalidArgument("allocation does not match the path set".into()));
    }
    if theta.len() != x.dim() {
        return Err(Error::InvalidArgument(format!(
            "parameter vector has {} entries for {} edges",
            theta.len(),
            x.dim()
        )));
    }
    Ok(())
}

/// Observation `x^T theta + N(0, sigma^2)` per probe.
pub fn simulate_latency(
    allocation: &ProbeAllocation,
    x: &DesignMatrix,
    theta_latency: &[f64],
    sigma: f64,
    rng: &mut ProbeRng,
) -> Result<ProbeDataset> {
    check_dims(allocation, x, theta_latency)?;
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise level {sigma} must be nonnegative")));
    }
    let noise = Normal::new(0.0, sigma).expect("valid normal");
    let mut records = Vec::with_capacity(allocation.n);
    for (i, &count) in allocation.counts.iter().enumerate() {
        let mean = x.dot(i, theta_latency);
        for _ in 0..count {
            let eps = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            records.push((i, mean + eps));
        }
    }
    Ok(ProbeDataset { records, metric: Metric::LatencyS, with_replacement: false })
}

/// Bernoulli survival indicator with mean `exp(x^T theta)` per probe.
pub fn simulate_loss(
    allocation: &ProbeAllocation,
    x: &DesignMatrix,
    theta_loss: &[f64],
    rng: &mut ProbeRng,
) -> Result<ProbeDataset> {
    check_dims(allocation, x, theta_loss)?;
    let mut records = Vec::with_capacity(allocation.n);
    for i in 0..x.n_rows() {
        let eta = x.dot(i, theta_loss);
        if eta > 0.0 {
            return Err(Error::PositiveLogProbability { path: i, value: eta });
        }
        let p = eta.exp();
        for _ in 0..allocation.counts[i] {
            let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            records.push((i, y));
        }
    }
    Ok(ProbeDataset { records, metric: Metric::LossIndicator, with_replacement: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolPath {
    pub path: Vec<usize>,
    pub observations: Vec<f64>,
}

/// Recorded per-path observations used in place of live probing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePool {
    pub metric: Metric,
    pub paths: Vec<PoolPath>,
}

impl ProbePool {
    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let pool: ProbePool = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        if pool.metric == Metric::LossIndicator {
            for (i, p) in pool.paths.iter().enumerate() {
                if p.observations.iter().any(|&y| y != 0.0 && y != 1.0) {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        message: format!("path {i}: loss observations must be 0 or 1"),
                    });
                }
            }
        }
        Ok(pool)
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("pool serializes");
        fs::write(path, text + "\n").map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn edge_lists(&self) -> Vec<Vec<usize>> {
        self.paths.iter().map(|p| p.path.clone()).collect()
    }

    /// Empirical mean of each path's pool.
    pub fn path_means(&self) -> Vec<f64> {
        self.paths
            .iter()
            .map(|p| {
                if p.observations.is_empty() {
                    f64::NAN
                } else {
                    p.observations.iter().sum::<f64>() / p.observations.len() as f64
                }
            })
            .collect()
    }

    /// Synthetic pool: between `min_probes` and `max_probes` latency
    /// observations per path from the Gaussian latency model.
    pub fn simulate_latency(
        edge_lists: &[Vec<usize>],
        x: &DesignMatrix,
        theta_latency: &[f64],
        sigma: f64,
        min_probes: usize,
        max_probes: usize,
        rng: &mut ProbeRng,
    ) -> Result<Self> {
        if min_probes == 0 || min_probes > max_probes {
            return Err(Error::InvalidArgument("need 1 <= min_probes <= max_probes".into()));
        }
        let counts: Vec<usize> = (0..x.n_rows()).map(|_| rng.random_range(min_probes..=max_probes)).collect();
        let n = counts.iter().sum();
        let data = simulate_latency(&ProbeAllocation { counts: counts.clone(), n }, x, theta_latency, sigma, rng)?;
        let mut paths: Vec<PoolPath> = edge_lists
            .iter()
            .zip(&counts)
            .map(|(p, &c)| PoolPath { path: p.clone(), observations: Vec::with_capacity(c) })
            .collect();
        for (i, y) in data.records {
            paths[i].observations.push(y);
        }
        Ok(ProbePool { metric: Metric::LatencyS, paths })
    }
}

/// Draws each path's allocated observations uniformly without replacement
/// from its pool, falling back to sampling with replacement (and setting
/// the dataset flag) when the allocation exceeds the pool size.
pub fn replay(allocation: &ProbeAllocation, pool: &ProbePool, rng: &mut ProbeRng) -> Result<ProbeDataset> {
    if allocation.counts.len() != pool.paths.len() {
        return Err(Error::InvalidArgument("allocation does not match the probe pool".into()));
    }
    let mut records = Vec::with_capacity(allocation.n);
    let mut with_replacement = false;
    for (i, (&count, entry)) in allocation.counts.iter().zip(&pool.paths).enumerate() {
        if count == 0 {
            continue;
        }
        let obs = &entry.observations;
        if obs.is_empty() {
            return Err(Error::EmptyPool(i));
        }
        if count <= obs.len() {
            for k in index::sample(rng, obs.len(), count) {
                records.push((i, obs[k]));
            }
        } else {
            with_replacement = true;
            for _ in 0..count {
                records.push((i, obs[rng.random_range(0..obs.len())]));
            }
        }
    }
    Ok(ProbeDataset { records, metric: pool.metric, with_replacement })
}
