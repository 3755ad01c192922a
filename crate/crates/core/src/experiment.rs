//! End-to-end experiments: compute each design once, then for every budget
//! run independent probe / fit / evaluate rounds and aggregate the errors.
//!
//! Run `r` draws all of its randomness from `rng_from_seed(seed + r)`, the
//! same stream for every design and budget, so parallel and serial
//! execution give identical tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{compute_design, DesignMethod};
use crate::error::{Error, Result};
use crate::estimate::{fit_least_squares, fit_log_linear, Family, GlmOptions};
use crate::evaluation::{evaluate, path_distribution, predicted_error_bound, PathDistribution, PredictedErrors, Truth};
use crate::fw::{build_constraints, FwConfig, ProbingDistribution};
use crate::probe::{
    allocate_probes, replay, rng_from_seed, simulate_latency, simulate_loss, AllocationMode, Metric, ProbePool,
};
use crate::topology::{default_radius, design_matrix, ground_truth, path_set, DesignMatrix, Topology};

/// Ridge used when a realized dataset leaves the least-squares problem
/// rank deficient.
pub const FALLBACK_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySource {
    File(PathBuf),
    Generate {
        nodes: usize,
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Latency,
    Loss,
    Replay,
}

fn default_runs() -> usize {
    300
}

fn default_sigma() -> f64 {
    0.01
}

fn default_delta() -> f64 {
    0.05
}

fn default_designs() -> Vec<DesignMethod> {
    DesignMethod::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySource,
    #[serde(default)]
    pub metric: MetricKind,
    /// Probe pool for replay experiments.
    #[serde(default)]
    pub pool: Option<PathBuf>,
    pub budgets: Vec<usize>,
    #[serde(default = "default_designs")]
    pub designs: Vec<DesignMethod>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub fw: FwConfig,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Excess local budget `b`; enables per-source and per-destination caps.
    #[serde(default)]
    pub excess_budget: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub allocation: AllocationMode,
    /// Confidence parameter for predicted-error curves.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub glm: GlmOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(topology: TopologySource, budgets: Vec<usize>) -> Self {
        ExperimentConfig {
            topology,
            metric: MetricKind::Latency,
            pool: None,
            budgets,
            designs: default_designs(),
            runs: default_runs(),
            fw: FwConfig::default(),
            sigma: default_sigma(),
            excess_budget: None,
            seed: 0,
            allocation: AllocationMode::Multinomial,
            delta: default_delta(),
            glm: GlmOptions::default(),
            output_dir: None,
        }
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let TopologySource::File(p) = &mut config.topology {
            resolve(p);
        }
        if let Some(p) = &mut config.pool {
            resolve(p);
        }
        if let Some(p) = &mut config.output_dir {
            resolve(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return Err(Error::Config("budgets must be a nonempty list of positive counts".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.designs.is_empty() {
            return Err(Error::Config("at least one design is required".into()));
        }
        let mut seen = self.designs.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.designs.len() {
            return Err(Error::Config("designs must not repeat".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config("sigma must be nonnegative".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("delta must lie in (0, 1)".into()));
        }
        if self.metric == MetricKind::Replay && self.pool.is_none() {
            return Err(Error::Config("replay experiments require a probe pool".into()));
        }
        self.fw.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load_topology(&self) -> Result<Topology> {
        match &self.topology {
            TopologySource::File(p) => Topology::load(p),
            TopologySource::Generate { nodes, radius, seed } => {
                Topology::generate_geometric(*nodes, radius.unwrap_or_else(|| default_radius(*nodes)), *seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub design: DesignMethod,
    pub budget: usize,
    pub runs: usize,
    pub mean_max_error: f64,
    pub se_max_error: f64,
    pub mean_avg_error: f64,
    pub se_avg_error: f64,
    /// Runs whose least-squares fit needed the fallback ridge.
    pub ridge_runs: usize,
    /// Runs whose log-linear fit hit the iteration limit.
    pub nonconverged_runs: usize,
    /// Replay runs that sampled some pool with replacement.
    pub replacement_runs: usize,
    pub trace_file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSummary {
    pub method: DesignMethod,
    pub distribution: ProbingDistribution,
    pub seconds: f64,
    /// Predicted-error bounds at the largest budget, from expected counts.
    pub predicted: PredictedErrors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub designs: Vec<DesignSummary>,
    pub n_paths: usize,
    pub n_edges: usize,
    pub config: ExperimentConfig,
}

impl ResultTable {
    pub fn row(&self, design: DesignMethod, budget: usize) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.design == design && r.budget == budget)
    }
}

/// Per-run outcome before aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub max_error: f64,
    pub avg_error: f64,
    pub used_ridge: bool,
    pub converged: bool,
    pub with_replacement: bool,
}

/// Everything a run needs that does not change between runs.
pub struct Scenario {
    pub x: DesignMatrix,
    pub weights: PathDistribution,
    pub truth: Vec<f64>,
    pub source: ObservationSource,
    pub family: Family,
    pub n_paths: usize,
    pub endpoints: Vec<(usize, usize)>,
}

pub enum ObservationSource {
    Latency { theta: Vec<f64>, sigma: f64 },
    Loss { theta: Vec<f64> },
    Replay(ProbePool),
}

impl Scenario {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        let topology = config.load_topology()?;
        let gt = ground_truth(&topology);
        let (topology, pool) = match config.metric {
            MetricKind::Replay => {
                let pool = ProbePool::load(config.pool.as_ref().expect("validated"))?;
                if let Some(i) = pool.paths.iter().position(|p| p.observations.is_empty()) {
                    return Err(Error::EmptyPool(i));
                }
                (topology.with_paths(Some(pool.edge_lists()))?, Some(pool))
            }
            _ => (topology, None),
        };
        let paths = path_set(&topology)?;
        let x = design_matrix(&paths)?;
        let weights = path_distribution(&x)?;
        let endpoints = paths.endpoints();
        let (source, family, truth) = match (config.metric, pool) {
            (MetricKind::Latency, _) => {
                let truth = x.apply(&gt.theta_latency);
                (ObservationSource::Latency { theta: gt.theta_latency, sigma: config.sigma }, Family::Linear, truth)
            }
            (MetricKind::Loss, _) => {
                let truth = x.apply(&gt.theta_loss).into_iter().map(f64::exp).collect();
                (ObservationSource::Loss { theta: gt.theta_loss }, Family::LogLinear, truth)
            }
            (MetricKind::Replay, Some(pool)) => {
                let family = match pool.metric {
                    Metric::LatencyS => Family::Linear,
                    Metric::LossIndicator => Family::LogLinear,
                };
                (ObservationSource::Replay(pool.clone()), family, pool.path_means())
            }
            (MetricKind::Replay, None) => unreachable!(),
        };
        Ok(Scenario { n_paths: x.n_rows(), x, weights, truth, source, family, endpoints })
    }

    pub fn run_once(
        &self,
        alpha: &[f64],
        budget: usize,
        seed: u64,
        allocation: AllocationMode,
        glm: &GlmOptions,
    ) -> Result<RunOutcome> {
        let mut rng = rng_from_seed(seed);
        let alloc = allocate_probes(alpha, budget, allocation, &mut rng)?;
        let data = match &self.source {
            ObservationSource::Latency { theta, sigma } => simulate_latency(&alloc, &self.x, theta, *sigma, &mut rng)?,
            ObservationSource::Loss { theta } => simulate_loss(&alloc, &self.x, theta, &mut rng)?,
            ObservationSource::Replay(pool) => replay(&alloc, pool, &mut rng)?,
        };
        let (fit, used_ridge) = match self.family {
            Family::Linear => match fit_least_squares(&data, &self.x, 0.0) {
                Ok(fit) => (fit, false),
                Err(Error::RankDeficient { .. }) => (fit_least_squares(&data, &self.x, FALLBACK_RIDGE)?, true),
                Err(e) => return Err(e),
            },
            Family::LogLinear => (fit_log_linear(&data, &self.x, glm)?, false),
        };
        let report = evaluate(&fit.theta_hat, Truth::PathValues(&self.truth), &self.x, &self.weights, self.family, "", budget, seed);
        Ok(RunOutcome {
            max_error: report.max_error,
            avg_error: report.avg_error,
            used_ridge,
            converged: fit.converged,
            with_replacement: data.with_replacement,
        })
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn trace_file_name(method: DesignMethod) -> String {
    format!("trace_{}.csv", method.key())
}

/// Runs the experiment. Designs are computed once and reused for every
/// budget and run. Any failing run aborts with its (design, budget, run)
/// context.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let scenario = Scenario::from_config(config)?;
    let constraints = build_constraints(&scenario.endpoints, config.excess_budget)?;
    let max_budget = *config.budgets.iter().max().expect("validated");
    let mut designs = Vec::with_capacity(config.designs.len());
    let mut rows = Vec::new();
    for &method in &config.designs {
        let start = Instant::now();
        let distribution = compute_design(method, &scenario.x, &constraints, &config.fw)?;
        let seconds = start.elapsed().as_secs_f64();
        let predicted = predicted_error_bound(&distribution.alpha, max_budget, &scenario.x, config.sigma, config.delta)?;
        for &budget in &config.budgets {
            let outcomes: Vec<RunOutcome> = (0..config.runs)
                .into_par_iter()
                .map(|run| {
                    scenario
                        .run_once(&distribution.alpha, budget, config.seed.wrapping_add(run as u64), config.allocation, &config.glm)
                        .map_err(|e| Error::Run {
                            design: method.key().to_string(),
                            budget,
                            run,
                            source: Box::new(e),
                        })
                })
                .collect::<Result<_>>()?;
            let maxes: Vec<f64> = outcomes.iter().map(|o| o.max_error).collect();
            let avgs: Vec<f64> = outcomes.iter().map(|o| o.avg_error).collect();
            let (mean_max_error, se_max_error) = mean_and_se(&maxes);
            let (mean_avg_error, se_avg_error) = mean_and_se(&avgs);
            rows.push(ResultRow {
                design: method,
                budget,
                runs: config.runs,
                mean_max_error,
                se_max_error,
                mean_avg_error,
                se_avg_error,
                ridge_runs: outcomes.iter().filter(|o| o.used_ridge).count(),
                nonconverged_runs: outcomes.iter().filter(|o| !o.converged).count(),
                replacement_runs: outcomes.iter().filter(|o| o.with_replacement).count(),
                trace_file: trace_file_name(method),
            });
        }
        designs.push(DesignSummary { method, distribution, seconds, predicted });
    }
    Ok(ResultTable { rows, designs, n_paths: scenario.n_paths, n_edges: scenario.x.dim(), config: config.clone() })
}

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn results_csv(table: &ResultTable) -> String {
    let mut out = String::from(
        "design,budget,runs,mean_max_error,se_max_error,mean_avg_error,se_avg_error,ridge_runs,nonconverged_runs,replacement_runs,trace_file\n",
    );
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{:e},{:e},{:e},{:e},{},{},{},{}",
            r.design.key(),
            r.budget,
            r.runs,
            r.mean_max_error,
            r.se_max_error,
            r.mean_avg_error,
            r.se_avg_error,
            r.ridge_runs,
            r.nonconverged_runs,
            r.replacement_runs,
            r.trace_file
        )
        .unwrap();
    }
    out
}

fn curve_csv(summary: &DesignSummary) -> String {
    let mut order: Vec<usize> = (0..summary.predicted.bounds.len()).collect();
    let b = &summary.predicted.bounds;
    order.sort_by(|&i, &j| b[j].total_cmp(&b[i]).then(i.cmp(&j)));
    let mut out = String::from("rank,path,predicted_error\n");
    for (rank, &i) in order.iter().enumerate() {
        writeln!(out, "{},{},{:e}", rank + 1, i, b[i]).unwrap();
    }
    out
}

fn trace_csv(summary: &DesignSummary) -> String {
    let mut out = String::from("iteration,objective\n");
    for (i, v) in summary.distribution.objective_trace.iter().enumerate() {
        writeln!(out, "{i},{v:e}").unwrap();
    }
    out
}

fn distribution_csv(summary: &DesignSummary) -> String {
    let mut out = String::from("path,alpha\n");
    for (i, a) in summary.distribution.alpha.iter().enumerate() {
        writeln!(out, "{i},{a:e}").unwrap();
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a> {
    library: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    run_seeds: (u64, u64),
    n_paths: usize,
    n_edges: usize,
    files: Vec<String>,
    design_seconds: Vec<(DesignMethod, f64)>,
}

/// Writes the results table, per-design predicted-error curves, objective
/// traces and distributions, and a manifest. Every file except the
/// manifest (which records timings) is a deterministic function of the
/// config.
pub fn emit_results(table: &ResultTable, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files: Vec<(String, String)> = vec![(RESULTS_FILE.to_string(), results_csv(table))];
    for s in &table.designs {
        files.push((format!("curve_{}.csv", s.method.key()), curve_csv(s)));
        files.push((trace_file_name(s.method), trace_csv(s)));
        files.push((format!("distribution_{}.csv", s.method.key()), distribution_csv(s)));
    }
    let mut written = Vec::with_capacity(files.len() + 1);
    for (name, content) in &files {
        let path = dir.join(name);
        fs::write(&path, content).map_err(io(&path))?;
        written.push(path);
    }
    let manifest = Manifest {
        library: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: &table.config,
        run_seeds: (table.config.seed, table.config.seed.wrapping_add(table.config.runs as u64 - 1)),
        n_paths: table.n_paths,
        n_edges: table.n_edges,
        files: files.iter().map(|(n, _)| n.clone()).collect(),
        design_seconds: table.designs.iter().map(|s| (s.method, s.seconds)).collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io(&path))?;
    written.push(path);
    Ok(written)
}
