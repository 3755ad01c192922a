//! Probing designs for estimating additive and multiplicative network
//! metrics (latency, loss) from end-to-end path measurements.
//!
//! The pipeline: build the path set and design matrix from a
//! [`Topology`], compute a [`ProbingDistribution`] with one of the
//! [`DesignMethod`]s, allocate and simulate (or replay) probes, fit a
//! per-edge model, and score it against ground truth.

// `!(x >= 0.0)` style checks deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod designs;
pub mod error;
pub mod estimate;
pub mod evaluation;
pub mod experiment;
pub mod fw;
pub mod probe;
pub mod topology;

pub use designs::{compute_design, DesignMethod};
pub use error::{Error, Result};
pub use estimate::{fit_least_squares, fit_log_linear, Family, GlmOptions, ModelEstimate};
pub use evaluation::{avg_error, max_error, path_distribution, predicted_error_bound, PathDistribution, Truth};
pub use experiment::{emit_results, run_experiment, ExperimentConfig, ResultTable};
pub use fw::{build_constraints, frank_wolfe, ConstraintSet, FwConfig, ProbingDistribution};
pub use probe::{allocate_probes, AllocationMode, Metric, ProbeDataset, ProbePool};
pub use topology::{design_matrix, enumerate_paths, ground_truth, path_set, DesignMatrix, PathSet, Topology};
