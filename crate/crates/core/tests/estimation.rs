mod common;

use common::{dm, random_full_rank};
use probedesign::estimate::{fit_least_squares, fit_log_linear, GlmOptions};
use probedesign::probe::{rng_from_seed, simulate_latency, simulate_loss, Metric, ProbeAllocation, ProbeDataset};
use probedesign::topology::{design_matrix, enumerate_paths, ground_truth};
use probedesign::{DesignMatrix, Error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn least_squares_residual(data: &ProbeDataset, x: &DesignMatrix, theta: &[f64], ridge: f64) -> (f64, f64) {
    let mut r: Vec<f64> = theta.iter().map(|t| ridge * t).collect();
    let mut scale = 1.0f64;
    for &(i, y) in &data.records {
        let resid = x.dot(i, theta) - y;
        for &(j, v) in x.row(i) {
            r[j] += v * resid;
            scale = scale.max((v * y).abs());
        }
    }
    (r.iter().map(|v| v * v).sum::<f64>().sqrt(), scale)
}

/// Poisson score, split into its norm over free coordinates and the most
/// negative entry over coordinates clamped at zero.
fn poisson_score(data: &ProbeDataset, x: &DesignMatrix, theta: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; x.dim()];
    for &(i, y) in &data.records {
        let mu = x.dot(i, theta).exp();
        for &(j, v) in x.row(i) {
            s[j] += (y - mu) * v;
        }
    }
    s
}

fn tree_instance(seed: u64, n: usize) -> (DesignMatrix, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // trees make every edge its own path, so the design has full column rank
    let t = common::random_topology(&mut rng, n, 0);
    let x = design_matrix(&enumerate_paths(&t).unwrap()).unwrap();
    let gt = ground_truth(&t);
    (x, gt.theta_latency, gt.theta_loss)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn least_squares_residual_is_orthogonal(seed in any::<u64>(), ridge in prop_oneof![Just(0.0), 1e-6f64..1.0]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..=6);
        let n = rng.random_range(d..=12);
        let x = dm(&random_full_rank(&mut rng, n, d));
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(0.001..0.036)).collect();
        let counts: Vec<usize> = (0..n).map(|i| if i < d { rng.random_range(1..5) } else { rng.random_range(0..5) }).collect();
        let alloc = ProbeAllocation { n: counts.iter().sum(), counts };
        let mut probe_rng = rng_from_seed(seed);
        let data = simulate_latency(&alloc, &x, &theta, 0.01, &mut probe_rng).unwrap();
        let fit = fit_least_squares(&data, &x, ridge).unwrap();
        prop_assert!(fit.theta_hat.iter().all(|t| t.is_finite()));
        let (r, scale) = least_squares_residual(&data, &x, &fit.theta_hat, ridge);
        prop_assert!(r <= 1e-8 * scale, "residual {r}");
    }

    #[test]
    fn ridge_fit_handles_uncovered_edges(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=6);
        let x = dm(&random_full_rank(&mut rng, d, d));
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(0.001..0.036)).collect();
        let mut counts = vec![3; d];
        counts[0] = 0;
        let alloc = ProbeAllocation { n: counts.iter().sum(), counts };
        let data = simulate_latency(&alloc, &x, &theta, 0.01, &mut rng_from_seed(seed)).unwrap();
        let fit = fit_least_squares(&data, &x, 1e-10).unwrap();
        let (r, scale) = least_squares_residual(&data, &x, &fit.theta_hat, 1e-10);
        prop_assert!(r <= 1e-8 * scale);
    }

    #[test]
    fn log_linear_score_vanishes_at_convergence(seed in any::<u64>(), per_path in 20usize..400) {
        let (x, _, theta) = tree_instance(seed, 5);
        let alloc = ProbeAllocation { counts: vec![per_path; x.n_rows()], n: per_path * x.n_rows() };
        let data = simulate_loss(&alloc, &x, &theta, &mut rng_from_seed(seed)).unwrap();
        let options = GlmOptions::default();
        let fit = fit_log_linear(&data, &x, &options).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(fit.theta_hat.iter().all(|&t| t <= 0.0 && t.is_finite()));
        let score = poisson_score(&data, &x, &fit.theta_hat);
        let free: f64 = score.iter().zip(&fit.theta_hat).filter(|(_, &t)| t < 0.0).map(|(s, _)| s * s).sum::<f64>().sqrt();
        prop_assert!(free <= options.tol * 10.0, "free score {free}");
        for (s, &t) in score.iter().zip(&fit.theta_hat) {
            if t == 0.0 {
                // clamped coordinates only push toward positive values
                prop_assert!(*s >= -options.tol * 10.0, "clamped score {s}");
            }
        }
    }
}

#[test]
fn rank_deficiency_names_edges() {
    // paths {e0+e1} only: e0 and e1 are not separately identifiable
    let x = dm(&[vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    let data = ProbeDataset { records: vec![(0, 1.0), (1, 2.0)], metric: Metric::LatencyS, with_replacement: false };
    match fit_least_squares(&data, &x, 0.0) {
        Err(Error::RankDeficient { unidentifiable }) => assert_eq!(unidentifiable, vec![0, 1]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn estimation_error_shrinks_with_more_probes() {
    let mut ls = [0.0; 3];
    let mut glm = [0.0; 3];
    for seed in 0..30u64 {
        let (x, theta_lat, theta_loss) = tree_instance(seed, 6);
        for (k, per_path) in [100usize, 1000, 10000].into_iter().enumerate() {
            let alloc = ProbeAllocation { counts: vec![per_path; x.n_rows()], n: per_path * x.n_rows() };
            let mut rng = rng_from_seed(1000 * seed + k as u64);
            let data = simulate_latency(&alloc, &x, &theta_lat, 0.01, &mut rng).unwrap();
            let fit = fit_least_squares(&data, &x, 0.0).unwrap();
            ls[k] += fit.theta_hat.iter().zip(&theta_lat).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let data = simulate_loss(&alloc, &x, &theta_loss, &mut rng).unwrap();
            let fit = fit_log_linear(&data, &x, &GlmOptions::default()).unwrap();
            glm[k] += fit.theta_hat.iter().zip(&theta_loss).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
    }
    assert!(ls[0] > ls[1] && ls[1] > ls[2], "{ls:?}");
    assert!(glm[0] > glm[1] && glm[1] > glm[2], "{glm:?}");
}

#[test]
fn noisy_basis_fit_is_within_clt_bound() {
    let d = 4;
    let x = dm(&(0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect::<Vec<_>>());
    let theta = [0.004, 0.011, 0.02, 0.035];
    let n = 10_000;
    let alloc = ProbeAllocation { counts: vec![n; d], n: n * d };
    let data = simulate_latency(&alloc, &x, &theta, 0.01, &mut rng_from_seed(3)).unwrap();
    let fit = fit_least_squares(&data, &x, 0.0).unwrap();
    for (a, b) in fit.theta_hat.iter().zip(theta) {
        assert!((a - b).abs() <= 4.0 * 0.01 / (n as f64).sqrt());
    }
}
