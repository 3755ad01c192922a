#![allow(dead_code)]

pub mod lp;

use probedesign::topology::EdgeRecord;
use probedesign::{DesignMatrix, Topology};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn dm(rows: &[Vec<f64>]) -> DesignMatrix {
    DesignMatrix::from_dense(rows).unwrap()
}

/// Random `n x d` matrix whose rows are nonzero; `binary` restricts entries
/// to {0, 1}.
pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, binary: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let row: Vec<f64> = (0..d)
                .map(|_| {
                    if binary {
                        f64::from(u8::from(rng.random_bool(0.5)))
                    } else if rng.random_bool(0.3) {
                        0.0
                    } else {
                        rng.random_range(0.2..2.0)
                    }
                })
                .collect();
            if row.iter().any(|&v| v != 0.0) {
                break row;
            }
        })
        .collect()
}

/// Random `n x d` matrix of rank `d` (the first `d` rows are a perturbed
/// identity).
pub fn random_full_rank(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    assert!(n >= d);
    let mut rows = random_matrix(rng, n, d, false);
    for (i, row) in rows.iter_mut().take(d).enumerate() {
        row.iter_mut().for_each(|v| *v *= 0.1);
        row[i] += 1.0;
    }
    rows
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Connected random graph: a random spanning tree plus extra edges, with
/// latencies in [0.001, 0.036].
pub fn random_topology(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Topology {
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut pairs = std::collections::BTreeSet::new();
    for i in 1..n {
        pairs.insert((rng.random_range(0..i), i));
    }
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(a, b)| EdgeRecord { u: names[a].clone(), v: names[b].clone(), latency_s: rng.random_range(0.001..0.036) })
        .collect();
    Topology::new(names, edges).unwrap()
}

/// Points of the probability simplex in `n <= 3` dimensions on a grid of
/// the given step.
pub fn simplex_grid(n: usize, step: f64) -> Vec<Vec<f64>> {
    let k = (1.0 / step).round() as usize;
    match n {
        1 => vec![vec![1.0]],
        2 => (0..=k).map(|i| vec![i as f64 / k as f64, 1.0 - i as f64 / k as f64]).collect(),
        3 => {
            let mut out = Vec::new();
            for i in 0..=k {
                for j in 0..=k - i {
                    let a = i as f64 / k as f64;
                    let b = j as f64 / k as f64;
                    out.push(vec![a, b, (1.0 - a - b).max(0.0)]);
                }
            }
            out
        }
        _ => panic!("grid only for n <= 3"),
    }
}
