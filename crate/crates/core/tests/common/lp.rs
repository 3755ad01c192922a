use nalgebra::{DMatrix, DVector};

/// Minimum of `cost . alpha` over the capped simplex by enumerating every
/// basic solution. `groups` lists (members, cap) pairs. Returns `None` when
/// the polytope is empty.
pub fn brute_force_lp(cost: &[f64], groups: &[(Vec<usize>, f64)]) -> Option<f64> {
    let n = cost.len();
    // inequality rows a . alpha <= b, with nonnegativity as -alpha_i <= 0
    let mut rows: Vec<(Vec<f64>, f64)> = (0..n)
        .map(|i| {
            let mut a = vec![0.0; n];
            a[i] = -1.0;
            (a, 0.0)
        })
        .collect();
    for (members, cap) in groups {
        let mut a = vec![0.0; n];
        members.iter().for_each(|&i| a[i] = 1.0);
        rows.push((a, *cap));
    }
    let feasible = |alpha: &DVector<f64>| {
        (alpha.sum() - 1.0).abs() < 1e-9
            && rows.iter().all(|(a, b)| a.iter().zip(alpha.iter()).map(|(p, q)| p * q).sum::<f64>() <= b + 1e-9)
    };
    let mut best: Option<f64> = None;
    let mut choose = vec![0usize; n - 1];
    #[allow(clippy::too_many_arguments)]
    fn visit(
        k: usize,
        start: usize,
        choose: &mut Vec<usize>,
        rows: &[(Vec<f64>, f64)],
        n: usize,
        cost: &[f64],
        feasible: &dyn Fn(&DVector<f64>) -> bool,
        best: &mut Option<f64>,
    ) {
        if k == choose.len() {
            let mut m = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            m.row_mut(0).fill(1.0);
            rhs[0] = 1.0;
            for (r, &c) in choose.iter().enumerate() {
                for j in 0..n {
                    m[(r + 1, j)] = rows[c].0[j];
                }
                rhs[r + 1] = rows[c].1;
            }
            if let Some(alpha) = m.clone().full_piv_lu().solve(&rhs) {
                if (&m * &alpha - &rhs).norm() < 1e-9 && feasible(&alpha) {
                    let value: f64 = alpha.iter().zip(cost).map(|(a, c)| a * c).sum();
                    *best = Some(best.map_or(value, |b: f64| b.min(value)));
                }
            }
            return;
        }
        for c in start..rows.len() {
            choose[k] = c;
            visit(k + 1, c + 1, choose, rows, n, cost, feasible, best);
        }
    }
    if n == 1 {
        let alpha = DVector::from_element(1, 1.0);
        return feasible(&alpha).then_some(cost[0]);
    }
    visit(0, 0, &mut choose, &rows, n, cost, &feasible, &mut best);
    best
}
