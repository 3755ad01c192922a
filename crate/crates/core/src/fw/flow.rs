//! Exact linear minimization over the capped probing polytope.
//!
//! With one cap per source group and one per destination group the feasible
//! set is a transportation polytope, so the LP is a min-cost flow of one
//! unit from a super source through source groups, path arcs, and
//! destination groups to a super sink.

use super::ConstraintSet;
use crate::error::{Error, Result};

const EPS: f64 = 1e-15;

struct Arc {
    to: usize,
    cap: f64,
    cost: f64,
    flow: f64,
}

struct Network {
    arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
}

impl Network {
    fn new(n: usize) -> Self {
        Network { arcs: Vec::new(), out: vec![Vec::new(); n] }
    }

    /// Adds an arc and its residual twin; returns the forward arc id.
    fn add(&mut self, from: usize, to: usize, cap: f64, cost: f64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost, flow: 0.0 });
        self.arcs.push(Arc { to: from, cap: 0.0, cost: -cost, flow: 0.0 });
        self.out[from].push(id);
        self.out[to].push(id + 1);
        id
    }

    fn residual(&self, id: usize) -> f64 {
        self.arcs[id].cap - self.arcs[id].flow
    }

    fn push(&mut self, id: usize, amount: f64) {
        self.arcs[id].flow += amount;
        self.arcs[id ^ 1].flow -= amount;
    }

    /// Successive shortest paths with Johnson potentials. Returns the
    /// amount of flow sent, at most `demand`.
    fn min_cost_flow(&mut self, source: usize, sink: usize, demand: f64) -> f64 {
        let n = self.out.len();
        let mut potential = self.initial_potentials(source);
        let mut sent = 0.0;
        while demand - sent > EPS {
            let mut dist = vec![f64::INFINITY; n];
            let mut via = vec![usize::MAX; n];
            let mut done = vec![false; n];
            dist[source] = 0.0;
            loop {
                let mut u = usize::MAX;
                for v in 0..n {
                    if !done[v] && dist[v].is_finite() && (u == usize::MAX || dist[v] < dist[u]) {
                        u = v;
                    }
                }
                if u == usize::MAX {
                    break;
                }
                done[u] = true;
                for &id in &self.out[u] {
                    if self.residual(id) <= EPS {
                        continue;
                    }
                    let arc = &self.arcs[id];
                    let reduced = (arc.cost + potential[u] - potential[arc.to]).max(0.0);
                    if dist[u] + reduced < dist[arc.to] {
                        dist[arc.to] = dist[u] + reduced;
                        via[arc.to] = id;
                    }
                }
            }
            if !dist[sink].is_finite() {
                break;
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            let mut amount = demand - sent;
            let mut v = sink;
            while v != source {
                let id = via[v];
                amount = amount.min(self.residual(id));
                v = self.arcs[id ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let id = via[v];
                self.push(id, amount);
                v = self.arcs[id ^ 1].to;
            }
            sent += amount;
        }
        sent
    }

    /// Shortest distances from `source` over arcs with capacity; the
    /// initial network is acyclic so Bellman-Ford terminates quickly.
    fn initial_potentials(&self, source: usize) -> Vec<f64> {
        let n = self.out.len();
        let mut dist = vec![f64::INFINITY; n];
        dist[source] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if !dist[u].is_finite() {
                    continue;
                }
                for &id in &self.out[u] {
                    if self.residual(id) <= EPS {
                        continue;
                    }
                    let arc = &self.arcs[id];
                    if dist[u] + arc.cost < dist[arc.to] {
                        dist[arc.to] = dist[u] + arc.cost;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        dist.into_iter().map(|d| if d.is_finite() { d } else { 0.0 }).collect()
    }
}

/// Minimizes `gradient . alpha` over the capped simplex.
pub(super) fn capped_oracle(gradient: &[f64], constraints: &ConstraintSet) -> Result<Vec<f64>> {
    let n_paths = constraints.n_paths();
    let (src_groups, src_caps) = constraints.source_partition();
    let (dst_groups, dst_caps) = constraints.destination_partition();
    let ns = src_caps.len();
    let nt = dst_caps.len();
    let source = 0;
    let sink = 1 + ns + nt;
    let mut net = Network::new(sink + 1);
    for (g, &cap) in src_caps.iter().enumerate() {
        net.add(source, 1 + g, cap.min(1.0), 0.0);
    }
    for (g, &cap) in dst_caps.iter().enumerate() {
        net.add(1 + ns + g, sink, cap.min(1.0), 0.0);
    }
    // Only the cheapest path between a pair of groups can carry flow at
    // the optimum; keep one arc per pair (lowest index on ties).
    let mut cheapest: Vec<Option<usize>> = vec![None; ns * nt];
    for x in 0..n_paths {
        let slot = &mut cheapest[src_groups[x] * nt + dst_groups[x]];
        match *slot {
            Some(y) if gradient[y] <= gradient[x] => {}
            _ => *slot = Some(x),
        }
    }
    let mut path_arcs = Vec::new();
    for (pair, best) in cheapest.iter().enumerate() {
        if let Some(x) = *best {
            let (s, t) = (pair / nt, pair % nt);
            let id = net.add(1 + s, 1 + ns + t, 1.0, gradient[x]);
            path_arcs.push((x, id));
        }
    }
    let sent = net.min_cost_flow(source, sink, 1.0);
    if sent < 1.0 - 1e-12 {
        return Err(Error::Infeasible(format!("caps admit at most {sent} total probability")));
    }
    let mut alpha = vec![0.0; n_paths];
    for (x, id) in path_arcs {
        alpha[x] = net.arcs[id].flow.max(0.0);
    }
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= total);
    Ok(alpha)
}
