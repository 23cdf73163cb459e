//! Exact optimal transport on small discrete instances.
//!
//! `w2_squared_exact` runs successive shortest augmenting paths with node
//! potentials (dense Dijkstra) on the bipartite transportation graph under
//! squared Euclidean cost. `w2_squared_bruteforce` enumerates every basic
//! feasible plan (spanning trees of the bipartite support graph) and serves
//! as the independent oracle at very small sizes.

use super::DiscreteMeasure;
use crate::error::{LabError, Result};

/// Cap on `k_a * k_b` for the exact solver.
pub const EXACT_SIZE_CAP: usize = 250_000;

/// Residual-mass threshold treated as zero.
const MASS_EPS: f64 = 1e-14;

fn check_pair(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<()> {
    if a.dim != b.dim {
        return Err(LabError::DimensionMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    Ok(())
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

pub(crate) fn cost_matrix(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Vec<f64> {
    let (na, nb) = (a.len(), b.len());
    let mut c = vec![0.0; na * nb];
    for i in 0..na {
        for j in 0..nb {
            c[i * nb + j] = sq_dist(a.point(i), b.point(j));
        }
    }
    c
}

/// Exact squared-W2 transport cost by successive shortest paths.
pub fn w2_squared_exact(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    check_pair(a, b)?;
    let (na, nb) = (a.len(), b.len());
    if na * nb > EXACT_SIZE_CAP {
        return Err(LabError::SizeCapExceeded {
            size: na * nb,
            cap: EXACT_SIZE_CAP,
        });
    }
    let cost = cost_matrix(a, b);
    let mut supply = a.weights.clone();
    let mut demand = b.weights.clone();
    let mut flow = vec![0.0f64; na * nb];
    // Potentials keep reduced costs nonnegative: rc(i->j) = c - pi_i - pj_j.
    let mut pi = vec![0.0f64; na];
    let mut pj = vec![0.0f64; nb];
    for j in 0..nb {
        pj[j] = (0..na).map(|i| cost[i * nb + j]).fold(f64::INFINITY, f64::min);
    }
    let nodes = na + nb;
    let mut dist = vec![0.0f64; nodes];
    let mut done = vec![false; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let max_rounds = 4 * nodes + 64;
    let mut rounds = 0usize;
    loop {
        let remaining: f64 = supply.iter().sum();
        if remaining <= 1e-12 {
            break;
        }
        rounds += 1;
        if rounds > max_rounds {
            return Err(LabError::NonConvergence {
                residual: remaining,
            });
        }
        // Multi-source Dijkstra over the residual graph.
        for v in 0..nodes {
            dist[v] = f64::INFINITY;
            done[v] = false;
            parent[v] = usize::MAX;
        }
        for (i, &s) in supply.iter().enumerate() {
            if s > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best_d {
                    best_d = dist[v];
                    best = v;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best >= na && demand[best - na] > MASS_EPS {
                target = best;
                break;
            }
            if best < na {
                let i = best;
                for j in 0..nb {
                    let rc = cost[i * nb + j] - pi[i] - pj[j];
                    let nd = dist[i] + rc;
                    if nd < dist[na + j] - 1e-15 {
                        dist[na + j] = nd;
                        parent[na + j] = i;
                    }
                }
            } else {
                let j = best - na;
                for i in 0..na {
                    if flow[i * nb + j] > MASS_EPS {
                        let rc = -(cost[i * nb + j] - pi[i] - pj[j]);
                        let nd = dist[na + j] + rc;
                        if nd < dist[i] - 1e-15 {
                            dist[i] = nd;
                            parent[i] = na + j;
                        }
                    }
                }
            }
        }
        if target == usize::MAX {
            return Err(LabError::NonConvergence {
                residual: remaining,
            });
        }
        // Bottleneck along the alternating path back to a source.
        let mut delta = demand[target - na];
        let mut v = target;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if v >= na {
                // forward arc u -> v adds flow; no bound
            } else {
                // reverse arc u(sink) -> v(source) removes flow (v, u).
                delta = delta.min(flow[v * nb + (u - na)]);
            }
            v = u;
        }
        delta = delta.min(supply[v]);
        debug_assert!(delta > 0.0, "degenerate augmentation");
        // Apply the augmentation.
        let mut w = target;
        while parent[w] != usize::MAX {
            let u = parent[w];
            if w >= na {
                flow[u * nb + (w - na)] += delta;
            } else {
                flow[w * nb + (u - na)] -= delta;
                if flow[w * nb + (u - na)] < MASS_EPS {
                    flow[w * nb + (u - na)] = 0.0;
                }
            }
            w = u;
        }
        supply[w] -= delta;
        if supply[w] < MASS_EPS {
            supply[w] = 0.0;
        }
        demand[target - na] -= delta;
        if demand[target - na] < MASS_EPS {
            demand[target - na] = 0.0;
        }
        // Potential update keeps reduced costs nonnegative: with
        // rc(i->j) = c - pi_i - pj_j this is pi_i -= min(d_i, d_t),
        // pj_j += min(d_j, d_t).
        let dt = dist[target];
        for (i, p) in pi.iter_mut().enumerate() {
            if dist[i].is_finite() {
                *p -= dist[i].min(dt);
            }
        }
        for (j, p) in pj.iter_mut().enumerate() {
            if dist[na + j].is_finite() {
                *p += dist[na + j].min(dt);
            }
        }
    }
    Ok(flow
        .iter()
        .zip(&cost)
        .map(|(f, c)| f * c)
        .sum::<f64>()
        .max(0.0))
}

/// Exhaustive reference: enumerates all spanning trees of the complete
/// bipartite support graph (every vertex of the transport polytope lives on
/// one), solves each tree's flow, and minimizes over feasible plans.
/// Only intended for `k_a, k_b <= 6`.
pub fn w2_squared_bruteforce(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    check_pair(a, b)?;
    let (na, nb) = (a.len(), b.len());
    if na > 6 || nb > 6 {
        return Err(LabError::SizeCapExceeded {
            size: na.max(nb),
            cap: 6,
        });
    }
    let cost = cost_matrix(a, b);
    let edges: Vec<(usize, usize)> = (0..na)
        .flat_map(|i| (0..nb).map(move |j| (i, j)))
        .collect();
    let need = na + nb - 1;
    let mut best = f64::INFINITY;
    let mut chosen = vec![0usize; need];
    enumerate_subsets(&edges, need, 0, 0, &mut chosen, &mut |subset| {
        if let Some(c) = tree_plan_cost(na, nb, subset, &a.weights, &b.weights, &cost) {
            if c < best {
                best = c;
            }
        }
    });
    if best.is_finite() {
        Ok(best)
    } else {
        Err(LabError::NonConvergence { residual: 1.0 })
    }
}

fn enumerate_subsets(
    edges: &[(usize, usize)],
    need: usize,
    start: usize,
    depth: usize,
    chosen: &mut [usize],
    visit: &mut impl FnMut(&[(usize, usize)]),
) {
    if depth == need {
        let subset: Vec<(usize, usize)> = chosen.iter().map(|&e| edges[e]).collect();
        visit(&subset);
        return;
    }
    let remaining = need - depth;
    for e in start..=edges.len().saturating_sub(remaining) {
        chosen[depth] = e;
        enumerate_subsets(edges, need, e + 1, depth + 1, chosen, visit);
    }
}

/// Solves the unique flow on a candidate spanning tree by leaf elimination;
/// returns its cost when the subset is a tree and the flow is feasible.
fn tree_plan_cost(
    na: usize,
    nb: usize,
    subset: &[(usize, usize)],
    wa: &[f64],
    wb: &[f64],
    cost: &[f64],
) -> Option<f64> {
    let nodes = na + nb;
    let mut degree = vec![0usize; nodes];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (e, &(i, j)) in subset.iter().enumerate() {
        degree[i] += 1;
        degree[na + j] += 1;
        incident[i].push(e);
        incident[na + j].push(e);
    }
    if degree.iter().any(|&d| d == 0) {
        return None;
    }
    let mut residual: Vec<f64> = wa.iter().cloned().chain(wb.iter().cloned()).collect();
    let mut used = vec![false; subset.len()];
    let mut flows = vec![0.0f64; subset.len()];
    let mut stack: Vec<usize> = (0..nodes).filter(|&v| degree[v] == 1).collect();
    let mut resolved = 0usize;
    while let Some(v) = stack.pop() {
        if degree[v] != 1 {
            continue;
        }
        let &e = incident[v]
            .iter()
            .find(|&&e| !used[e])
            .expect("leaf with no unused edge");
        let (i, j) = subset[e];
        let other = if v == i { na + j } else { i };
        // Flow on a leaf edge equals the leaf's residual mass.
        let f = residual[v];
        if f < -1e-12 {
            return None;
        }
        flows[e] = f;
        used[e] = true;
        resolved += 1;
        residual[v] = 0.0;
        residual[other] -= f;
        degree[v] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            stack.push(other);
        }
    }
    if resolved != subset.len() {
        return None; // contained a cycle
    }
    if residual.iter().any(|&r| r.abs() > 1e-9) {
        return None;
    }
    if flows.iter().any(|&f| f < -1e-12) {
        return None;
    }
    Some(
        subset
            .iter()
            .zip(&flows)
            .map(|(&(i, j), f)| f.max(0.0) * cost[i * nb + j])
            .sum(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure(points: Vec<f64>, weights: Vec<f64>, dim: usize) -> DiscreteMeasure {
        DiscreteMeasure::new(points, weights, dim).unwrap()
    }

    #[test]
    fn matched_point_sets_cost_zero() {
        let a = measure(vec![0.0, 1.0, 2.0, 5.0], vec![0.25; 4], 1);
        assert_eq!(w2_squared_exact(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_crossing_matches_enumeration() {
        let a = measure(vec![0.0, 1.0], vec![0.5, 0.5], 1);
        let b = measure(vec![0.9, 0.1], vec![0.5, 0.5], 1);
        let exact = w2_squared_exact(&a, &b).unwrap();
        let brute = w2_squared_bruteforce(&a, &b).unwrap();
        assert!((exact - brute).abs() < 1e-12, "{exact} vs {brute}");
        // Direct check over the two vertex plans.
        let plan_straight = 0.5 * (0.9f64.powi(2) + 0.9f64.powi(2));
        let plan_crossed = 0.5 * (0.1f64.powi(2) + 0.1f64.powi(2));
        assert!((exact - plan_straight.min(plan_crossed)).abs() < 1e-12);
    }

    #[test]
    fn random_small_instances_match_bruteforce() {
        // Deterministic pseudo-random instances via the path generator.
        let mut state = 0x1234_5678_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / (1u64 << 53) as f64
        };
        for trial in 0..60 {
            let ka = 2 + (trial % 3);
            let kb = 2 + (trial % 4).min(2);
            let dim = 1 + (trial % 2);
            let pa: Vec<f64> = (0..ka * dim).map(|_| next() * 4.0 - 2.0).collect();
            let pb: Vec<f64> = (0..kb * dim).map(|_| next() * 4.0 - 2.0).collect();
            let norm = |raw: Vec<f64>| {
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / s).collect::<Vec<_>>()
            };
            let wa = norm((0..ka).map(|_| next() + 0.1).collect());
            let wb = norm((0..kb).map(|_| next() + 0.1).collect());
            let a = measure(pa, wa, dim);
            let b = measure(pb, wb, dim);
            let exact = w2_squared_exact(&a, &b).unwrap();
            let brute = w2_squared_bruteforce(&a, &b).unwrap();
            assert!(
                (exact - brute).abs() < 1e-10,
                "trial {trial}: {exact} vs {brute}"
            );
        }
    }

    #[test]
    fn scale_equivariance() {
        let a = measure(vec![0.0, 1.0, 3.0], vec![0.2, 0.3, 0.5], 1);
        let b = measure(vec![-1.0, 2.0, 4.0], vec![0.4, 0.4, 0.2], 1);
        let base = w2_squared_exact(&a, &b).unwrap();
        let lambda = 2.5;
        let scale = |m: &DiscreteMeasure| {
            measure(
                m.points.iter().map(|x| lambda * x).collect(),
                m.weights.clone(),
                1,
            )
        };
        let scaled = w2_squared_exact(&scale(&a), &scale(&b)).unwrap();
        assert!(
            (scaled - lambda * lambda * base).abs() < 1e-10,
            "{scaled} vs {}",
            lambda * lambda * base
        );
    }

    #[test]
    fn triangle_sanity() {
        let mut state = 0xdead_beef_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let mk = |n: usize, next: &mut dyn FnMut() -> f64| {
                let pts: Vec<f64> = (0..n).map(|_| next() * 3.0).collect();
                DiscreteMeasure::from_samples_1d(&pts).unwrap()
            };
            let a = mk(4, &mut next);
            let b = mk(4, &mut next);
            let c = mk(4, &mut next);
            let dab = w2_squared_exact(&a, &b).unwrap().sqrt();
            let dac = w2_squared_exact(&a, &c).unwrap().sqrt();
            let dcb = w2_squared_exact(&c, &b).unwrap().sqrt();
            assert!(dab <= dac + dcb + 1e-9, "{dab} > {dac} + {dcb}");
        }
    }

    #[test]
    fn size_cap_enforced() {
        let big = DiscreteMeasure::from_samples_1d(&vec![0.0; 600]).unwrap();
        assert!(matches!(
            w2_squared_exact(&big, &big),
            Err(LabError::SizeCapExceeded { .. })
        ));
    }
}
