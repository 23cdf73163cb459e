//! Log-domain Sinkhorn iterations with epsilon scaling.
//!
//! Potentials update against the reference product measure `a ⊗ b`, so the
//! plan is `T_ij = a_i b_j exp((f_i + g_j - C_ij)/eps)` and the entropic
//! objective is `<C, T> + eps KL(T || a ⊗ b)`. The regularization follows a
//! halving schedule from `max(1, eps)` down to the target, which keeps the
//! updates stable at eps as small as 1e-3.

use serde::{Deserialize, Serialize};

use super::{exact::cost_matrix, DiscreteMeasure};
use crate::error::{LabError, Result};

/// Marginal residual demanded at the target regularization.
const MARGINAL_TOL: f64 = 1e-8;

/// Entropic OT result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SinkhornReport {
    /// Transport cost `<C, T>` of the entropic plan.
    pub cost: f64,
    /// `<C, T> + eps KL(T || a x b)`; subtracting the entropy correction
    /// recovers `cost`, which approaches the exact value as eps -> 0.
    pub entropic_value: f64,
    /// L-infinity violation of the two marginal constraints.
    pub marginal_residual: f64,
    pub iterations: usize,
    pub epsilon: f64,
}

fn logsumexp(terms: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = terms.collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic squared-W2 value with epsilon scaling.
pub fn sinkhorn_w2_squared(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    epsilon: f64,
    max_iters: usize,
) -> Result<SinkhornReport> {
    if epsilon <= 0.0 {
        return Err(LabError::InvalidParameter(
            "epsilon must be positive".into(),
        ));
    }
    if a.dim != b.dim {
        return Err(LabError::DimensionMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    let (na, nb) = (a.len(), b.len());
    let cost = cost_matrix(a, b);
    let log_a: Vec<f64> = a.weights.iter().map(|w| w.max(1e-300).ln()).collect();
    let log_b: Vec<f64> = b.weights.iter().map(|w| w.max(1e-300).ln()).collect();
    let mut f = vec![0.0f64; na];
    let mut g = vec![0.0f64; nb];
    // Halving schedule from max(1, target) down to the target epsilon.
    let mut schedule = Vec::new();
    let mut eps_level = 1.0f64.max(epsilon);
    while eps_level > epsilon * (1.0 + 1e-12) {
        schedule.push(eps_level);
        eps_level *= 0.5;
    }
    schedule.push(epsilon);
    let mut iterations = 0usize;
    let mut residual = f64::INFINITY;
    for (level, &eps) in schedule.iter().enumerate() {
        let final_level = level == schedule.len() - 1;
        let level_iters = if final_level { max_iters } else { 60 };
        for _ in 0..level_iters {
            iterations += 1;
            for i in 0..na {
                let lse = logsumexp(
                    (0..nb).map(|j| (g[j] - cost[i * nb + j]) / eps + log_b[j]),
                );
                f[i] = -eps * lse;
            }
            for j in 0..nb {
                let lse = logsumexp(
                    (0..na).map(|i| (f[i] - cost[i * nb + j]) / eps + log_a[i]),
                );
                g[j] = -eps * lse;
            }
            residual = marginal_residual(&cost, &log_a, &log_b, &f, &g, eps);
            if residual < MARGINAL_TOL {
                break;
            }
            if iterations >= max_iters {
                break;
            }
        }
        if iterations >= max_iters && !final_level {
            break;
        }
    }
    if residual > MARGINAL_TOL {
        return Err(LabError::NonConvergence { residual });
    }
    // Plan statistics.
    let mut transport_cost = 0.0;
    let mut kl = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let log_t = log_a[i] + log_b[j] + (f[i] + g[j] - cost[i * nb + j]) / epsilon;
            let t = log_t.exp();
            transport_cost += t * cost[i * nb + j];
            kl += t * (f[i] + g[j] - cost[i * nb + j]) / epsilon;
        }
    }
    Ok(SinkhornReport {
        cost: transport_cost.max(0.0),
        entropic_value: transport_cost + epsilon * kl,
        marginal_residual: residual,
        iterations,
        epsilon,
    })
}

fn marginal_residual(
    cost: &[f64],
    log_a: &[f64],
    log_b: &[f64],
    f: &[f64],
    g: &[f64],
    eps: f64,
) -> f64 {
    let (na, nb) = (log_a.len(), log_b.len());
    let mut worst = 0.0f64;
    for i in 0..na {
        let row: f64 = (0..nb)
            .map(|j| (log_a[i] + log_b[j] + (f[i] + g[j] - cost[i * nb + j]) / eps).exp())
            .sum();
        worst = worst.max((row - log_a[i].exp()).abs());
    }
    for j in 0..nb {
        let col: f64 = (0..na)
            .map(|i| (log_a[i] + log_b[j] + (f[i] + g[j] - cost[i * nb + j]) / eps).exp())
            .sum();
        worst = worst.max((col - log_b[j].exp()).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{w2_squared_1d, w2_squared_exact};

    fn grid_measure(n: usize, shift: f64) -> DiscreteMeasure {
        let pts: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 + shift).collect();
        DiscreteMeasure::from_samples_1d(&pts).unwrap()
    }

    #[test]
    fn identical_measures_cost_vanishes_with_eps() {
        let a = grid_measure(16, 0.0);
        let coarse = sinkhorn_w2_squared(&a, &a, 0.1, 2000).unwrap();
        let fine = sinkhorn_w2_squared(&a, &a, 1e-3, 20_000).unwrap();
        assert!(fine.cost < coarse.cost);
        assert!(fine.cost < 5e-3, "cost at eps=1e-3: {}", fine.cost);
    }

    #[test]
    fn small_instance_matches_exact_as_eps_decreases() {
        let a = grid_measure(12, 0.0);
        let b = grid_measure(12, 0.4);
        let exact = w2_squared_exact(&a, &b).unwrap();
        let mut last_gap = f64::INFINITY;
        for eps in [0.25, 0.05, 1e-3] {
            let r = sinkhorn_w2_squared(&a, &b, eps, 50_000).unwrap();
            let gap = (r.cost - exact).abs();
            assert!(gap < last_gap + 1e-9, "eps {eps}: gap {gap} vs {last_gap}");
            last_gap = gap;
        }
        assert!(last_gap < 5e-3, "final gap {last_gap}");
    }

    #[test]
    fn agrees_with_quantile_solver_on_1d_pair() {
        let a = grid_measure(32, 0.0);
        let b = grid_measure(32, 0.7);
        let exact = w2_squared_1d(&a, &b).unwrap();
        let r = sinkhorn_w2_squared(&a, &b, 1e-3, 50_000).unwrap();
        assert!(
            (r.cost - exact).abs() / exact < 0.02,
            "sinkhorn {} vs exact {exact}",
            r.cost
        );
        assert!(r.marginal_residual < 1e-8);
    }

    #[test]
    fn rejects_bad_epsilon_and_reports_nonconvergence() {
        let a = grid_measure(4, 0.0);
        assert!(sinkhorn_w2_squared(&a, &a, 0.0, 100).is_err());
        let b = grid_measure(4, 3.0);
        match sinkhorn_w2_squared(&a, &b, 1e-4, 3) {
            Err(LabError::NonConvergence { residual }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
