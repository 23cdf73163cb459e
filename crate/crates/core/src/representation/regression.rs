//! Least-squares reconstruction of reversed martingale integrands.
//!
//! For `X = ∫ G_u dB̂_u`, the integrand satisfies
//! `G_u = E[X ΔB̂_u | F̂_u] / Δt`, so per grid step we regress
//! `(X - M̂_u) ΔB̂_u / Δt` onto basis functions of the reversed state
//! `B̂_u` (a constant plus piecewise-linear hats on `[-4√u, 4√u]`), where
//! `M̂_u` is the same-basis estimate of `E[X | F̂_u]` used purely as a
//! control variate.
//!
//! Quadratic functionals of the estimate (`E[(G-1)^2]`, reversed-martingale
//! second moments) are cross-fitted: the per-path sample splits into two
//! halves fitted independently, and squares are formed as products of the
//! two half-fits, which removes the first-order fit-noise bias that a
//! plug-in square would carry.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg;
use crate::wiener::{self, PathEnsemble, SampleVector, TimeGrid};

/// Basis and conditioning knobs for the reconstruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionConfig {
    /// Piecewise-linear hat functions per node (plus one constant).
    pub num_hats: usize,
    /// Hat support is `[-range_sigmas √u, range_sigmas √u]`.
    pub range_sigmas: f64,
    /// Relative ridge damping of the normal equations.
    pub ridge: f64,
    /// Condition-number ceiling; beyond it the basis counts as degenerate.
    pub condition_limit: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            num_hats: 16,
            range_sigmas: 4.0,
            ridge: 1e-8,
            condition_limit: 1e10,
        }
    }
}

/// Which half-sample a fit used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    A,
    B,
}

/// Sparse feature evaluation: a constant plus at most two adjacent hats.
#[derive(Debug, Clone, Copy)]
struct Features {
    idx: [usize; 3],
    val: [f64; 3],
    n: usize,
}

#[inline]
fn features(lo: f64, hi: f64, num_hats: usize, b: f64) -> Features {
    let mut f = Features {
        idx: [0, 0, 0],
        val: [1.0, 0.0, 0.0],
        n: 1,
    };
    if hi - lo > 1e-12 && num_hats >= 2 {
        let delta = (hi - lo) / (num_hats - 1) as f64;
        let pos = ((b - lo) / delta).clamp(0.0, (num_hats - 1) as f64);
        let i0 = (pos.floor() as usize).min(num_hats - 2);
        let frac = pos - i0 as f64;
        f.idx[1] = 1 + i0;
        f.val[1] = 1.0 - frac;
        f.idx[2] = 2 + i0;
        f.val[2] = frac;
        f.n = 3;
    }
    f
}

/// One node of a fitted reversed integrand.
#[derive(Debug, Clone)]
pub struct FitNode {
    /// Reversed-time coordinate `u_k`.
    pub t: f64,
    pub lo: f64,
    pub hi: f64,
    pub coeffs_full: Vec<f64>,
    pub coeffs_a: Vec<f64>,
    pub coeffs_b: Vec<f64>,
    /// Mean prediction variance of each half-fit.
    pub pv_a: f64,
    pub pv_b: f64,
    /// Effective basis dimension `sum (e_i/(e_i+ridge))^2` of the weaker half.
    pub effective_modes: f64,
    /// Condition number of the ridged full normal equations.
    pub condition: f64,
    /// `E[G]` estimate (mean of the regression target) and its std error.
    pub mean: f64,
    pub mean_se: f64,
    /// Cross-fitted `E[(G-1)^2]` and `E[G^2]` with std errors.
    pub energy: f64,
    pub energy_se: f64,
    pub sq_mean: f64,
    pub sq_se: f64,
}

/// Full fit across the requested node range.
pub struct ReversedFit {
    pub grid: TimeGrid,
    pub num_hats: usize,
    pub nodes: Vec<FitNode>,
}

impl ReversedFit {
    #[inline]
    pub fn eval_half(&self, half: Half, k: usize, b: f64) -> f64 {
        let node = &self.nodes[k];
        let coeffs = match half {
            Half::A => &node.coeffs_a,
            Half::B => &node.coeffs_b,
        };
        eval_coeffs(coeffs, node, self.num_hats, b)
    }

    #[inline]
    pub fn eval_full(&self, k: usize, b: f64) -> f64 {
        let node = &self.nodes[k];
        eval_coeffs(&node.coeffs_full, node, self.num_hats, b)
    }
}

#[inline]
fn eval_coeffs(coeffs: &[f64], node: &FitNode, num_hats: usize, b: f64) -> f64 {
    let f = features(node.lo, node.hi, num_hats, b);
    let mut acc = 0.0;
    for i in 0..f.n {
        acc += coeffs[f.idx[i]] * f.val[i];
    }
    acc
}

/// Symmetric gram accumulator in packed upper-triangular storage.
#[derive(Clone)]
struct Gram {
    p: usize,
    data: Vec<f64>,
}

impl Gram {
    fn new(p: usize) -> Self {
        Self {
            p,
            data: vec![0.0; p * (p + 1) / 2],
        }
    }

    #[inline]
    fn add(&mut self, f: &Features) {
        for a in 0..f.n {
            for b in a..f.n {
                let (i, j) = if f.idx[a] <= f.idx[b] {
                    (f.idx[a], f.idx[b])
                } else {
                    (f.idx[b], f.idx[a])
                };
                self.data[i * self.p - i * (i + 1) / 2 + j] += f.val[a] * f.val[b];
            }
        }
    }

    fn merge(&mut self, other: &Gram) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        let p = self.p;
        let mut m = nalgebra::DMatrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let v = self.data[i * p - i * (i + 1) / 2 + j];
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

#[inline]
fn add_rhs(rhs: &mut [f64], f: &Features, y: f64) {
    for i in 0..f.n {
        rhs[f.idx[i]] += f.val[i] * y;
    }
}

struct SolvedFit {
    coeffs: Vec<f64>,
    /// Shrinkage-squared trace `sum (e_i/(e_i+ridge))^2`.
    effective_modes: f64,
    condition: f64,
}

fn solve_node(gram: &Gram, rhs: &[f64], rel_ridge: f64) -> SolvedFit {
    let g = gram.to_matrix();
    let p = g.nrows();
    let ridge = rel_ridge * (g.trace() / p as f64).max(1e-300);
    let (vals, vecs) = linalg::sym_eigen(&g);
    let max_e = vals.iter().fold(0.0f64, |m, &v| m.max(v));
    let min_e = vals.iter().fold(f64::INFINITY, |m, &v| m.min(v.max(0.0)));
    let condition = (max_e + ridge) / (min_e + ridge);
    let rhs_v = nalgebra::DVector::from_column_slice(rhs);
    let proj = vecs.transpose() * rhs_v;
    let mut sol = nalgebra::DVector::zeros(p);
    let mut effective_modes = 0.0;
    for i in 0..p {
        let e = vals[i].max(0.0);
        sol[i] = proj[i] / (e + ridge);
        let s = e / (e + ridge);
        effective_modes += s * s;
    }
    let coeffs = vecs * sol;
    SolvedFit {
        coeffs: coeffs.iter().cloned().collect(),
        effective_modes,
        condition,
    }
}

/// Fits the reversed integrand on nodes `0..num_nodes` of the reversed
/// clock. Used by [`estimate_reversed_integrand`] and the Pythagorean
/// diagnostic.
pub(crate) fn regress_reversed(
    x: &SampleVector,
    e_rev: &PathEnsemble,
    cfg: &RegressionConfig,
    num_nodes: usize,
) -> Result<ReversedFit> {
    if x.dim != 1 || e_rev.dimension() != 1 {
        return Err(LabError::UnsupportedKind(
            "reversed-integrand estimation is 1D".into(),
        ));
    }
    if x.num_samples() != e_rev.num_paths() {
        return Err(LabError::DimensionMismatch {
            expected: e_rev.num_paths(),
            got: x.num_samples(),
        });
    }
    let grid = *e_rev.grid();
    let m = grid.steps();
    if num_nodes == 0 || num_nodes > m + 1 {
        return Err(LabError::InvalidParameter(format!(
            "node range {num_nodes} outside 1..={}",
            m + 1
        )));
    }
    let p = cfg.num_hats + 1;
    let dt = grid.dt();
    let n_paths = e_rev.num_paths();
    let n_a = n_paths.div_ceil(2) as f64;
    let n_b = (n_paths / 2) as f64;
    if n_b < 1.0 {
        return Err(LabError::InvalidParameter(
            "cross-fitting needs at least two paths".into(),
        ));
    }
    let ranges: Vec<(f64, f64)> = (0..num_nodes)
        .map(|k| {
            let u = grid.node(k);
            let r = cfg.range_sigmas * u.sqrt();
            (-r, r)
        })
        .collect();
    let xs = &x.values;

    // Pass 1: grams per half plus Psi^T x.
    struct Pass1 {
        grams: Vec<Gram>,  // 2 * num_nodes, [A then B] per node
        rhs_m: Vec<f64>,   // 2 * num_nodes * p
    }
    let chunk = regression_chunk(n_paths);
    let pass1 = wiener::reduce_paths_with(
        e_rev,
        chunk,
        || Pass1 {
            grams: vec![Gram::new(p); 2 * num_nodes],
            rhs_m: vec![0.0; 2 * num_nodes * p],
        },
        |acc, path, cursor| {
            let h = path % 2;
            let xi = xs[path];
            for k in 0..num_nodes {
                let (lo, hi) = ranges[k];
                let f = features(lo, hi, cfg.num_hats, cursor.nodes[k]);
                acc.grams[2 * k + h].add(&f);
                add_rhs(&mut acc.rhs_m[(2 * k + h) * p..(2 * k + h + 1) * p], &f, xi);
            }
        },
        |acc, part| {
            for (g, pg) in acc.grams.iter_mut().zip(&part.grams) {
                g.merge(pg);
            }
            for (a, b) in acc.rhs_m.iter_mut().zip(&part.rhs_m) {
                *a += b;
            }
        },
    );

    // Solve the control-variate fits M̂ (full sample).
    let mut m_full: Vec<Vec<f64>> = Vec::with_capacity(num_nodes);
    for k in 0..num_nodes {
        let mut g = pass1.grams[2 * k].clone();
        g.merge(&pass1.grams[2 * k + 1]);
        let rhs: Vec<f64> = (0..p)
            .map(|i| pass1.rhs_m[2 * k * p + i] + pass1.rhs_m[(2 * k + 1) * p + i])
            .collect();
        m_full.push(solve_node(&g, &rhs, cfg.ridge).coeffs);
    }

    // Pass 2: regression targets y = (x - M̂) dB̂ / dt, accumulated per half.
    struct Pass2 {
        rhs_g: Vec<f64>,   // 2 * num_nodes * p
        sums: Vec<f64>,    // 2 * num_nodes * 2 (sum y, sum y^2)
    }
    let make_feat = |k: usize, b: f64| features(ranges[k].0, ranges[k].1, cfg.num_hats, b);
    let pass2 = wiener::reduce_paths_with(
        e_rev,
        chunk,
        || Pass2 {
            rhs_g: vec![0.0; 2 * num_nodes * p],
            sums: vec![0.0; 4 * num_nodes],
        },
        |acc, path, cursor| {
            let h = path % 2;
            let xi = xs[path];
            for k in 0..num_nodes.min(m) {
                let b = cursor.nodes[k];
                let f = make_feat(k, b);
                let mut mhat = 0.0;
                for i in 0..f.n {
                    mhat += m_full[k][f.idx[i]] * f.val[i];
                }
                let y = (xi - mhat) * cursor.incr[k] / dt;
                add_rhs(&mut acc.rhs_g[(2 * k + h) * p..(2 * k + h + 1) * p], &f, y);
                acc.sums[4 * k + 2 * h] += y;
                acc.sums[4 * k + 2 * h + 1] += y * y;
            }
        },
        |acc, part| {
            for (a, b) in acc.rhs_g.iter_mut().zip(&part.rhs_g) {
                *a += b;
            }
            for (a, b) in acc.sums.iter_mut().zip(&part.sums) {
                *a += b;
            }
        },
    );

    // Solve the half and full integrand fits.
    let mut nodes: Vec<FitNode> = Vec::with_capacity(num_nodes);
    for k in 0..num_nodes {
        let (lo, hi) = ranges[k];
        let ga = &pass1.grams[2 * k];
        let gb = &pass1.grams[2 * k + 1];
        let rhs_a = &pass2.rhs_g[2 * k * p..(2 * k * p + p)];
        let rhs_b = &pass2.rhs_g[(2 * k + 1) * p..(2 * k + 1) * p + p];
        let fa = solve_node(ga, rhs_a, cfg.ridge);
        let fb = solve_node(gb, rhs_b, cfg.ridge);
        let mut gf = ga.clone();
        gf.merge(gb);
        let rhs_f: Vec<f64> = (0..p).map(|i| rhs_a[i] + rhs_b[i]).collect();
        let ff = solve_node(&gf, &rhs_f, cfg.ridge);
        if ff.condition > cfg.condition_limit {
            return Err(LabError::BasisDegeneracy {
                condition: ff.condition,
            });
        }
        let sum_ya = pass2.sums[4 * k];
        let sum_ya2 = pass2.sums[4 * k + 1];
        let sum_yb = pass2.sums[4 * k + 2];
        let sum_yb2 = pass2.sums[4 * k + 3];
        let n = n_a + n_b;
        let mean = (sum_ya + sum_yb) / n;
        let var_y = ((sum_ya2 + sum_yb2) / n - mean * mean).max(0.0);
        let mean_se = (var_y / n).sqrt();
        let var_a = (sum_ya2 / n_a - (sum_ya / n_a).powi(2)).max(0.0);
        let var_b = (sum_yb2 / n_b - (sum_yb / n_b).powi(2)).max(0.0);
        let pv_a = var_a * fa.effective_modes / n_a;
        let pv_b = var_b * fb.effective_modes / n_b;
        nodes.push(FitNode {
            t: grid.node(k),
            lo,
            hi,
            coeffs_full: ff.coeffs,
            coeffs_a: fa.coeffs,
            coeffs_b: fb.coeffs,
            pv_a,
            pv_b,
            effective_modes: fa.effective_modes.min(fb.effective_modes),
            condition: ff.condition,
            mean,
            mean_se,
            energy: 0.0,
            energy_se: 0.0,
            sq_mean: 0.0,
            sq_se: 0.0,
        });
    }
    // The terminal node carries no increment of its own; extend one-sidedly
    // so that trapezoid integrals over the reversed clock stay defined.
    if num_nodes == m + 1 {
        let prev = nodes[m - 1].clone();
        let last = &mut nodes[m];
        last.coeffs_full = prev.coeffs_full;
        last.coeffs_a = prev.coeffs_a;
        last.coeffs_b = prev.coeffs_b;
        last.pv_a = prev.pv_a;
        last.pv_b = prev.pv_b;
        last.mean = prev.mean;
        last.mean_se = prev.mean_se;
    }

    let mut fit = ReversedFit {
        grid,
        num_hats: cfg.num_hats,
        nodes,
    };

    // Pass 3: cross-fitted quadratic summaries from the half-fit
    // predictions.
    let eval_nodes = num_nodes;
    let stats = wiener::reduce_paths_with(
        e_rev,
        chunk,
        || vec![0.0f64; 5 * eval_nodes],
        |acc, _, cursor| {
            for k in 0..eval_nodes {
                let b = cursor.nodes[k.min(m)];
                let ga = fit.eval_half(Half::A, k, b) - 1.0;
                let gb = fit.eval_half(Half::B, k, b) - 1.0;
                let prod = ga * gb;
                let sq = (ga + 1.0) * (gb + 1.0);
                acc[5 * k] += prod;
                acc[5 * k + 1] += prod * prod;
                acc[5 * k + 2] += sq;
                acc[5 * k + 3] += sq * sq;
                acc[5 * k + 4] += fit.eval_full(k, b);
            }
        },
        |acc, part| acc.iter_mut().zip(part).for_each(|(a, v)| *a += v),
    );
    let n = n_paths as f64;
    for k in 0..eval_nodes {
        let energy = stats[5 * k] / n;
        let e_var = (stats[5 * k + 1] / n - energy * energy).max(0.0);
        let sq = stats[5 * k + 2] / n;
        let sq_var = (stats[5 * k + 3] / n - sq * sq).max(0.0);
        let node = &mut fit.nodes[k];
        // Residual fit-noise in the cross product spreads over the
        // effective basis modes.
        let fit_var = node.pv_a * node.pv_b / node.effective_modes.max(1.0);
        node.energy = energy;
        node.energy_se = (e_var / n + fit_var).sqrt();
        node.sq_mean = sq;
        node.sq_se = (sq_var / n + fit_var).sqrt();
    }
    Ok(fit)
}

/// Chunk size for regression reductions: larger than the default so the
/// per-chunk gram arrays stay bounded in number.
fn regression_chunk(n_paths: usize) -> usize {
    n_paths.div_ceil(16).max(1)
}

/// A tabulated reversed-integrand estimate with per-node summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedIntegrand {
    pub grid: TimeGrid,
    pub nodes: Vec<NodeEstimate>,
    /// Always true: the tabulation is a statistical reconstruction.
    pub approximate: bool,
    pub num_hats: usize,
}

/// Per-node public summary of the estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEstimate {
    /// Reversed-time coordinate `u_k`.
    pub t: f64,
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<f64>,
    pub mean: f64,
    pub mean_se: f64,
    /// Cross-fitted `E[(G - 1)^2]`.
    pub energy: f64,
    pub energy_se: f64,
    /// Cross-fitted `E[G^2]`.
    pub sq_mean: f64,
    pub sq_se: f64,
    pub condition: f64,
}

impl EstimatedIntegrand {
    #[inline]
    pub fn eval_node(&self, k: usize, b: f64) -> f64 {
        let node = &self.nodes[k];
        let f = features(node.lo, node.hi, self.num_hats, b);
        let mut acc = 0.0;
        for i in 0..f.n {
            acc += node.coeffs[f.idx[i]] * f.val[i];
        }
        acc
    }

    /// CSV with columns `t, mean, mean_se, energy, energy_se, c0..cp`.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "# talagrand-lab v1")?;
        let coeff_names: Vec<String> = (0..=self.num_hats).map(|i| format!("c{i}")).collect();
        writeln!(
            w,
            "t,mean,mean_se,energy,energy_se,{}",
            coeff_names.join(",")
        )?;
        for n in &self.nodes {
            let coeffs: Vec<String> = n.coeffs.iter().map(|c| crate::wiener::io::fmt12(*c)).collect();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                crate::wiener::io::fmt12(n.t),
                crate::wiener::io::fmt12(n.mean),
                crate::wiener::io::fmt12(n.mean_se),
                crate::wiener::io::fmt12(n.energy),
                crate::wiener::io::fmt12(n.energy_se),
                coeffs.join(",")
            )?;
        }
        Ok(())
    }
}

/// Reconstructs the reversed representation of `x` from the reversed
/// ensemble: per-step ridge regressions on the reversed-state basis.
pub fn estimate_reversed_integrand(
    x: &SampleVector,
    e_rev: &PathEnsemble,
    cfg: &RegressionConfig,
) -> Result<super::Integrand> {
    let m = e_rev.grid().steps();
    let fit = regress_reversed(x, e_rev, cfg, m + 1)?;
    let nodes = fit
        .nodes
        .iter()
        .map(|n| NodeEstimate {
            t: n.t,
            lo: n.lo,
            hi: n.hi,
            coeffs: n.coeffs_full.clone(),
            mean: n.mean,
            mean_se: n.mean_se,
            energy: n.energy,
            energy_se: n.energy_se,
            sq_mean: n.sq_mean,
            sq_se: n.sq_se,
            condition: n.condition,
        })
        .collect();
    Ok(super::Integrand::Estimated(EstimatedIntegrand {
        grid: *e_rev.grid(),
        nodes,
        approximate: true,
        num_hats: cfg.num_hats,
    }))
}
