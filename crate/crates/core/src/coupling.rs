//! Couplings of `(mu, nu)` and their certificates: the time-reversal
//! coupling (both laws integrated against the same reversed paths), the
//! linear coupling of two Brownian motions with correlation `sigma`, and the
//! per-inequality chain certificate behind the transport-entropy bound.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::gaussian::{bures_w2_squared, TargetMeasure};
use crate::ot;
use crate::quad::{adaptive_gk, simpson_weights};
use crate::representation::{
    entropy_functional, estimate_reversed_integrand, reverse_deterministic, tail_energy_profile,
    EntropyMode, Integrand, PreparedIntegrand, RegressionConfig, StateRule, TailEnergyMode,
    TailEnergyProfile,
};
use crate::wiener::{self, PathEnsemble};

/// Tolerance for deterministic slack checks.
pub const DETERMINISTIC_TOL: f64 = 1e-10;

/// Monte Carlo checks pass within this many standard errors.
pub const MC_SIGMAS: f64 = 3.0;

/// An oracle value with the name of the method that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub source: String,
}

/// Cost report of a constructed coupling against its two oracles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingReport {
    /// Estimate of `E ||X - Y||^2`.
    pub cost: f64,
    pub std_error: f64,
    /// Squared W2 between the marginals (the coupling can never beat it).
    pub lower_oracle: OracleValue,
    /// `2 D(mu||gamma) + 2 D(nu||gamma)`.
    pub upper_oracle: OracleValue,
    /// `cost - lower_oracle`.
    pub slack_lower: f64,
    /// `upper_oracle - cost`.
    pub slack_upper: f64,
    pub num_paths: usize,
    /// Norm of the recorded translation applied to recenter `nu`.
    pub nu_shift_norm: f64,
    /// Sample second moments of the two integrals.
    pub marginal_x: f64,
    pub marginal_y: f64,
}

/// Squared-W2 oracle choice: Bures for Gaussian pairs, the 1D quantile
/// coupling otherwise.
pub fn w2_oracle(mu: &TargetMeasure, nu: &TargetMeasure) -> Result<OracleValue> {
    match (mu, nu) {
        (TargetMeasure::Gaussian(a), TargetMeasure::Gaussian(b)) => Ok(OracleValue {
            value: bures_w2_squared(a, b)?,
            source: "bures".into(),
        }),
        _ => {
            if mu.dim() != 1 || nu.dim() != 1 {
                return Err(LabError::DimensionMismatch {
                    expected: 1,
                    got: mu.dim().max(nu.dim()),
                });
            }
            let q = ot::w2_squared_1d_quantile(
                |p| mu.quantile_1d(p).expect("1D quantile"),
                |p| nu.quantile_1d(p).expect("1D quantile"),
                1e-9,
            )?;
            Ok(OracleValue {
                value: q.value,
                source: "quantile_1d".into(),
            })
        }
    }
}

/// `2 D(mu||gamma) + 2 D(nu||gamma)` with the method name attached.
pub fn entropy_oracle(mu: &TargetMeasure, nu: &TargetMeasure) -> Result<OracleValue> {
    let d_mu = mu.kl_to_gamma()?;
    let d_nu = nu.kl_to_gamma()?;
    let source = match (mu, nu) {
        (TargetMeasure::Gaussian(_), TargetMeasure::Gaussian(_)) => "closed_form",
        _ => "closed_form+quadrature",
    };
    Ok(OracleValue {
        value: 2.0 * d_mu + 2.0 * d_nu,
        source: source.into(),
    })
}

/// Integrates two integrands against the same paths in one sweep.
///
/// Returns per-path `(x, y)` interleaved as `[x_0.., y_0..]` blocks of
/// length `2 * dim`.
fn integrate_pair(
    f: &PreparedIntegrand,
    g: &PreparedIntegrand,
    e: &PathEnsemble,
) -> Vec<f64> {
    let d = f.dim();
    let dt = e.grid().dt();
    let m = e.grid().steps();
    let mut out = vec![0.0; e.num_paths() * 2 * d];
    wiener::map_paths_into(e, &mut out, 2 * d, |_, cursor, rec| {
        rec.iter_mut().for_each(|v| *v = 0.0);
        let (xs, ys) = rec.split_at_mut(d);
        let mut state_f = 0.0f64;
        let mut state_g = 0.0f64;
        for k in 0..m {
            let db = cursor.incr(k);
            apply_step(f, k, db, cursor, dt, &mut state_f, xs);
            apply_step(g, k, db, cursor, dt, &mut state_g, ys);
        }
    });
    out
}

#[inline]
fn apply_step(
    p: &PreparedIntegrand,
    k: usize,
    db: &[f64],
    cursor: &wiener::PathCursor,
    dt: f64,
    state: &mut f64,
    out: &mut [f64],
) {
    match p.state_rule() {
        StateRule::None => {
            if p.dim() == 1 {
                out[0] += p.scalar_at(k, 0.0) * db[0];
            } else {
                let d = p.dim();
                let mat = p.matrix_at(k);
                for i in 0..d {
                    let row = &mat[i * d..(i + 1) * d];
                    let mut acc = out[i];
                    for j in 0..d {
                        acc += row[j] * db[j];
                    }
                    out[i] = acc;
                }
            }
        }
        StateRule::EulerMaruyama => {
            out[0] += p.scalar_at(k, *state) * db[0];
            *state += db[0] + p.drift_at(k, *state) * dt;
        }
        StateRule::NodeValue => {
            out[0] += p.scalar_at(k, cursor.nodes[k]) * db[0];
        }
    }
}

/// Builds the time-reversal coupling: `X` and `Y` are integrals of the two
/// representations against the same reversed ensemble, `nu` is recentered
/// with the shift recorded, and the cost is certified against the W2 and
/// entropy oracles.
pub fn time_reversal_coupling(
    g_mu: &Integrand,
    h_nu: &Integrand,
    mu: &TargetMeasure,
    nu: &TargetMeasure,
    e_rev: &PathEnsemble,
) -> Result<CouplingReport> {
    let d = e_rev.dimension();
    if g_mu.dim() != d || h_nu.dim() != d || mu.dim() != d || nu.dim() != d {
        return Err(LabError::DimensionMismatch {
            expected: d,
            got: g_mu.dim().max(h_nu.dim()).max(mu.dim()).max(nu.dim()),
        });
    }
    // The representations generate centered laws; a nu mean enters as a
    // deterministic shift of Y, recorded in the report.
    let shift = match nu {
        TargetMeasure::Gaussian(g) => g.mean().clone(),
        TargetMeasure::Mixture(mx) => {
            if !mx.is_centered() {
                return Err(LabError::HypothesisViolation(
                    "mixture nu must be centered".into(),
                ));
            }
            nalgebra::DVector::zeros(1)
        }
    };
    let pf = g_mu.prepare(e_rev.grid())?;
    let ph = h_nu.prepare(e_rev.grid())?;
    let pairs = integrate_pair(&pf, &ph, e_rev);
    let n = e_rev.num_paths();
    let mut sum_d2 = 0.0;
    let mut sum_d4 = 0.0;
    let mut sum_x2 = 0.0;
    let mut sum_y2 = 0.0;
    for rec in pairs.chunks(2 * d) {
        let (x, y) = rec.split_at(d);
        let mut d2 = 0.0;
        let mut x2 = 0.0;
        let mut y2 = 0.0;
        for c in 0..d {
            let yc = y[c] + shift[c];
            let diff = x[c] - yc;
            d2 += diff * diff;
            x2 += x[c] * x[c];
            y2 += yc * yc;
        }
        sum_d2 += d2;
        sum_d4 += d2 * d2;
        sum_x2 += x2;
        sum_y2 += y2;
    }
    let nf = n as f64;
    let cost = sum_d2 / nf;
    let var = (sum_d4 / nf - cost * cost).max(0.0);
    let std_error = (var / nf).sqrt();
    let marginal_x = sum_x2 / nf;
    let marginal_y = sum_y2 / nf;
    for (which, observed, target) in [
        ("X", marginal_x, mu.second_moment()),
        ("Y", marginal_y, nu.second_moment()),
    ] {
        if (observed - target).abs() > 0.05 * target.max(1e-12) {
            return Err(LabError::MarginalMismatch {
                which: which.into(),
                observed,
                target,
            });
        }
    }
    let lower_oracle = w2_oracle(mu, nu)?;
    let upper_oracle = entropy_oracle(mu, nu)?;
    Ok(CouplingReport {
        cost,
        std_error,
        slack_lower: cost - lower_oracle.value,
        slack_upper: upper_oracle.value - cost,
        lower_oracle,
        upper_oracle,
        num_paths: n,
        nu_shift_norm: shift.norm(),
        marginal_x,
        marginal_y,
    })
}

/// Closed-form cost of the linear coupling:
/// `(alpha + 1/alpha) - 4 sigma log(alpha) / (alpha - 1/alpha)` for
/// `alpha != 1`, and `2(1 - sigma)` at `alpha = 1`.
pub fn linear_coupling_cost(alpha: f64, sigma: f64) -> Result<f64> {
    if alpha <= 0.0 {
        return Err(LabError::InvalidParameter("alpha must be positive".into()));
    }
    if !(-1.0..=1.0).contains(&sigma) {
        return Err(LabError::InvalidParameter(format!(
            "|sigma| must be <= 1, got {sigma}"
        )));
    }
    if alpha == 1.0 {
        Ok(2.0 * (1.0 - sigma))
    } else {
        Ok(alpha + 1.0 / alpha - 4.0 * sigma * alpha.ln() / (alpha - 1.0 / alpha))
    }
}

/// One row of a linear-coupling experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearCouplingReport {
    pub alpha: f64,
    pub sigma: f64,
    pub cost_closed_form: f64,
    pub cost_mc: f64,
    pub std_error: f64,
    /// `W2^2(N(0,alpha), N(0,1/alpha)) = alpha + 1/alpha - 2`.
    pub w2_squared: f64,
}

/// Simulates the whole `(alpha, sigma)` grid in one sweep of a
/// 2-dimensional ensemble. The coordinate pair maps through the square root
/// of `[[1, sigma], [sigma, 1]]`, and the sigma-independent partial sums
/// `∫F dW_i`, `∫G dW_i` are shared across the sigma grid.
pub fn linear_coupling_sweep(
    alphas: &[f64],
    sigmas: &[f64],
    e: &PathEnsemble,
) -> Result<Vec<LinearCouplingReport>> {
    if e.dimension() != 2 {
        return Err(LabError::DimensionMismatch {
            expected: 2,
            got: e.dimension(),
        });
    }
    if alphas.is_empty() || sigmas.is_empty() {
        return Err(LabError::InvalidParameter("empty parameter grid".into()));
    }
    for &a in alphas {
        if a <= 0.0 {
            return Err(LabError::InvalidParameter("alpha must be positive".into()));
        }
    }
    let mixers: Vec<(f64, f64)> = sigmas
        .iter()
        .map(|&s| {
            if !(-1.0..=1.0).contains(&s) {
                return Err(LabError::InvalidParameter(format!(
                    "|sigma| must be <= 1, got {s}"
                )));
            }
            let c = 0.5 * ((1.0 + s).sqrt() + (1.0 - s).sqrt());
            let d = 0.5 * ((1.0 + s).sqrt() - (1.0 - s).sqrt());
            Ok((c, d))
        })
        .collect::<Result<_>>()?;
    let m = e.grid().steps();
    // Per-alpha integrand tables at the left endpoints.
    let tables: Vec<(Vec<f64>, Vec<f64>)> = alphas
        .iter()
        .map(|&a| {
            let f: Vec<f64> = (0..m)
                .map(|k| {
                    let t = e.grid().node(k);
                    a / (1.0 - t + a * t)
                })
                .collect();
            let g: Vec<f64> = (0..m)
                .map(|k| {
                    let t = e.grid().node(k);
                    1.0 / (a * (1.0 - t) + t)
                })
                .collect();
            (f, g)
        })
        .collect();
    let na = alphas.len();
    let ns = sigmas.len();
    let sums = wiener::reduce_paths(
        e,
        || vec![0.0f64; 2 * na * ns],
        |acc, _, cursor| {
            for (ai, (ft, gt)) in tables.iter().enumerate() {
                let mut p1 = 0.0;
                let mut p2 = 0.0;
                let mut q1 = 0.0;
                let mut q2 = 0.0;
                for k in 0..m {
                    let d1 = cursor.incr[2 * k];
                    let d2 = cursor.incr[2 * k + 1];
                    p1 += ft[k] * d1;
                    p2 += ft[k] * d2;
                    q1 += gt[k] * d1;
                    q2 += gt[k] * d2;
                }
                for (si, &(c, d)) in mixers.iter().enumerate() {
                    let diff = c * p1 + d * p2 - d * q1 - c * q2;
                    let d2v = diff * diff;
                    let idx = 2 * (ai * ns + si);
                    acc[idx] += d2v;
                    acc[idx + 1] += d2v * d2v;
                }
            }
        },
        |acc, p| acc.iter_mut().zip(p).for_each(|(a, v)| *a += v),
    );
    let nf = e.num_paths() as f64;
    let mut out = Vec::with_capacity(na * ns);
    for (ai, &alpha) in alphas.iter().enumerate() {
        for (si, &sigma) in sigmas.iter().enumerate() {
            let idx = 2 * (ai * ns + si);
            let mean = sums[idx] / nf;
            let var = (sums[idx + 1] / nf - mean * mean).max(0.0);
            out.push(LinearCouplingReport {
                alpha,
                sigma,
                cost_closed_form: linear_coupling_cost(alpha, sigma)?,
                cost_mc: mean,
                std_error: (var / nf).sqrt(),
                w2_squared: alpha + 1.0 / alpha - 2.0,
            });
        }
    }
    Ok(out)
}

/// Single-cell convenience around [`linear_coupling_sweep`].
pub fn linear_coupling_simulate(
    alpha: f64,
    sigma: f64,
    e: &PathEnsemble,
) -> Result<LinearCouplingReport> {
    Ok(linear_coupling_sweep(&[alpha], &[sigma], e)?.remove(0))
}

/// Minimum of the closed-form linear cost over `|sigma| <= 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinLinearReport {
    pub alpha: f64,
    pub sigma_star: f64,
    pub cost: f64,
    pub w2_squared: f64,
    /// True iff the minimum attains the W2 floor (only at `alpha = 1`).
    pub equality: bool,
    pub verdict: String,
}

/// Minimizes the linear-coupling cost over sigma. The cost is affine in
/// sigma, so the optimum sits at an endpoint.
pub fn min_linear_cost(alpha: f64) -> Result<MinLinearReport> {
    let at_plus = linear_coupling_cost(alpha, 1.0)?;
    let at_minus = linear_coupling_cost(alpha, -1.0)?;
    let (sigma_star, cost) = if at_plus <= at_minus {
        (1.0, at_plus)
    } else {
        (-1.0, at_minus)
    };
    let w2_squared = alpha + 1.0 / alpha - 2.0;
    let equality = (cost - w2_squared).abs() <= 1e-12;
    let verdict = if equality {
        format!("linear coupling attains W2^2 at alpha = {alpha}")
    } else {
        format!(
            "linear coupling exceeds W2^2 by {:.6e} at alpha = {alpha}",
            cost - w2_squared
        )
    };
    Ok(MinLinearReport {
        alpha,
        sigma_star,
        cost,
        w2_squared,
        equality,
        verdict,
    })
}

/// A one-line slack record inside a chain certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlackRecord {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs` for one-sided checks; signed difference for two-sided
    /// consistency checks.
    pub slack: f64,
    pub std_error: f64,
}

/// Certificate of every displayed inequality in the coupling argument.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainCertificate {
    /// (i) per-node tail-energy slack (the Lemma behind the Tonelli step).
    pub tail_step: Vec<SlackRecord>,
    /// (i) aggregated weighted comparison
    /// `∫ E||G_s - I||^2 / s ds <= ∫ E||F_s - I||^2/(1-s) ds`.
    pub weighted_comparison: SlackRecord,
    /// (ii) per-node convexity split, endpoints excluded.
    pub convexity_split: Vec<SlackRecord>,
    /// (iii) per-node two-route consistency of `E||G_t - H_t||^2`.
    pub isometry_consistency: Vec<SlackRecord>,
    /// Final sandwich: coupling cost vs the sum of weighted energies.
    pub cost_sandwich: SlackRecord,
    pub verdict: bool,
    pub notes: Vec<String>,
}

fn weighted_energy_quadrature(det: &crate::representation::DetIntegrand, weight_left: bool) -> f64 {
    // ∫ ||F(t)-I||^2 / w(t) dt with w = t (weight_left) or 1-t, endpoint by
    // one-sided extrapolation as in the entropy functional.
    let m = 2000usize;
    let h = 1.0 / m as f64;
    let mut vals = vec![0.0; m + 1];
    for (k, v) in vals.iter_mut().enumerate() {
        let t = k as f64 * h;
        let denom = if weight_left { t } else { 1.0 - t };
        if denom > 0.0 {
            *v = det.energy_at(t) / denom;
        }
    }
    if weight_left {
        vals[0] = (2.0 * vals[1] - vals[2]).max(0.0);
    } else {
        vals[m] = (2.0 * vals[m - 1] - vals[m - 2]).max(0.0);
    }
    crate::quad::simpson_uniform(&vals, 1.0)
}

/// Certifies the three displayed inequalities of the coupling proof for a
/// forward representation of `mu` and a reversed representation of `nu`.
///
/// Deterministic `f_mu` uses the exact time-flip reversal and quadrature;
/// a Föllmer `f_mu` reconstructs the reversed integrand by regression and
/// carries Monte Carlo standard errors.
pub fn theorem_chain_certificate(
    f_mu: &Integrand,
    h_nu: &Integrand,
    e: &PathEnsemble,
) -> Result<ChainCertificate> {
    let grid = *e.grid();
    let m = grid.steps();
    if e.dimension() != 1 || f_mu.dim() != 1 || h_nu.dim() != 1 {
        return Err(LabError::UnsupportedKind(
            "chain certificates are 1D".into(),
        ));
    }
    let h_det = h_nu.as_deterministic().ok_or_else(|| {
        LabError::UnsupportedKind("h_nu must be a deterministic reversed representation".into())
    })?;
    let e_rev = e.reversed();
    let mut notes = vec![
        "convexity split excludes t in {0, 1}: degenerate weights".into(),
        "weighted integrands take their one-sided limits at the singular endpoint".into(),
    ];

    match f_mu.as_deterministic() {
        Some(f_det) => {
            let g = reverse_deterministic(f_mu)?;
            let g_det = g.as_deterministic().unwrap();
            // (i) exact tail profile.
            let tail = tail_energy_profile(f_mu, &g, TailEnergyMode::Quadrature, &grid)?;
            let tail_step = tail_records(&tail);
            // Aggregated weighted comparison.
            let lhs_w = weighted_energy_quadrature(g_det, true);
            let rhs_w = weighted_energy_quadrature(f_det, false);
            let weighted_comparison = SlackRecord {
                t: f64::NAN,
                lhs: lhs_w,
                rhs: rhs_w,
                slack: rhs_w - lhs_w,
                std_error: 0.0,
            };
            // (ii) convexity split, closed form.
            let mut convexity_split = Vec::with_capacity(m.saturating_sub(1));
            for k in 1..m {
                let t = grid.node(k);
                let gv = g_det.eval_scalar(t);
                let hv = h_det.eval_scalar(t);
                let lhs = (gv - hv) * (gv - hv);
                let rhs = (gv - 1.0) * (gv - 1.0) / t + (hv - 1.0) * (hv - 1.0) / (1.0 - t);
                convexity_split.push(SlackRecord {
                    t,
                    lhs,
                    rhs,
                    slack: rhs - lhs,
                    std_error: 0.0,
                });
            }
            // (iii) per-node Monte Carlo vs closed-form E||G_t - H_t||^2,
            // plus the per-path cost.
            let g_table: Vec<f64> = (0..=m).map(|k| g_det.eval_scalar(grid.node(k))).collect();
            let h_table: Vec<f64> = (0..=m).map(|k| h_det.eval_scalar(grid.node(k))).collect();
            let dt = grid.dt();
            let sums = wiener::reduce_paths(
                &e_rev,
                || vec![0.0f64; 2 * m + 2],
                |acc, _, cursor| {
                    let mut diff_total = 0.0;
                    for k in 0..m {
                        let step = (g_table[k] - h_table[k]) * cursor.incr[k];
                        let z = step * step / dt;
                        acc[2 * k] += z;
                        acc[2 * k + 1] += z * z;
                        diff_total += step;
                    }
                    acc[2 * m] += diff_total * diff_total;
                    acc[2 * m + 1] += diff_total.powi(4);
                },
                |acc, p| acc.iter_mut().zip(p).for_each(|(a, v)| *a += v),
            );
            let nf = e.num_paths() as f64;
            let mut isometry_consistency = Vec::with_capacity(m);
            for k in 0..m {
                let t = grid.node(k);
                let mc = sums[2 * k] / nf;
                let var = (sums[2 * k + 1] / nf - mc * mc).max(0.0);
                let closed = {
                    let d = g_table[k] - h_table[k];
                    d * d
                };
                isometry_consistency.push(SlackRecord {
                    t,
                    lhs: mc,
                    rhs: closed,
                    slack: closed - mc,
                    std_error: (var / nf).sqrt(),
                });
            }
            let cost_mc = sums[2 * m] / nf;
            let cost_var = (sums[2 * m + 1] / nf - cost_mc * cost_mc).max(0.0);
            let rhs_sandwich =
                weighted_energy_quadrature(g_det, true) + weighted_energy_quadrature(h_det, false);
            let cost_sandwich = SlackRecord {
                t: f64::NAN,
                lhs: cost_mc,
                rhs: rhs_sandwich,
                slack: rhs_sandwich - cost_mc,
                std_error: (cost_var / nf).sqrt(),
            };
            let verdict = chain_verdict(
                &tail_step,
                &weighted_comparison,
                &convexity_split,
                &isometry_consistency,
                &cost_sandwich,
            );
            notes.push("deterministic route: reversal by exact time flip".into());
            Ok(ChainCertificate {
                tail_step,
                weighted_comparison,
                convexity_split,
                isometry_consistency,
                cost_sandwich,
                verdict,
                notes,
            })
        }
        None => {
            // Monte Carlo route: estimate the reversed representation.
            let x = wiener::ito_integral(f_mu, e)?;
            let g_est = estimate_reversed_integrand(&x, &e_rev, &RegressionConfig::default())?;
            let est = match &g_est {
                Integrand::Estimated(est) => est.clone(),
                _ => unreachable!(),
            };
            let tail =
                tail_energy_profile(f_mu, &g_est, TailEnergyMode::MonteCarlo(e), &grid)?;
            let tail_step = tail_records(&tail);
            // Weighted comparison: lhs from stored energies over the
            // reversed clock, rhs = 2 J(f) by Monte Carlo.
            let weights = simpson_weights(m, 1.0);
            let mut lhs_w = 0.0;
            let mut lhs_var = 0.0;
            for k in 1..=m {
                let u = grid.node(k);
                let node = &est.nodes[k];
                lhs_w += weights[k] * node.energy / u;
                lhs_var += (weights[k] * node.energy_se / u).powi(2);
            }
            let target = match f_mu {
                Integrand::Follmer(fi) => TargetMeasure::Mixture(fi.mixture.clone()),
                _ => {
                    return Err(LabError::UnsupportedKind(
                        "Monte Carlo chain route expects a Föllmer integrand".into(),
                    ))
                }
            };
            let cert = entropy_functional(f_mu, &target, EntropyMode::MonteCarlo(e), &grid)?;
            let rhs_w = 2.0 * cert.j_value;
            let weighted_comparison = SlackRecord {
                t: f64::NAN,
                lhs: lhs_w,
                rhs: rhs_w,
                slack: rhs_w - lhs_w,
                std_error: (lhs_var + (2.0 * cert.std_error).powi(2)).sqrt(),
            };
            // (ii) convexity split from the stored node summaries.
            let mut convexity_split = Vec::with_capacity(m.saturating_sub(1));
            for k in 1..m {
                let u = grid.node(k);
                let node = &est.nodes[k];
                let hv = h_det.eval_scalar(u);
                let lhs = node.sq_mean - 2.0 * hv * node.mean + hv * hv;
                let lhs_se = node.sq_se + 2.0 * hv.abs() * node.mean_se;
                let rhs = node.energy / u + (hv - 1.0) * (hv - 1.0) / (1.0 - u);
                let rhs_se = node.energy_se / u;
                convexity_split.push(SlackRecord {
                    t: u,
                    lhs,
                    rhs,
                    slack: rhs - lhs,
                    std_error: lhs_se + rhs_se,
                });
            }
            // (iii) consistency: pathwise E||(Ĝ - H) dB̂||^2 / dt against the
            // node summaries, plus the true coupling cost E||X - Y||^2.
            let y = wiener::ito_integral(h_nu, &e_rev)?;
            let h_table: Vec<f64> = (0..=m).map(|k| h_det.eval_scalar(grid.node(k))).collect();
            let dt = grid.dt();
            let prepared_g = g_est.prepare(&grid)?;
            let sums = wiener::reduce_paths(
                &e_rev,
                || vec![0.0f64; 2 * m],
                |acc, _, cursor| {
                    for k in 0..m {
                        let gv = prepared_g.scalar_at(k, cursor.nodes[k]);
                        let step = (gv - h_table[k]) * cursor.incr[k];
                        let z = step * step / dt;
                        acc[2 * k] += z;
                        acc[2 * k + 1] += z * z;
                    }
                },
                |acc, p| acc.iter_mut().zip(p).for_each(|(a, v)| *a += v),
            );
            let nf = e.num_paths() as f64;
            let mut isometry_consistency = Vec::with_capacity(m - 1);
            for k in 1..m {
                let u = grid.node(k);
                let node = &est.nodes[k];
                let mc = sums[2 * k] / nf;
                let var = (sums[2 * k + 1] / nf - mc * mc).max(0.0);
                let hv = h_table[k];
                let closed = node.sq_mean - 2.0 * hv * node.mean + hv * hv;
                let closed_se = node.sq_se + 2.0 * hv.abs() * node.mean_se;
                isometry_consistency.push(SlackRecord {
                    t: u,
                    lhs: mc,
                    rhs: closed,
                    slack: closed - mc,
                    std_error: (var / nf).sqrt() + closed_se,
                });
            }
            let mut cost_sum = 0.0;
            let mut cost_sq = 0.0;
            for i in 0..x.num_samples() {
                let d = x.values[i] - y.values[i];
                cost_sum += d * d;
                cost_sq += d * d * d * d;
            }
            let cost_mc = cost_sum / nf;
            let cost_var = (cost_sq / nf - cost_mc * cost_mc).max(0.0);
            let rhs_sandwich = lhs_w + weighted_energy_quadrature(h_det, false);
            let cost_sandwich = SlackRecord {
                t: f64::NAN,
                lhs: cost_mc,
                rhs: rhs_sandwich,
                slack: rhs_sandwich - cost_mc,
                std_error: (cost_var / nf).sqrt() + lhs_var.sqrt(),
            };
            let verdict = chain_verdict(
                &tail_step,
                &weighted_comparison,
                &convexity_split,
                &isometry_consistency,
                &cost_sandwich,
            );
            notes.push("Monte Carlo route: reversal reconstructed by regression".into());
            Ok(ChainCertificate {
                tail_step,
                weighted_comparison,
                convexity_split,
                isometry_consistency,
                cost_sandwich,
                verdict,
                notes,
            })
        }
    }
}

fn tail_records(tail: &TailEnergyProfile) -> Vec<SlackRecord> {
    tail.t
        .iter()
        .zip(tail.lhs.iter().zip(tail.rhs.iter().zip(&tail.slack)))
        .zip(&tail.std_error)
        .map(|((t, (l, (r, s))), se)| SlackRecord {
            t: *t,
            lhs: *l,
            rhs: *r,
            slack: *s,
            std_error: *se,
        })
        .collect()
}

fn chain_verdict(
    tail: &[SlackRecord],
    weighted: &SlackRecord,
    convexity: &[SlackRecord],
    isometry: &[SlackRecord],
    sandwich: &SlackRecord,
) -> bool {
    let one_sided = |r: &SlackRecord| r.slack >= -DETERMINISTIC_TOL.max(MC_SIGMAS * r.std_error);
    let two_sided = |r: &SlackRecord| {
        r.slack.abs() <= DETERMINISTIC_TOL.max(MC_SIGMAS * r.std_error)
    };
    tail.iter().all(one_sided)
        && one_sided(weighted)
        && convexity.iter().all(one_sided)
        && isometry.iter().all(two_sided)
        && one_sided(sandwich)
}

/// Helper: builds the equality-case coupling inputs for a 1D variance
/// `alpha`: the reversed-time representation of `N(0, alpha)` and the
/// optimal representation of `N(0, 1/alpha)` against the same reversed
/// motion.
pub fn equality_pair_integrands(alpha: f64) -> Result<(Integrand, Integrand)> {
    let f = crate::representation::gaussian_integrand_1d(alpha)?;
    let g = reverse_deterministic(&f)?;
    let h = crate::representation::gaussian_integrand_1d(1.0 / alpha)?;
    Ok((g, h))
}

/// Analytic reversal-coupling cost for the 1D equality pair:
/// `∫ (g - h)^2 du` with `g(u) = alpha/(u + alpha(1-u))`,
/// `h(u) = 1/(alpha(1-u) + u)`.
pub fn equality_pair_reversal_cost(alpha: f64) -> Result<f64> {
    if alpha <= 0.0 {
        return Err(LabError::InvalidParameter("alpha must be positive".into()));
    }
    let f = |u: f64| {
        let g = alpha / (u + alpha * (1.0 - u));
        let h = 1.0 / (alpha * (1.0 - u) + u);
        (g - h) * (g - h)
    };
    Ok(adaptive_gk(f, 0.0, 1.0, 1e-12)?.value)
}
