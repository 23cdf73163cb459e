//! Heat-semigroup closed forms for the entropy-minimizing representation of
//! a centered 1D Gaussian mixture.
//!
//! With `h = dμ/dγ` and `P_u` the heat semigroup, the state process follows
//! `dX = dB + b(t, X) dt` with drift `b(t, x) = ∂_x log P_{1-t}h(x)` and the
//! optimal integrand is `F(t, x) = 1 + (1-t) ∂²_x log P_{1-t}h(x)`.
//!
//! For a mixture, `h` is a sum of terms `exp(a y²/2 + b y + c)` and the
//! semigroup acts componentwise:
//! `P_u e^{a y²/2 + b y + c}(x) = (1-au)^{-1/2} e^{A x²/2 + B x + C}` with
//! `A = a/(1-au)`, `B = b/(1-au)`, `C = c + u b²/(2(1-au))`. Everything
//! below is exact up to floating point; no sampling enters the integrand.

use crate::error::{LabError, Result};
use crate::gaussian::{GaussianMixture1D, CENTERED_TOL};
use crate::wiener::TimeGrid;

/// Log-density floor below which the semigroup evaluation refuses to take a
/// logarithm (`P_{1-t}h <= 1e-300`).
const LOG_FLOOR: f64 = -690.0;

/// The Föllmer integrand of a centered 1D mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct FollmerIntegrand {
    pub mixture: GaussianMixture1D,
}

/// State-feedback integrand realizing the entropy infimum for a centered 1D
/// Gaussian mixture, together with its Euler–Maruyama drift.
pub fn follmer_integrand_1d(mixture: &GaussianMixture1D) -> Result<super::Integrand> {
    if !mixture.is_centered() {
        return Err(LabError::HypothesisViolation(format!(
            "mixture centered (mean {:.3e} exceeds {CENTERED_TOL:.0e})",
            mixture.mean()
        )));
    }
    Ok(super::Integrand::Follmer(FollmerIntegrand {
        mixture: mixture.clone(),
    }))
}

/// Per-component coefficients of `log P_u h` at one grid node.
#[derive(Debug, Clone)]
struct NodeCoefficients {
    /// `log w_j - log s_j - (1/2) log(1 - a_j u) + C_j` per component.
    log_scale: Vec<f64>,
    /// Quadratic coefficient `A_j`.
    quad: Vec<f64>,
    /// Linear coefficient `B_j`.
    lin: Vec<f64>,
}

/// Grid-sampled semigroup coefficients.
pub struct PreparedFollmer {
    nodes: Vec<NodeCoefficients>,
    one_minus_t: Vec<f64>,
}

impl FollmerIntegrand {
    fn component_params(&self) -> Vec<(f64, f64, f64, f64)> {
        // (a, b, c, log w - log s)
        self.mixture
            .weights
            .iter()
            .zip(self.mixture.means.iter().zip(&self.mixture.variances))
            .map(|(&w, (&m, &v))| {
                let a = 1.0 - 1.0 / v;
                let b = m / v;
                let c = -m * m / (2.0 * v);
                (a, b, c, w.ln() - 0.5 * v.ln())
            })
            .collect()
    }

    fn coefficients_at(&self, u: f64) -> NodeCoefficients {
        let params = self.component_params();
        let mut log_scale = Vec::with_capacity(params.len());
        let mut quad = Vec::with_capacity(params.len());
        let mut lin = Vec::with_capacity(params.len());
        for (a, b, c, logw) in params {
            let denom = 1.0 - a * u;
            log_scale.push(logw - 0.5 * denom.ln() + c + u * b * b / (2.0 * denom));
            quad.push(a / denom);
            lin.push(b / denom);
        }
        NodeCoefficients {
            log_scale,
            quad,
            lin,
        }
    }

    pub fn prepare(&self, grid: &TimeGrid) -> PreparedFollmer {
        let m = grid.steps();
        let mut nodes = Vec::with_capacity(m + 1);
        let mut one_minus_t = Vec::with_capacity(m + 1);
        for k in 0..=m {
            let t = grid.node(k);
            nodes.push(self.coefficients_at(1.0 - t));
            one_minus_t.push(1.0 - t);
        }
        PreparedFollmer { nodes, one_minus_t }
    }
}

/// Softmax-weighted first and second log-derivatives of
/// `S(x) = sum_j exp(log_scale_j + A_j x^2/2 + B_j x)`.
///
/// Returns `(d1, d2, max_log)` with `d1 = ∂_x log S`, `d2 = ∂²_x log S`.
#[inline]
fn log_derivatives(c: &NodeCoefficients, x: f64) -> (f64, f64, f64) {
    let ncomp = c.log_scale.len();
    let mut max_log = f64::NEG_INFINITY;
    let mut logs = [0.0f64; 8];
    let mut logs_vec;
    let logs: &mut [f64] = if ncomp <= 8 {
        &mut logs[..ncomp]
    } else {
        logs_vec = vec![0.0; ncomp];
        &mut logs_vec
    };
    for j in 0..ncomp {
        let l = c.log_scale[j] + 0.5 * c.quad[j] * x * x + c.lin[j] * x;
        logs[j] = l;
        if l > max_log {
            max_log = l;
        }
    }
    let mut z = 0.0;
    let mut d1 = 0.0;
    let mut d2_part = 0.0;
    for j in 0..ncomp {
        let p = (logs[j] - max_log).exp();
        let slope = c.quad[j] * x + c.lin[j];
        z += p;
        d1 += p * slope;
        d2_part += p * (c.quad[j] + slope * slope);
    }
    d1 /= z;
    d2_part /= z;
    (d1, d2_part - d1 * d1, max_log + z.ln())
}

impl PreparedFollmer {
    /// `F(t_k, x) = 1 + (1 - t_k) ∂²_x log P_{1-t_k}h(x)`.
    #[inline]
    pub fn integrand_at(&self, k: usize, x: f64) -> f64 {
        let (_, d2, _) = log_derivatives(&self.nodes[k], x);
        1.0 + self.one_minus_t[k] * d2
    }

    /// Drift `b(t_k, x) = ∂_x log P_{1-t_k}h(x)`.
    #[inline]
    pub fn drift_at(&self, k: usize, x: f64) -> f64 {
        log_derivatives(&self.nodes[k], x).0
    }
}

/// Pointwise evaluation `(F(t, x), b(t, x))` with the overflow guard on
/// `P_{1-t}h`.
pub fn follmer_eval(mixture: &GaussianMixture1D, t: f64, x: f64) -> Result<(f64, f64)> {
    let f = FollmerIntegrand {
        mixture: mixture.clone(),
    };
    let coeffs = f.coefficients_at(1.0 - t);
    let (d1, d2, log_p) = log_derivatives(&coeffs, x);
    if log_p <= LOG_FLOOR {
        return Err(LabError::OverflowGuard(format!(
            "P_(1-t)h underflow: log value {log_p:.1} at t={t}, x={x}"
        )));
    }
    Ok((1.0 + (1.0 - t) * d2, d1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{adaptive_gk, normal_pdf};

    fn mixture_pm1() -> GaussianMixture1D {
        GaussianMixture1D::new(vec![0.5, 0.5], vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn standard_gaussian_gives_identity_integrand() {
        let m = GaussianMixture1D::single(0.0, 1.0).unwrap();
        for &(t, x) in &[(0.0, 0.0), (0.3, 1.5), (0.9, -2.0), (1.0, 0.5)] {
            let (f, b) = follmer_eval(&m, t, x).unwrap();
            assert!((f - 1.0).abs() < 1e-14, "F={f} at t={t}, x={x}");
            assert!(b.abs() < 1e-14, "drift={b}");
        }
    }

    #[test]
    fn single_component_matches_gaussian_optimal_family() {
        for &alpha in &[0.25, 0.5, 2.0, 4.0] {
            let m = GaussianMixture1D::single(0.0, alpha).unwrap();
            for &t in &[0.0, 0.25, 0.5, 0.75, 0.999, 1.0] {
                for &x in &[-3.0, 0.0, 1.7] {
                    let (f, _) = follmer_eval(&m, t, x).unwrap();
                    let expected = alpha / (1.0 - t + alpha * t);
                    assert!(
                        (f - expected).abs() < 1e-12,
                        "alpha={alpha} t={t} x={x}: {f} vs {expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn integrand_is_one_at_terminal_time() {
        let m = mixture_pm1();
        for &x in &[-2.0, 0.0, 0.4, 3.0] {
            let (f, _) = follmer_eval(&m, 1.0, x).unwrap();
            assert!((f - 1.0).abs() < 1e-12, "F(1, {x}) = {f}");
        }
    }

    #[test]
    fn mixture_value_matches_finite_difference_oracle() {
        // Golden value: second difference (step 1e-4) of log P_1 h at 0,
        // frozen from a 30-digit evaluation of the quadrature oracle:
        // 1.4999999983333333. The closed form must land on it within 1e-6.
        let m = mixture_pm1();
        let golden = 1.499_999_998_333_333_3;
        let (f, b) = follmer_eval(&m, 0.0, 0.0).unwrap();
        assert!((f - golden).abs() < 1e-6, "closed form {f} vs {golden}");
        assert!(b.abs() < 1e-12, "drift at the symmetry point: {b}");
        // In-repo independent cross-check: the same finite difference on a
        // quadrature evaluation of P_1 h. The f64 quadrature noise gets
        // amplified by 1/step^2, so the band is wider here.
        let h = |y: f64| m.pdf(y) / normal_pdf(y);
        let p1h = |x: f64| {
            adaptive_gk(|z| h(x + z) * normal_pdf(z), -14.0, 14.0, 1e-13)
                .unwrap()
                .value
        };
        let d = 1e-4;
        let fd2 = (p1h(d).ln() - 2.0 * p1h(0.0).ln() + p1h(-d).ln()) / (d * d);
        let oracle = 1.0 + fd2;
        assert!(
            (f - oracle).abs() < 1e-4,
            "closed form {f} vs quadrature oracle {oracle}"
        );
    }

    #[test]
    fn non_centered_mixture_rejected() {
        let m = GaussianMixture1D::new(vec![0.6, 0.4], vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            follmer_integrand_1d(&m),
            Err(LabError::HypothesisViolation(_))
        ));
    }

    #[test]
    fn overflow_guard_fires_far_out() {
        let m = GaussianMixture1D::single(0.0, 0.1).unwrap();
        assert!(matches!(
            follmer_eval(&m, 0.5, 1e3),
            Err(LabError::OverflowGuard(_))
        ));
    }
}
