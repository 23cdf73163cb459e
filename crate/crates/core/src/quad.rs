//! Numerical quadrature and normal special functions.
//!
//! The adaptive integrator is a G7/K15 Gauss–Kronrod pair with interval
//! bisection. Composite Simpson handles uniform-grid integrands where the
//! node values are all that is available.

use crate::error::{LabError, Result};

/// 15-point Kronrod abscissae on [0, 1] side of the interval (QUADPACK dqk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_813,
    0.949_107_912_342_759,
    0.864_864_423_359_769,
    0.741_531_185_599_394,
    0.586_087_235_467_691,
    0.405_845_151_377_397,
    0.207_784_955_007_898,
    0.0,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022_935_322_010_529,
    0.063_092_092_629_979,
    0.104_790_010_322_250,
    0.140_653_259_715_525,
    0.169_004_726_639_267,
    0.190_350_578_064_785,
    0.204_432_940_075_298,
    0.209_482_141_084_728,
];

/// Embedded 7-point Gauss weights (odd Kronrod abscissae).
const WG: [f64; 4] = [
    0.129_484_966_168_870,
    0.279_705_391_489_277,
    0.381_830_050_505_119,
    0.417_959_183_673_469,
];

/// Result of an adaptive quadrature: value plus an error estimate.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
}

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let (fl, fr) = if x == 0.0 {
            let v = f(mid);
            (v, 0.0)
        } else {
            (f(mid - half * x), f(mid + half * x))
        };
        let s = fl + fr;
        kronrod += wk * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    let value = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    (value, err)
}

/// Adaptive Gauss–Kronrod integration of `f` on `[a, b]` to absolute
/// tolerance `abs_tol`.
///
/// Fails with `AccuracyFailure` (carrying the achieved estimate) when the
/// interval budget is exhausted before the tolerance is met.
pub fn adaptive_gk(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> Result<QuadResult> {
    const MAX_INTERVALS: usize = 20_000;
    let total_len = (b - a).abs();
    if total_len == 0.0 {
        return Ok(QuadResult {
            value: 0.0,
            error_estimate: 0.0,
        });
    }
    // Stack of (lo, hi, value, error) intervals still above their share of
    // the tolerance budget.
    let mut stack = Vec::with_capacity(64);
    let (v0, e0) = gk15(&f, a, b);
    stack.push((a, b, v0, e0));
    let mut done_value = 0.0;
    let mut done_error = 0.0;
    let mut used = 1usize;
    while let Some((lo, hi, v, e)) = stack.pop() {
        let share = abs_tol * ((hi - lo).abs() / total_len);
        if e <= share.max(1e-300) || used >= MAX_INTERVALS {
            done_value += v;
            done_error += e;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (vl, el) = gk15(&f, lo, mid);
        let (vr, er) = gk15(&f, mid, hi);
        used += 2;
        stack.push((lo, mid, vl, el));
        stack.push((mid, hi, vr, er));
    }
    if done_error > abs_tol {
        return Err(LabError::AccuracyFailure {
            what: "adaptive quadrature".into(),
            achieved: done_error,
            required: abs_tol,
        });
    }
    Ok(QuadResult {
        value: done_value,
        error_estimate: done_error,
    })
}

/// Composite Simpson weights for `n + 1` equally spaced nodes spanning a
/// total length `len`. Odd interval counts get a 3/8 rule on the last three
/// cells.
pub fn simpson_weights(n: usize, len: f64) -> Vec<f64> {
    assert!(n >= 1, "need at least one interval");
    let h = len / n as f64;
    let mut w = vec![0.0; n + 1];
    if n == 1 {
        // Trapezoid fallback.
        w[0] = 0.5 * h;
        w[1] = 0.5 * h;
        return w;
    }
    let simpson_end = if n % 2 == 0 { n } else { n - 3 };
    if simpson_end >= 2 {
        for k in 0..=simpson_end {
            let c = if k == 0 || k == simpson_end {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w[k] += c * h / 3.0;
        }
    }
    if n % 2 == 1 {
        let c38 = [1.0, 3.0, 3.0, 1.0];
        for (i, c) in c38.iter().enumerate() {
            w[n - 3 + i] += c * 3.0 * h / 8.0;
        }
    }
    w
}

/// Integrates tabulated values on a uniform grid with composite Simpson.
pub fn simpson_uniform(values: &[f64], len: f64) -> f64 {
    let n = values.len() - 1;
    let w = simpson_weights(n, len);
    values.iter().zip(w.iter()).map(|(v, wi)| v * wi).sum()
}

/// Trapezoid prefix integrals on a uniform grid: returns `p` with
/// `p[k] = ∫_0^{t_k} v`, so `p[0] = 0` and `p[n]` is the full integral.
pub fn trapezoid_prefix(values: &[f64], len: f64) -> Vec<f64> {
    let n = values.len() - 1;
    let h = len / n as f64;
    let mut p = vec![0.0; values.len()];
    for k in 0..n {
        p[k + 1] = p[k] + 0.5 * h * (values[k] + values[k + 1]);
    }
    p
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: library inverse polished by two Newton steps,
/// which brings the residual down to machine precision.
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let mut x = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    for _ in 0..2 {
        let density = normal_pdf(x);
        if density <= 1e-300 {
            break;
        }
        x -= (normal_cdf(x) - p) / density;
    }
    x
}

/// Neumaier compensated summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_integrates_gaussian_mass() {
        let r = adaptive_gk(normal_pdf, -9.0, 9.0, 1e-12).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12, "mass = {}", r.value);
    }

    #[test]
    fn gk_handles_kinks() {
        let r = adaptive_gk(|x: f64| x.abs(), -1.0, 2.0, 1e-12).unwrap();
        assert!((r.value - 2.5).abs() < 1e-12);
    }

    #[test]
    fn simpson_exact_on_cubics() {
        for n in [2usize, 4, 7, 11, 100] {
            let vals: Vec<f64> = (0..=n)
                .map(|k| {
                    let t = k as f64 / n as f64;
                    t * t * t - 2.0 * t + 1.0
                })
                .collect();
            let got = simpson_uniform(&vals, 1.0);
            assert!((got - 0.25).abs() < 1e-13, "n={n} got={got}");
        }
    }

    #[test]
    fn prefix_matches_total() {
        let vals: Vec<f64> = (0..=64).map(|k| (k as f64 / 64.0).sin()).collect();
        let p = trapezoid_prefix(&vals, 1.0);
        assert!((p[64] - (1.0 - 1.0f64.cos())).abs() < 1e-4);
        assert_eq!(p[0], 0.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-6, 0.1, 0.5, 0.9, 1.0 - 1e-6] {
            let x = normal_quantile(p);
            assert!((normal_cdf(x) - p).abs() < 1e-12);
        }
    }
}
