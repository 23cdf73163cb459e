//! Numerical verification of the functional Blaschke–Santaló inequality
//! `(∫ e^{-f})(∫ e^{-g}) <= 2π` in 1D, plus the weak-duality bridge from the
//! transport-entropy inequality.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::ot::{self, DiscreteMeasure};
use crate::quad::{normal_pdf, simpson_uniform};

const TWO_PI: f64 = std::f64::consts::TAU;

/// Tolerated violation of the product bound (relative to `2π`).
pub const PRODUCT_TOL: f64 = 1e-6;

/// Tolerance on the discrete convexity check.
pub const CONVEXITY_TOL: f64 = 1e-9;

/// Absolute centering tolerance on `∫ x e^{-f} dx`.
pub const CENTERING_TOL: f64 = 1e-8;

/// Tolerance demanded of a numerical dual before taking products.
pub const GAP_PRECONDITION: f64 = 1e-6;

/// A sampled function on an increasing 1D grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction1D {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub convex: bool,
}

impl GridFunction1D {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>, convex: bool) -> Result<Self> {
        if nodes.len() < 3 || nodes.len() != values.len() {
            return Err(LabError::InvalidParameter(
                "grid function needs >= 3 matched nodes".into(),
            ));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::InvalidParameter(
                "grid nodes must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidParameter(
                "grid values must be finite".into(),
            ));
        }
        let out = Self {
            nodes,
            values,
            convex,
        };
        if convex {
            let worst = out.min_second_difference();
            if worst < -CONVEXITY_TOL {
                return Err(LabError::InvalidParameter(format!(
                    "flagged convex but second difference {worst:.3e} < -{CONVEXITY_TOL:.0e}"
                )));
            }
        }
        Ok(out)
    }

    /// Samples `f` uniformly on `[-r, r]`.
    pub fn from_fn(f: impl Fn(f64) -> f64, r: f64, num_nodes: usize, convex: bool) -> Result<Self> {
        if num_nodes < 3 || r <= 0.0 {
            return Err(LabError::InvalidParameter(
                "need r > 0 and at least 3 nodes".into(),
            ));
        }
        let h = 2.0 * r / (num_nodes - 1) as f64;
        let nodes: Vec<f64> = (0..num_nodes).map(|k| -r + k as f64 * h).collect();
        let values: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
        Self::new(nodes, values, convex)
    }

    fn min_second_difference(&self) -> f64 {
        let mut worst = f64::INFINITY;
        for k in 1..self.nodes.len() - 1 {
            let h1 = self.nodes[k] - self.nodes[k - 1];
            let h2 = self.nodes[k + 1] - self.nodes[k];
            let d = (self.values[k + 1] - self.values[k]) / h2
                - (self.values[k] - self.values[k - 1]) / h1;
            worst = worst.min(d);
        }
        worst
    }

    fn uniform_spacing(&self) -> Result<f64> {
        let h = self.nodes[1] - self.nodes[0];
        for w in self.nodes.windows(2) {
            if ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1e-12) {
                return Err(LabError::InvalidParameter(
                    "quadrature needs a uniform grid".into(),
                ));
            }
        }
        Ok(h)
    }

    fn len_interval(&self) -> f64 {
        self.nodes[self.nodes.len() - 1] - self.nodes[0]
    }

    /// `∫ x^p e^{-f(x)} dx` by composite Simpson on the grid.
    fn weighted_moment(&self, p: u32) -> Result<f64> {
        self.uniform_spacing()?;
        let vals: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.values)
            .map(|(x, v)| x.powi(p as i32) * (-v).exp())
            .collect();
        Ok(simpson_uniform(&vals, self.len_interval()))
    }

    /// Two-column CSV `x, value`.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "# talagrand-lab v1")?;
        writeln!(w, "x,value")?;
        for (x, v) in self.nodes.iter().zip(&self.values) {
            writeln!(
                w,
                "{},{}",
                crate::wiener::io::fmt12(*x),
                crate::wiener::io::fmt12(*v)
            )?;
        }
        Ok(())
    }
}

/// Discrete Legendre transform `g(y) = max_k (x_k y - f(x_k))` on an
/// explicit output grid.
pub fn legendre_dual_on(f: &GridFunction1D, y_nodes: Vec<f64>) -> Result<GridFunction1D> {
    if y_nodes.len() < 3 {
        return Err(LabError::InvalidParameter(
            "dual grid needs at least 3 nodes".into(),
        ));
    }
    let values: Vec<f64> = y_nodes
        .iter()
        .map(|&y| {
            f.nodes
                .iter()
                .zip(&f.values)
                .map(|(&x, &v)| x * y - v)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    // A max of affine functions of y is convex regardless of f.
    GridFunction1D::new(y_nodes, values, true)
}

/// Discrete Legendre transform on the default output grid: the attained
/// slope range of `f`, sampled with the same node count.
pub fn legendre_dual(f: &GridFunction1D) -> Result<GridFunction1D> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for w in f.nodes.windows(2).zip(f.values.windows(2)) {
        let slope = (w.1[1] - w.1[0]) / (w.0[1] - w.0[0]);
        lo = lo.min(slope);
        hi = hi.max(slope);
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(LabError::InvalidParameter(
            "cannot infer a slope range for the dual grid".into(),
        ));
    }
    let n = f.nodes.len();
    let h = (hi - lo) / (n - 1) as f64;
    let y_nodes: Vec<f64> = (0..n).map(|k| lo + k as f64 * h).collect();
    legendre_dual_on(f, y_nodes)
}

/// Minimum of `f(x) + g(y) - x y` over the product grid; nonnegative
/// whenever `g` dominates the dual of `f`.
pub fn duality_gap_check(f: &GridFunction1D, g: &GridFunction1D) -> f64 {
    let mut min = f64::INFINITY;
    for (&x, &fv) in f.nodes.iter().zip(&f.values) {
        for (&y, &gv) in g.nodes.iter().zip(&g.values) {
            let v = fv + gv - x * y;
            if v < min {
                min = v;
            }
        }
    }
    min
}

/// Outcome of the product bound `Z_f Z_g <= 2π`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SantaloReport {
    pub z_f: f64,
    pub z_g: f64,
    pub product: f64,
    /// The 1D bound `2π`.
    pub bound: f64,
    pub centered_ok: bool,
    pub centering_moment: f64,
    /// Product within `1e-6` of the bound.
    pub equality: bool,
    /// `product <= bound (1 + 1e-6)`.
    pub satisfied: bool,
}

/// Quadrature of both partition functions and the product bound. Errors on
/// a centering violation (a hypothesis failure, not an inequality failure)
/// and on duals that do not dominate the bilinear pairing.
pub fn santalo_product(f: &GridFunction1D, g: &GridFunction1D) -> Result<SantaloReport> {
    let gap = duality_gap_check(f, g);
    if gap < -GAP_PRECONDITION {
        return Err(LabError::HypothesisViolation(format!(
            "f(x) + g(y) >= xy fails by {gap:.3e}"
        )));
    }
    let centering_moment = f.weighted_moment(1)?;
    if centering_moment.abs() > CENTERING_TOL {
        return Err(LabError::HypothesisViolation(format!(
            "centering moment {centering_moment:.3e} exceeds {CENTERING_TOL:.0e}"
        )));
    }
    let z_f = f.weighted_moment(0)?;
    let z_g = g.weighted_moment(0)?;
    let product = z_f * z_g;
    Ok(SantaloReport {
        z_f,
        z_g,
        product,
        bound: TWO_PI,
        centered_ok: true,
        centering_moment,
        equality: (product - TWO_PI).abs() <= PRODUCT_TOL * TWO_PI,
        satisfied: product <= TWO_PI * (1.0 + PRODUCT_TOL),
    })
}

/// All intermediate terms of the weak-duality chain from the
/// transport-entropy inequality to the product bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BridgeReport {
    pub w2_squared: f64,
    pub d_mu: f64,
    pub d_nu: f64,
    /// `2 d_mu + 2 d_nu - w2_squared >= 0`.
    pub transport_gap: f64,
    /// Optimal-coupling cross term `sup_pi E<x, y>`.
    pub cross_term: f64,
    /// `∫ f dmu + ∫ g dnu`, which dominates the cross term pointwise.
    pub dual_pairing: f64,
    /// `dual_pairing - cross_term >= 0`.
    pub duality_slack: f64,
    pub log_product: f64,
    /// `log 2π - log(Z_f Z_g) = transport_gap / 2 + duality_slack`.
    pub santalo_margin: f64,
    /// Residual of the algebraic identity above (floating point only).
    pub identity_residual: f64,
    pub second_moment_mu: f64,
    pub second_moment_nu: f64,
}

impl BridgeReport {
    pub fn slacks_ok(&self, tol: f64) -> bool {
        self.transport_gap >= -tol
            && self.duality_slack >= -tol
            && self.santalo_margin >= -tol
            && self.identity_residual.abs() <= tol
    }
}

/// Builds `mu ∝ e^{-f}`, `nu ∝ e^{-g}` with `g` the numerical dual, costs
/// their optimal transport and entropies, and reports the full inequality
/// chain down to `log(Z_f Z_g) <= log 2π`.
pub fn duality_bridge(f: &GridFunction1D) -> Result<BridgeReport> {
    let g = legendre_dual(f)?;
    let gap = duality_gap_check(f, &g);
    if gap < -GAP_PRECONDITION {
        return Err(LabError::HypothesisViolation(format!(
            "numerical dual violates the pairing by {gap:.3e}"
        )));
    }
    let centering = f.weighted_moment(1)?;
    if centering.abs() > CENTERING_TOL {
        return Err(LabError::HypothesisViolation(format!(
            "centering moment {centering:.3e} exceeds {CENTERING_TOL:.0e}"
        )));
    }
    let z_f = f.weighted_moment(0)?;
    let z_g = g.weighted_moment(0)?;
    let mu = grid_measure(f, z_f)?;
    let nu = grid_measure(&g, z_g)?;
    let w2_squared = ot::w2_squared_1d(&mu, &nu)?;
    // Entropies from the same discrete weights as every other term, so the
    // closing identity holds to floating point rather than to quadrature
    // consistency.
    let d_mu = grid_relative_entropy(f, z_f, &mu)?;
    let d_nu = grid_relative_entropy(&g, z_g, &nu)?;
    let transport_gap = 2.0 * d_mu + 2.0 * d_nu - w2_squared;
    let second_moment_mu = moment2(&mu);
    let second_moment_nu = moment2(&nu);
    let cross_term = 0.5 * (second_moment_mu + second_moment_nu - w2_squared);
    let dual_pairing = pairing(f, &mu) + pairing(&g, &nu);
    let duality_slack = dual_pairing - cross_term;
    let log_product = (z_f * z_g).ln();
    let santalo_margin = TWO_PI.ln() - log_product;
    let identity_residual = santalo_margin - 0.5 * transport_gap - duality_slack;
    Ok(BridgeReport {
        w2_squared,
        d_mu,
        d_nu,
        transport_gap,
        cross_term,
        dual_pairing,
        duality_slack,
        log_product,
        santalo_margin,
        identity_residual,
        second_moment_mu,
        second_moment_nu,
    })
}

/// Discretizes `e^{-f}/Z` into a weighted point cloud on the grid nodes
/// with Simpson cell weights.
fn grid_measure(f: &GridFunction1D, z: f64) -> Result<DiscreteMeasure> {
    let h = f.uniform_spacing()?;
    let n = f.nodes.len() - 1;
    let w = crate::quad::simpson_weights(n, h * n as f64);
    let mut weights: Vec<f64> = f
        .values
        .iter()
        .zip(&w)
        .map(|(v, wk)| wk * (-v).exp() / z)
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|x| *x /= total);
    DiscreteMeasure::new(f.nodes.clone(), weights, 1)
}

/// `D(mu || gamma)` for `mu ∝ e^{-f}`, evaluated as the expectation of
/// `log(p / phi)` under the discrete weights of `mu` itself.
fn grid_relative_entropy(f: &GridFunction1D, z: f64, mu: &DiscreteMeasure) -> Result<f64> {
    f.uniform_spacing()?;
    let d = f
        .nodes
        .iter()
        .zip(f.values.iter().zip(&mu.weights))
        .map(|(&x, (&v, &w))| {
            let log_p = -v - z.ln();
            w * (log_p - normal_pdf(x).ln())
        })
        .sum();
    Ok(d)
}

/// `∫ f dmu` over the grid measure.
fn pairing(f: &GridFunction1D, mu: &DiscreteMeasure) -> f64 {
    f.values
        .iter()
        .zip(&mu.weights)
        .map(|(v, w)| v * w)
        .sum()
}

fn moment2(m: &DiscreteMeasure) -> f64 {
    m.points
        .iter()
        .zip(&m.weights)
        .map(|(x, w)| w * x * x)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(r: f64, n: usize) -> GridFunction1D {
        GridFunction1D::from_fn(|x| 0.5 * x * x, r, n, true).unwrap()
    }

    #[test]
    fn dual_of_half_square_is_itself() {
        let f = quadratic(4.0, 4097);
        let g = legendre_dual(&f).unwrap();
        for (&y, &gv) in g.nodes.iter().zip(&g.values) {
            assert!(
                (gv - 0.5 * y * y).abs() < 1e-6,
                "g({y}) = {gv} vs {}",
                0.5 * y * y
            );
        }
    }

    #[test]
    fn dual_of_quartic_matches_power_law() {
        let f = GridFunction1D::from_fn(|x| 0.25 * x.powi(4), 4.0, 4097, true).unwrap();
        let g = legendre_dual(&f).unwrap();
        for (&y, &gv) in g.nodes.iter().zip(&g.values) {
            if y.abs() <= 4.0 {
                let expected = 0.75 * y.abs().powf(4.0 / 3.0);
                assert!(
                    (gv - expected).abs() < 1e-4,
                    "g({y}) = {gv} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn dual_of_scaled_quadratic() {
        // f = x^2/(2 alpha) -> f* = alpha y^2 / 2.
        let alpha = 2.0;
        let f = GridFunction1D::from_fn(|x| x * x / (2.0 * alpha), 12.0, 8193, true).unwrap();
        let g = legendre_dual(&f).unwrap();
        for (&y, &gv) in g.nodes.iter().zip(&g.values) {
            assert!(
                (gv - 0.5 * alpha * y * y).abs() < 1e-5,
                "g({y}) = {gv}"
            );
        }
    }

    #[test]
    fn involution_within_grid_resolution() {
        let f = quadratic(4.0, 4097);
        let g = legendre_dual(&f).unwrap();
        let ff = legendre_dual(&g).unwrap();
        for (&x, &v) in ff.nodes.iter().zip(&ff.values) {
            if x.abs() <= 3.5 {
                assert!((v - 0.5 * x * x).abs() < 1e-5, "f**({x}) = {v}");
            }
        }
    }

    #[test]
    fn duality_gap_examples() {
        let f = quadratic(4.0, 1025);
        let g = quadratic(4.0, 1025);
        let gap = duality_gap_check(&f, &g);
        assert!(gap.abs() < 1e-9, "self-dual gap {gap}");
        let shifted =
            GridFunction1D::new(g.nodes.clone(), g.values.iter().map(|v| v + 1.0).collect(), true)
                .unwrap();
        let gap1 = duality_gap_check(&f, &shifted);
        assert!((gap1 - 1.0).abs() < 1e-9, "shifted gap {gap1}");
    }

    #[test]
    fn quadratic_product_attains_bound() {
        let f = quadratic(8.5, 16385);
        let g = legendre_dual(&f).unwrap();
        let r = santalo_product(&f, &g).unwrap();
        assert!(r.satisfied, "product {} bound {}", r.product, r.bound);
        assert!(r.equality, "product {} should sit at 2 pi", r.product);
        assert!((r.product - TWO_PI).abs() < 1e-6 * TWO_PI);
    }

    #[test]
    fn centering_violation_is_hypothesis_error() {
        let f = GridFunction1D::from_fn(|x| 0.5 * (x - 1.0) * (x - 1.0), 9.0, 4097, true).unwrap();
        let g = legendre_dual(&f).unwrap();
        match santalo_product(&f, &g) {
            Err(LabError::HypothesisViolation(msg)) => {
                assert!(msg.contains("centering"), "{msg}")
            }
            other => panic!("expected hypothesis violation, got {other:?}"),
        }
    }

    #[test]
    fn scaling_law_leaves_product_invariant() {
        let lambda = 1.7;
        let base = quadratic(8.5, 16385);
        let scaled =
            GridFunction1D::from_fn(|x| 0.5 * (lambda * x) * (lambda * x), 8.5 / lambda, 16385, true)
                .unwrap();
        let gb = legendre_dual(&base).unwrap();
        let gs = legendre_dual(&scaled).unwrap();
        let rb = santalo_product(&base, &gb).unwrap();
        let rs = santalo_product(&scaled, &gs).unwrap();
        assert!(
            (rs.z_f - rb.z_f / lambda).abs() < 1e-8 * rb.z_f,
            "Z_f scaling: {} vs {}",
            rs.z_f,
            rb.z_f / lambda
        );
        assert!(
            (rs.z_g - rb.z_g * lambda).abs() < 1e-8 * rb.z_g * lambda,
            "Z_g scaling: {} vs {}",
            rs.z_g,
            rb.z_g * lambda
        );
        assert!((rs.product - rb.product).abs() < 1e-8 * rb.product);
    }

    #[test]
    fn bridge_is_tight_for_the_gaussian_case() {
        let f = quadratic(8.5, 8193);
        let r = duality_bridge(&f).unwrap();
        assert!(r.transport_gap.abs() < 1e-4, "gap {}", r.transport_gap);
        assert!(r.duality_slack.abs() < 1e-4, "slack {}", r.duality_slack);
        assert!(r.santalo_margin.abs() < 1e-4, "margin {}", r.santalo_margin);
        assert!(r.identity_residual.abs() < 1e-9);
        assert!(r.slacks_ok(1e-4));
    }

    #[test]
    fn bridge_alpha_two_equality_family() {
        // f = x^2/4: mu = N(0, 2), dual nu = N(0, 1/2); the pair is
        // extremal so the transport gap vanishes while both sides stay
        // individually nonzero.
        let f = GridFunction1D::from_fn(|x| 0.25 * x * x, 12.0, 8193, true).unwrap();
        let r = duality_bridge(&f).unwrap();
        assert!(r.transport_gap.abs() < 1e-3, "gap {}", r.transport_gap);
        assert!(r.santalo_margin.abs() < 1e-3, "margin {}", r.santalo_margin);
        assert!(r.w2_squared > 0.4, "w2 {}", r.w2_squared);
        assert!(r.slacks_ok(1e-3));
    }

    #[test]
    fn bridge_quartic_strict_slack() {
        let f = GridFunction1D::from_fn(|x| 0.25 * x.powi(4), 4.5, 8193, true).unwrap();
        let r = duality_bridge(&f).unwrap();
        assert!(r.transport_gap > 0.05, "gap {}", r.transport_gap);
        assert!(r.santalo_margin > 0.05, "margin {}", r.santalo_margin);
        assert!(r.slacks_ok(1e-4));
    }
}
