//! Closed-form Gaussian and Gaussian-mixture quantities: relative entropy to
//! the standard Gaussian, the Bures form of the squared Wasserstein-2
//! distance, the equality-case pair `(N(0,C), N(theta, C^{-1}))`, and the
//! transport-entropy gap report.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LabError, Result};
use crate::linalg;
use crate::quad::{self, adaptive_gk};

/// Tolerance on the mean norm below which a measure counts as centered.
pub const CENTERED_TOL: f64 = 1e-9;

/// Declared accuracy of the mixture entropy quadrature.
pub const MIXTURE_KL_TOL: f64 = 1e-8;

/// A Gaussian measure `N(mean, covariance)` with SPD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianMeasure {
    /// Validates symmetry (within 1e-12), positive definiteness, and the
    /// mean/covariance dimension match.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let cov = linalg::symmetrize_checked(&covariance)?;
        if mean.len() != cov.nrows() {
            return Err(LabError::DimensionMismatch {
                expected: cov.nrows(),
                got: mean.len(),
            });
        }
        linalg::spd_eigen(&cov)?;
        Ok(Self {
            mean,
            covariance: cov,
        })
    }

    /// The standard Gaussian on `R^n`.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            covariance: DMatrix::identity(dim, dim),
        }
    }

    /// 1D Gaussian `N(mean, variance)`.
    pub fn gaussian_1d(mean: f64, variance: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, variance),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// `E ||X||^2 = ||mean||^2 + tr C`.
    pub fn second_moment(&self) -> f64 {
        self.mean.norm_squared() + self.covariance.trace()
    }

    pub fn is_centered(&self) -> bool {
        self.mean.norm() <= CENTERED_TOL
    }

    /// Variance of a 1D measure.
    pub fn variance_1d(&self) -> Result<f64> {
        if self.dim() != 1 {
            return Err(LabError::DimensionMismatch {
                expected: 1,
                got: self.dim(),
            });
        }
        Ok(self.covariance[(0, 0)])
    }

    /// Quantile function of a 1D measure.
    pub fn quantile_1d(&self, p: f64) -> Result<f64> {
        let v = self.variance_1d()?;
        Ok(self.mean[0] + v.sqrt() * quad::normal_quantile(p))
    }
}

impl Serialize for GaussianMeasure {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Doc<'a> {
            mean: &'a [f64],
            covariance: Vec<Vec<f64>>,
        }
        let rows = (0..self.covariance.nrows())
            .map(|i| self.covariance.row(i).iter().cloned().collect())
            .collect();
        Doc {
            mean: self.mean.as_slice(),
            covariance: rows,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianMeasure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Doc {
            mean: Vec<f64>,
            covariance: Vec<Vec<f64>>,
        }
        let doc = Doc::deserialize(d)?;
        let n = doc.mean.len();
        if doc.covariance.len() != n || doc.covariance.iter().any(|r| r.len() != n) {
            return Err(D::Error::custom("covariance shape does not match mean"));
        }
        let flat: Vec<f64> = doc.covariance.into_iter().flatten().collect();
        GaussianMeasure::new(
            DVector::from_vec(doc.mean),
            DMatrix::from_row_slice(n, n, &flat),
        )
        .map_err(D::Error::custom)
    }
}

/// A finite mixture of 1D Gaussians with positive variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture1D {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GaussianMixture1D {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(LabError::InvalidMeasure(
                "mixture component arrays must be nonempty and equal length".into(),
            ));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(LabError::InvalidMeasure("negative mixture weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(LabError::InvalidMeasure(format!(
                "mixture weights sum to {sum}, not 1"
            )));
        }
        if variances.iter().any(|&v| v <= 0.0) {
            return Err(LabError::InvalidMeasure(
                "mixture variances must be positive".into(),
            ));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn single(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m)
            .sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(w, (m, v))| w * (v + m * m))
            .sum()
    }

    pub fn is_centered(&self) -> bool {
        self.mean().abs() <= CENTERED_TOL
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(w, (m, v))| w * quad::normal_pdf((x - m) / v.sqrt()) / v.sqrt())
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(w, (m, v))| w * quad::normal_cdf((x - m) / v.sqrt()))
            .sum()
    }

    /// Quantile by bisection on the CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let spread = self
            .variances
            .iter()
            .cloned()
            .fold(0.0f64, f64::max)
            .sqrt();
        let lo0 = self.means.iter().cloned().fold(f64::INFINITY, f64::min) - 10.0 * spread - 40.0;
        let hi0 = self.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            + 10.0 * spread
            + 40.0;
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Radius beyond which the two-sided mixture tail mass is below 1e-12.
    pub fn tail_radius(&self) -> f64 {
        self.means
            .iter()
            .zip(&self.variances)
            .map(|(m, v)| m.abs() + 8.0 * v.sqrt())
            .fold(8.0f64, f64::max)
    }
}

/// Relative entropy `D(m || gamma)` of a Gaussian measure, closed form
/// `(||theta||^2 + tr C - n - log det C) / 2`.
pub fn kl_to_gamma(m: &GaussianMeasure) -> Result<f64> {
    let n = m.dim() as f64;
    let log_det = linalg::spd_log_det(m.covariance())?;
    let d = 0.5 * (m.mean().norm_squared() + m.covariance().trace() - n - log_det);
    // Roundoff can leave a tiny negative residue at m = gamma.
    Ok(d.max(0.0))
}

/// Relative entropy of a 1D Gaussian mixture with respect to gamma, by
/// adaptive quadrature of `p log(p / phi)` over a tail-controlled window.
pub fn kl_mixture_to_gamma(m: &GaussianMixture1D) -> Result<f64> {
    let r = m.tail_radius();
    let integrand = |x: f64| {
        let p = m.pdf(x);
        if p < 1e-300 {
            0.0
        } else {
            p * (p.ln() - quad::normal_pdf(x).ln())
        }
    };
    let q = adaptive_gk(integrand, -r, r, MIXTURE_KL_TOL * 0.1)?;
    if q.error_estimate > MIXTURE_KL_TOL {
        return Err(LabError::AccuracyFailure {
            what: "mixture entropy quadrature".into(),
            achieved: q.error_estimate,
            required: MIXTURE_KL_TOL,
        });
    }
    Ok(q.value.max(0.0))
}

/// Squared Bures–Wasserstein distance between Gaussian measures:
/// `||theta_a - theta_b||^2 + tr(C_a + C_b - 2 (C_b^{1/2} C_a C_b^{1/2})^{1/2})`.
pub fn bures_w2_squared(a: &GaussianMeasure, b: &GaussianMeasure) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(LabError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let sb = linalg::spd_sqrt(b.covariance())?;
    let inner = &sb * a.covariance() * &sb;
    let cross = linalg::spd_sqrt(&linalg::symmetrize_checked(&inner)?)?;
    let trace_term =
        a.covariance().trace() + b.covariance().trace() - 2.0 * cross.trace();
    let d = (a.mean() - b.mean()).norm_squared() + trace_term;
    Ok(d.max(0.0))
}

/// The extremal pair `(N(0, C), N(theta, C^{-1}))` of the symmetrized
/// transport-entropy inequality.
pub fn equality_pair(
    c: &DMatrix<f64>,
    theta: &DVector<f64>,
) -> Result<(GaussianMeasure, GaussianMeasure)> {
    let c = linalg::symmetrize_checked(c)?;
    if theta.len() != c.nrows() {
        return Err(LabError::DimensionMismatch {
            expected: c.nrows(),
            got: theta.len(),
        });
    }
    let c_inv = linalg::spd_inverse(&c)?;
    let mu = GaussianMeasure::new(DVector::zeros(c.nrows()), c)?;
    let nu = GaussianMeasure::new(theta.clone(), linalg::symmetrize_checked(&c_inv)?)?;
    Ok((mu, nu))
}

/// Certificate of `W_2(mu,nu)^2 <= 2 D(mu||gamma) + 2 D(nu||gamma)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TalagrandGapReport {
    pub w2_squared: f64,
    pub entropy_mu: f64,
    pub entropy_nu: f64,
    /// `2 entropy_mu + 2 entropy_nu - w2_squared`.
    pub gap: f64,
}

/// Evaluates the transport-entropy gap for a Gaussian pair. Requires `mu`
/// centered; `nu` may carry any mean (the inequality is translation
/// invariant in `nu`).
pub fn talagrand_gap(mu: &GaussianMeasure, nu: &GaussianMeasure) -> Result<TalagrandGapReport> {
    if !mu.is_centered() {
        return Err(LabError::HypothesisViolation(format!(
            "mu centered (mean norm {:.3e} > {CENTERED_TOL:.0e})",
            mu.mean().norm()
        )));
    }
    let w2_squared = bures_w2_squared(mu, nu)?;
    let entropy_mu = kl_to_gamma(mu)?;
    let entropy_nu = kl_to_gamma(nu)?;
    Ok(TalagrandGapReport {
        w2_squared,
        entropy_mu,
        entropy_nu,
        gap: 2.0 * entropy_mu + 2.0 * entropy_nu - w2_squared,
    })
}

/// Either of the two target-measure families the laboratory represents.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetMeasure {
    Gaussian(GaussianMeasure),
    Mixture(GaussianMixture1D),
}

impl TargetMeasure {
    pub fn dim(&self) -> usize {
        match self {
            TargetMeasure::Gaussian(g) => g.dim(),
            TargetMeasure::Mixture(_) => 1,
        }
    }

    pub fn kl_to_gamma(&self) -> Result<f64> {
        match self {
            TargetMeasure::Gaussian(g) => kl_to_gamma(g),
            TargetMeasure::Mixture(m) => kl_mixture_to_gamma(m),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            TargetMeasure::Gaussian(g) => g.second_moment(),
            TargetMeasure::Mixture(m) => m.second_moment(),
        }
    }

    /// 1D quantile; errors for multidimensional Gaussians.
    pub fn quantile_1d(&self, p: f64) -> Result<f64> {
        match self {
            TargetMeasure::Gaussian(g) => g.quantile_1d(p),
            TargetMeasure::Mixture(m) => Ok(m.quantile(p)),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, TargetMeasure::Gaussian(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KL_N02: f64 = 0.153_426_409_720_027_35; // (2 - 1 - ln 2) / 2

    #[test]
    fn kl_of_gamma_is_zero() {
        for n in 1..=4 {
            let g = GaussianMeasure::standard(n);
            assert_eq!(kl_to_gamma(&g).unwrap(), 0.0);
        }
    }

    #[test]
    fn kl_closed_form_matches_quadrature_oracle() {
        // Oracle: adaptive quadrature of p log(p/phi) through the
        // single-component mixture path.
        let cases = [(0.0, 2.0, KL_N02), (3.0, 1.0, 4.5)];
        for (mean, var, expected) in cases {
            let closed = kl_to_gamma(&GaussianMeasure::gaussian_1d(mean, var).unwrap()).unwrap();
            let quad = kl_mixture_to_gamma(&GaussianMixture1D::single(mean, var).unwrap()).unwrap();
            assert!((closed - expected).abs() < 1e-12, "closed {closed}");
            assert!((closed - quad).abs() < 1e-8, "quad {quad} vs closed {closed}");
        }
    }

    #[test]
    fn mixture_kl_frozen_golden() {
        // Golden computed from an independent high-precision quadrature of
        // the same integral.
        let m = GaussianMixture1D::new(vec![0.5, 0.5], vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let kl = kl_mixture_to_gamma(&m).unwrap();
        assert!(
            (kl - 0.096_501_454_213_127_72).abs() < 1e-8,
            "mixture KL {kl}"
        );
    }

    #[test]
    fn mixture_single_gamma_is_zero() {
        let m = GaussianMixture1D::single(0.0, 1.0).unwrap();
        assert!(kl_mixture_to_gamma(&m).unwrap().abs() < 1e-10);
    }

    #[test]
    fn bures_1d_cases() {
        let a = GaussianMeasure::gaussian_1d(0.0, 4.0).unwrap();
        let b = GaussianMeasure::gaussian_1d(0.0, 0.25).unwrap();
        assert!((bures_w2_squared(&a, &b).unwrap() - 2.25).abs() < 1e-12);
        assert!((bures_w2_squared(&b, &a).unwrap() - 2.25).abs() < 1e-12);
        let c = GaussianMeasure::gaussian_1d(3.0, 1.0).unwrap();
        let g = GaussianMeasure::standard(1);
        assert!((bures_w2_squared(&c, &g).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(bures_w2_squared(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn bures_dimension_mismatch() {
        let a = GaussianMeasure::standard(1);
        let b = GaussianMeasure::standard(2);
        assert!(matches!(
            bures_w2_squared(&a, &b),
            Err(LabError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn equality_pair_1d_closed_forms() {
        let c = DMatrix::from_element(1, 1, 4.0);
        let theta = DVector::zeros(1);
        let (mu, nu) = equality_pair(&c, &theta).unwrap();
        let w2 = bures_w2_squared(&mu, &nu).unwrap();
        let both = 2.0 * kl_to_gamma(&mu).unwrap() + 2.0 * kl_to_gamma(&nu).unwrap();
        assert!((w2 - 2.25).abs() < 1e-12);
        assert!((both - 2.25).abs() < 1e-12);
    }

    #[test]
    fn equality_pair_2d_gap_zero() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let theta = DVector::from_vec(vec![1.0, 0.0]);
        let (mu, nu) = equality_pair(&c, &theta).unwrap();
        let report = talagrand_gap(&mu, &nu).unwrap();
        assert!(report.gap.abs() < 1e-10, "gap = {}", report.gap);
    }

    #[test]
    fn equality_pair_rejects_singular() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(equality_pair(&c, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn gap_for_identical_non_gamma_pair() {
        let m = GaussianMeasure::gaussian_1d(0.0, 2.0).unwrap();
        let report = talagrand_gap(&m, &m).unwrap();
        let expected = 2.0 * (1.0 - std::f64::consts::LN_2);
        assert!((report.gap - expected).abs() < 1e-12);
        assert_eq!(report.w2_squared, 0.0);
    }

    #[test]
    fn gap_requires_centered_mu() {
        let mu = GaussianMeasure::gaussian_1d(0.5, 1.0).unwrap();
        let nu = GaussianMeasure::standard(1);
        match talagrand_gap(&mu, &nu) {
            Err(LabError::HypothesisViolation(msg)) => {
                assert!(msg.contains("centered"), "message: {msg}")
            }
            other => panic!("expected hypothesis violation, got {other:?}"),
        }
    }

    #[test]
    fn measure_json_round_trip() {
        let m = GaussianMeasure::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap();
        let doc = serde_json::to_string(&m).unwrap();
        assert!(doc.contains("\"mean\"") && doc.contains("\"covariance\""));
        let back: GaussianMeasure = serde_json::from_str(&doc).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn mixture_validation() {
        assert!(GaussianMixture1D::new(vec![0.5, 0.4], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixture1D::new(vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, 0.0]).is_err());
        assert!(GaussianMixture1D::new(vec![1.0], vec![0.0], vec![1.0]).is_ok());
    }

    #[test]
    fn mixture_quantile_inverts_cdf() {
        let m = GaussianMixture1D::new(vec![0.5, 0.5], vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        for &p in &[0.01, 0.25, 0.5, 0.75, 0.99] {
            let x = m.quantile(p);
            assert!((m.cdf(x) - p).abs() < 1e-10);
        }
    }
}
