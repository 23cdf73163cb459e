//! Independent Wasserstein-2 oracles: the exact 1D quantile coupling, an
//! exact network-flow solver for small discrete instances, and a log-domain
//! Sinkhorn approximation with epsilon scaling.

pub mod exact;
pub mod sinkhorn;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::quad::{adaptive_gk, normal_cdf, normal_pdf, QuadResult};

pub use exact::{w2_squared_bruteforce, w2_squared_exact, EXACT_SIZE_CAP};
pub use sinkhorn::{sinkhorn_w2_squared, SinkhornReport};

/// A weighted point cloud in `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    /// `k x dim`, point-major.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub dim: usize,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<f64>, weights: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || weights.is_empty() || points.len() != weights.len() * dim {
            return Err(LabError::InvalidMeasure(
                "discrete measure shape mismatch".into(),
            ));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(LabError::InvalidMeasure("negative weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(LabError::InvalidMeasure(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        Ok(Self {
            points,
            weights,
            dim,
        })
    }

    /// Uniform weights over 1D sample points.
    pub fn from_samples_1d(samples: &[f64]) -> Result<Self> {
        let k = samples.len();
        if k == 0 {
            return Err(LabError::InvalidMeasure("empty sample set".into()));
        }
        // Distribute the roundoff so the weights sum to 1 exactly.
        let w = 1.0 / k as f64;
        let mut weights = vec![w; k];
        let correction = 1.0 - w * k as f64;
        weights[0] += correction;
        Self::new(samples.to_vec(), weights, 1)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// CSV rows `weight, x_1..x_n`.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "# talagrand-lab v1")?;
        let coords: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "weight,{}", coords.join(","))?;
        for i in 0..self.len() {
            let pt: Vec<String> = self
                .point(i)
                .iter()
                .map(|x| crate::wiener::io::fmt12(*x))
                .collect();
            writeln!(
                w,
                "{},{}",
                crate::wiener::io::fmt12(self.weights[i]),
                pt.join(",")
            )?;
        }
        Ok(())
    }
}

/// Exact squared W2 between 1D discrete measures by merging the two CDFs
/// (northwest-corner on the sorted supports).
pub fn w2_squared_1d(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    if a.dim != 1 || b.dim != 1 {
        return Err(LabError::DimensionMismatch {
            expected: 1,
            got: a.dim.max(b.dim),
        });
    }
    let sorted = |m: &DiscreteMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&i, &j| m.points[i].partial_cmp(&m.points[j]).unwrap());
        idx.into_iter()
            .map(|i| (m.points[i], m.weights[i]))
            .collect::<Vec<_>>()
    };
    let sa = sorted(a);
    let sb = sorted(b);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (sa[0].1, sb[0].1);
    let mut cost = 0.0;
    loop {
        let take = ra.min(rb);
        let d = sa[i].0 - sb[j].0;
        cost += take * d * d;
        ra -= take;
        rb -= take;
        if ra <= 1e-15 {
            i += 1;
            if i >= sa.len() {
                break;
            }
            ra = sa[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j >= sb.len() {
                break;
            }
            rb = sb[j].1;
        }
    }
    Ok(cost)
}

/// Squared W2 between continuous 1D laws given their quantile functions:
/// `∫_0^1 (Q_a - Q_b)^2 dp` through the substitution `p = Phi(z)`, which
/// turns the endpoint-singular integrand into a smooth one, integrated
/// adaptively until the error estimate is below `tol`.
pub fn w2_squared_1d_quantile(
    qa: impl Fn(f64) -> f64,
    qb: impl Fn(f64) -> f64,
    tol: f64,
) -> Result<QuadResult> {
    let f = |z: f64| {
        let p = normal_cdf(z);
        let d = qa(p) - qb(p);
        d * d * normal_pdf(z)
    };
    adaptive_gk(f, -8.5, 8.5, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::normal_quantile;

    #[test]
    fn point_masses() {
        let a = DiscreteMeasure::from_samples_1d(&[0.0]).unwrap();
        let b = DiscreteMeasure::from_samples_1d(&[2.0]).unwrap();
        assert_eq!(w2_squared_1d(&a, &b).unwrap(), 4.0);
        assert_eq!(w2_squared_1d(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn sorted_uniform_matches_formula() {
        let a = DiscreteMeasure::from_samples_1d(&[3.0, 1.0, 2.0]).unwrap();
        let b = DiscreteMeasure::from_samples_1d(&[0.0, 1.5, 4.0]).unwrap();
        // Sorted pairs: (1,0), (2,1.5), (3,4) -> (1 + 0.25 + 1)/3.
        let expected = (1.0 + 0.25 + 1.0) / 3.0;
        assert!((w2_squared_1d(&a, &b).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn unequal_weights_merge() {
        let a = DiscreteMeasure::new(vec![0.0, 1.0], vec![0.75, 0.25], 1).unwrap();
        let b = DiscreteMeasure::new(vec![0.0, 1.0], vec![0.25, 0.75], 1).unwrap();
        // Move 0.5 mass across distance 1.
        assert!((w2_squared_1d(&a, &b).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn quantile_oracle_matches_bures_gap() {
        // N(0,4) vs N(0,1/4): (2 - 1/2)^2 = 2.25.
        let qa = |p: f64| 2.0 * normal_quantile(p);
        let qb = |p: f64| 0.5 * normal_quantile(p);
        let r = w2_squared_1d_quantile(qa, qb, 1e-10).unwrap();
        assert!((r.value - 2.25).abs() < 1e-8, "value {}", r.value);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(DiscreteMeasure::new(vec![0.0], vec![0.9], 1).is_err());
        assert!(DiscreteMeasure::new(vec![0.0, 1.0], vec![1.2, -0.2], 1).is_err());
    }
}
