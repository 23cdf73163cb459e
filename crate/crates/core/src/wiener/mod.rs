//! Discretized Wiener space: uniform time grids, lazily generated Brownian
//! path ensembles, time reversal as an index transform, left-endpoint Itô
//! integration, and filtration-snapshot partial sums.
//!
//! Paths are never stored wholesale. Every increment is recomputed on demand
//! from the counter-based generator in [`rng`], so a reversed ensemble is
//! driven by exactly the same randomness as its forward twin, and reductions
//! over 1e5-path ensembles cost no memory. Reductions run over fixed-size
//! path chunks merged in chunk order, which makes every statistic
//! independent of the degree of parallelism.

pub mod io;
pub mod rng;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::representation::{Integrand, PreparedIntegrand, StateRule};

/// Paths per reduction chunk. Fixed so that floating-point reduction order
/// depends only on the ensemble, never on the thread count.
const CHUNK: usize = 1024;

/// Uniform grid `t_k = k / steps` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    steps: usize,
}

impl TimeGrid {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(LabError::InvalidParameter("grid needs steps >= 1".into()));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 / self.steps as f64
    }

    /// Maps `t` to its node index; errors when `t` is not a grid node.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let scaled = t * self.steps as f64;
        let k = scaled.round();
        if (scaled - k).abs() > 1e-9 || !(0.0..=self.steps as f64).contains(&k) {
            return Err(LabError::OffGridTime(t));
        }
        Ok(k as usize)
    }
}

/// Orientation of an ensemble relative to its generating randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reversed,
}

/// A batch of Brownian paths on a shared grid, addressed by
/// `(seed, path, step, coord)` and materialized only on demand.
///
/// Node values of the reversed ensemble satisfy
/// `B̂_{t_k} = B_1 - B_{1-t_k}`, equivalently its increment sequence is the
/// forward increment sequence in reversed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    dimension: usize,
    num_paths: usize,
    seed: u64,
    direction: Direction,
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Flips the direction flag; the same randomness drives both ensembles.
    pub fn reversed(&self) -> Self {
        Self {
            direction: match self.direction {
                Direction::Forward => Direction::Reversed,
                Direction::Reversed => Direction::Forward,
            },
            ..self.clone()
        }
    }

    /// Directed increments of one path into `out` (length `steps * dim`,
    /// step-major).
    pub fn increments_into(&self, path: usize, out: &mut [f64]) {
        let m = self.grid.steps();
        let d = self.dimension;
        debug_assert_eq!(out.len(), m * d);
        let scale = self.grid.dt().sqrt();
        for k in 0..m {
            let src_step = match self.direction {
                Direction::Forward => k,
                Direction::Reversed => m - 1 - k,
            } as u64;
            for c in 0..d {
                out[k * d + c] =
                    scale * rng::standard_normal(self.seed, path as u64, src_step, c as u64);
            }
        }
    }

    /// Node values of one path into `out` (length `(steps + 1) * dim`).
    pub fn nodes_into(&self, path: usize, out: &mut [f64], incr_scratch: &mut [f64]) {
        let m = self.grid.steps();
        let d = self.dimension;
        debug_assert_eq!(out.len(), (m + 1) * d);
        self.increments_into(path, incr_scratch);
        for c in 0..d {
            out[c] = 0.0;
        }
        for k in 0..m {
            for c in 0..d {
                out[(k + 1) * d + c] = out[k * d + c] + incr_scratch[k * d + c];
            }
        }
    }

    /// Full `num_paths x (steps + 1) x dim` array of node values.
    pub fn materialize(&self) -> Vec<f64> {
        let per_path = (self.grid.steps() + 1) * self.dimension;
        let mut out = vec![0.0; self.num_paths * per_path];
        map_paths_into(self, &mut out, per_path, |_, cursor, dst| {
            dst.copy_from_slice(&cursor.nodes);
        });
        out
    }
}

/// Draws an ensemble of standard Brownian paths.
pub fn sample_paths(
    grid: TimeGrid,
    dimension: usize,
    num_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if dimension == 0 {
        return Err(LabError::InvalidParameter("dimension must be >= 1".into()));
    }
    if num_paths == 0 {
        return Err(LabError::InvalidParameter("need at least one path".into()));
    }
    Ok(PathEnsemble {
        grid,
        dimension,
        num_paths,
        seed,
        direction: Direction::Forward,
    })
}

/// Time reversal `B̂_t = B_1 - B_{1-t}`.
pub fn reverse(e: &PathEnsemble) -> PathEnsemble {
    e.reversed()
}

/// Per-path scratch: directed increments and node values.
pub struct PathCursor {
    dim: usize,
    pub incr: Vec<f64>,
    pub nodes: Vec<f64>,
}

impl PathCursor {
    pub fn new(e: &PathEnsemble) -> Self {
        Self {
            dim: e.dimension(),
            incr: vec![0.0; e.grid().steps() * e.dimension()],
            nodes: vec![0.0; (e.grid().steps() + 1) * e.dimension()],
        }
    }

    pub fn load(&mut self, e: &PathEnsemble, path: usize) {
        e.increments_into(path, &mut self.incr);
        let d = self.dim;
        for c in 0..d {
            self.nodes[c] = 0.0;
        }
        for k in 0..self.incr.len() / d {
            for c in 0..d {
                self.nodes[(k + 1) * d + c] = self.nodes[k * d + c] + self.incr[k * d + c];
            }
        }
    }

    #[inline]
    pub fn incr(&self, k: usize) -> &[f64] {
        &self.incr[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }
}

/// Deterministic chunked fold over all paths: `fold` accumulates paths into
/// a chunk-local state, chunk states merge in chunk order.
pub fn reduce_paths<S, F, M>(e: &PathEnsemble, make: impl Fn() -> S + Sync, fold: F, merge: M) -> S
where
    S: Send,
    F: Fn(&mut S, usize, &PathCursor) + Sync,
    M: Fn(&mut S, S),
{
    reduce_paths_with(e, CHUNK, make, fold, merge)
}

/// [`reduce_paths`] with an explicit chunk size, for folds whose chunk state
/// is large (per-node gram matrices). The chunk layout depends only on the
/// ensemble and `chunk`, never on the thread count.
pub fn reduce_paths_with<S, F, M>(
    e: &PathEnsemble,
    chunk: usize,
    make: impl Fn() -> S + Sync,
    fold: F,
    merge: M,
) -> S
where
    S: Send,
    F: Fn(&mut S, usize, &PathCursor) + Sync,
    M: Fn(&mut S, S),
{
    let n = e.num_paths();
    let chunk = chunk.max(1);
    let chunks = n.div_ceil(chunk);
    let partials: Vec<S> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut state = make();
            let mut cursor = PathCursor::new(e);
            let lo = ci * chunk;
            let hi = ((ci + 1) * chunk).min(n);
            for p in lo..hi {
                cursor.load(e, p);
                fold(&mut state, p, &cursor);
            }
            state
        })
        .collect();
    let mut acc = make();
    for s in partials {
        merge(&mut acc, s);
    }
    acc
}

/// Writes one fixed-size record per path into `out`, in path order.
pub fn map_paths_into<F>(e: &PathEnsemble, out: &mut [f64], per_path: usize, f: F)
where
    F: Fn(usize, &PathCursor, &mut [f64]) + Sync,
{
    let n = e.num_paths();
    assert_eq!(out.len(), n * per_path);
    out.par_chunks_mut(CHUNK * per_path)
        .enumerate()
        .for_each(|(ci, block)| {
            let mut cursor = PathCursor::new(e);
            let lo = ci * CHUNK;
            for (j, dst) in block.chunks_mut(per_path).enumerate() {
                let p = lo + j;
                cursor.load(e, p);
                f(p, &cursor, dst);
            }
        });
}

/// One n-vector per path, tagged with where it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleVector {
    pub dim: usize,
    pub values: Vec<f64>,
    pub provenance: String,
}

impl SampleVector {
    pub fn num_samples(&self) -> usize {
        self.values.len() / self.dim
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Mean squared Euclidean norm over the samples, with standard error.
pub fn second_moment(v: &SampleVector) -> MomentEstimate {
    let n = v.num_samples();
    assert!(n > 0, "empty sample vector");
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..n {
        let z: f64 = v.sample(i).iter().map(|x| x * x).sum();
        sum += z;
        sum_sq += z * z;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0);
    MomentEstimate {
        value: mean,
        std_error: (var / nf).sqrt(),
    }
}

/// Sample covariance matrix of the samples (about the sample mean).
pub fn sample_covariance(v: &SampleVector) -> nalgebra::DMatrix<f64> {
    let n = v.num_samples();
    let d = v.dim;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (c, x) in v.sample(i).iter().enumerate() {
            mean[c] += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = nalgebra::DMatrix::zeros(d, d);
    for i in 0..n {
        let s = v.sample(i);
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (s[a] - mean[a]) * (s[b] - mean[b]);
            }
        }
    }
    cov / (n as f64 - 1.0)
}

/// Left-endpoint Itô sum of `f` against the ensemble, up to node `upto`.
///
/// Deterministic integrands are applied as matrices; the Föllmer kind
/// evolves its Euler–Maruyama state `x += dB + b(t, x) dt` alongside the
/// sum; tabulated estimates are evaluated at the current node value.
pub fn ito_prefix(f: &Integrand, e: &PathEnsemble, upto: usize) -> Result<SampleVector> {
    let prepared = f.prepare(e.grid())?;
    let d = prepared.dim();
    if d != e.dimension() {
        return Err(LabError::DimensionMismatch {
            expected: d,
            got: e.dimension(),
        });
    }
    if upto > e.grid().steps() {
        return Err(LabError::OffGridTime(upto as f64 * e.grid().dt()));
    }
    let dt = e.grid().dt();
    let mut values = vec![0.0; e.num_paths() * d];
    map_paths_into(e, &mut values, d, |_, cursor, out| {
        integrate_one_path(&prepared, cursor, dt, upto, out);
    });
    Ok(SampleVector {
        dim: d,
        values,
        provenance: format!("ito_prefix(upto={upto}, seed={})", e.seed()),
    })
}

#[inline]
fn integrate_one_path(
    prepared: &PreparedIntegrand,
    cursor: &PathCursor,
    dt: f64,
    upto: usize,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|y| *y = 0.0);
    match prepared.state_rule() {
        StateRule::None => {
            let d = prepared.dim();
            if d == 1 {
                let mut acc = 0.0;
                for k in 0..upto {
                    acc += prepared.scalar_at(k, 0.0) * cursor.incr[k];
                }
                out[0] = acc;
            } else {
                for k in 0..upto {
                    let mat = prepared.matrix_at(k);
                    let db = cursor.incr(k);
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
        }
        StateRule::EulerMaruyama => {
            let mut x = 0.0;
            let mut acc = 0.0;
            for k in 0..upto {
                let db = cursor.incr[k];
                acc += prepared.scalar_at(k, x) * db;
                x += db + prepared.drift_at(k, x) * dt;
            }
            out[0] = acc;
        }
        StateRule::NodeValue => {
            let mut acc = 0.0;
            for k in 0..upto {
                acc += prepared.scalar_at(k, cursor.nodes[k]) * cursor.incr[k];
            }
            out[0] = acc;
        }
    }
}

/// Full Itô integral `∫_0^1 f dB` over the ensemble.
pub fn ito_integral(f: &Integrand, e: &PathEnsemble) -> Result<SampleVector> {
    ito_prefix(f, e, e.grid().steps())
}

/// Partial Itô sum up to grid time `t`, i.e. `E[X | F_t]` for the martingale
/// generated by `f`.
pub fn martingale_snapshot(f: &Integrand, e: &PathEnsemble, t: f64) -> Result<SampleVector> {
    let k = e.grid().index_of(t)?;
    ito_prefix(f, e, k)
}

/// Per-step increment moment diagnostics across paths.
#[derive(Debug, Clone)]
pub struct IncrementMoments {
    pub dt: f64,
    pub num_paths: usize,
    /// `steps x dim` sample means.
    pub means: Vec<f64>,
    /// `steps x dim` sample variances.
    pub variances: Vec<f64>,
}

impl IncrementMoments {
    /// Statistical invariant: every increment has sample mean within
    /// `4 sqrt(dt / N)` of zero and variance within 5% of `dt`.
    pub fn check(&self) -> std::result::Result<(), String> {
        let mean_tol = 4.0 * (self.dt / self.num_paths as f64).sqrt();
        for (i, &m) in self.means.iter().enumerate() {
            if m.abs() > mean_tol {
                return Err(format!("increment {i} mean {m:.3e} exceeds {mean_tol:.3e}"));
            }
        }
        for (i, &v) in self.variances.iter().enumerate() {
            if (v - self.dt).abs() > 0.05 * self.dt {
                return Err(format!("increment {i} variance {v:.3e} vs dt {:.3e}", self.dt));
            }
        }
        Ok(())
    }
}

/// Computes per-step increment means and variances.
pub fn increment_moments(e: &PathEnsemble) -> IncrementMoments {
    let m = e.grid().steps();
    let d = e.dimension();
    let len = m * d;
    let sums = reduce_paths(
        e,
        || vec![0.0; 2 * len],
        |acc, _, cursor| {
            for (i, &x) in cursor.incr.iter().enumerate() {
                acc[i] += x;
                acc[len + i] += x * x;
            }
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
        },
    );
    let n = e.num_paths() as f64;
    let means: Vec<f64> = sums[..len].iter().map(|s| s / n).collect();
    let variances: Vec<f64> = sums[len..]
        .iter()
        .zip(&means)
        .map(|(sq, m)| (sq / n - m * m).max(0.0))
        .collect();
    IncrementMoments {
        dt: e.grid().dt(),
        num_paths: e.num_paths(),
        means,
        variances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_and_lookup() {
        let g = TimeGrid::new(4).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(4), 1.0);
        assert_eq!(g.index_of(0.5).unwrap(), 2);
        assert!(g.index_of(0.3).is_err());
        assert!(TimeGrid::new(0).is_err());
    }

    #[test]
    fn same_seed_same_paths() {
        let g = TimeGrid::new(16).unwrap();
        let a = sample_paths(g, 2, 50, 99).unwrap();
        let b = sample_paths(g, 2, 50, 99).unwrap();
        assert_eq!(a.materialize(), b.materialize());
        let c = sample_paths(g, 2, 50, 100).unwrap();
        assert_ne!(a.materialize(), c.materialize());
    }

    #[test]
    fn zero_sizes_rejected() {
        let g = TimeGrid::new(4).unwrap();
        assert!(sample_paths(g, 0, 10, 1).is_err());
        assert!(sample_paths(g, 1, 0, 1).is_err());
    }

    #[test]
    fn endpoint_variance_single_step() {
        let g = TimeGrid::new(1).unwrap();
        let e = sample_paths(g, 1, 100_000, 7).unwrap();
        let mut sum_sq = 0.0;
        let mut buf = vec![0.0; 1];
        for p in 0..e.num_paths() {
            e.increments_into(p, &mut buf);
            sum_sq += buf[0] * buf[0];
        }
        let var = sum_sq / e.num_paths() as f64;
        assert!((var - 1.0).abs() < 0.02, "endpoint variance {var}");
    }

    #[test]
    fn reverse_twice_is_identity_and_b1_fixed() {
        let g = TimeGrid::new(32).unwrap();
        let e = sample_paths(g, 1, 20, 3).unwrap();
        let rr = e.reversed().reversed();
        assert_eq!(e, rr);
        assert_eq!(e.materialize(), rr.materialize());
        // B̂_1 = B_1 per path.
        let fwd = e.materialize();
        let rev = e.reversed().materialize();
        let nodes = g.num_nodes();
        for p in 0..20 {
            let f1 = fwd[p * nodes + nodes - 1];
            let r1 = rev[p * nodes + nodes - 1];
            assert!((f1 - r1).abs() < 1e-14);
            assert_eq!(rev[p * nodes], 0.0, "reversed path must start at 0");
        }
    }

    #[test]
    fn reversed_node_values_match_definition() {
        let g = TimeGrid::new(8).unwrap();
        let e = sample_paths(g, 2, 5, 11).unwrap();
        let fwd = e.materialize();
        let rev = e.reversed().materialize();
        let nodes = g.num_nodes();
        let d = 2;
        for p in 0..5 {
            for k in 0..nodes {
                for c in 0..d {
                    let b1 = fwd[(p * nodes + nodes - 1) * d + c];
                    let brev = fwd[(p * nodes + (nodes - 1 - k)) * d + c];
                    let expected = b1 - brev;
                    let got = rev[(p * nodes + k) * d + c];
                    assert!((got - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn increment_moments_forward_and_reversed() {
        let g = TimeGrid::new(100).unwrap();
        let e = sample_paths(g, 2, 10_000, 2024).unwrap();
        increment_moments(&e).check().unwrap();
        increment_moments(&e.reversed()).check().unwrap();
    }

    #[test]
    fn second_moment_basics() {
        let v = SampleVector {
            dim: 1,
            values: vec![0.0; 100],
            provenance: "zeros".into(),
        };
        let m = second_moment(&v);
        assert_eq!(m.value, 0.0);
        assert_eq!(m.std_error, 0.0);
    }

    #[test]
    fn reduction_independent_of_thread_count() {
        let g = TimeGrid::new(64).unwrap();
        let e = sample_paths(g, 1, 4097, 5).unwrap();
        let run = || {
            reduce_paths(
                &e,
                || 0.0f64,
                |acc, _, cursor| *acc += cursor.nodes[cursor.nodes.len() - 1],
                |acc, p| *acc += p,
            )
        };
        let a = run();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(run);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
