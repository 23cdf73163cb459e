//! A desk-scale numerical laboratory for transport-entropy couplings.
//!
//! The crate provides closed-form Gaussian analytics, a discretized Wiener
//! space with reproducible path ensembles, martingale representations of
//! measures together with the variational entropy functional, time-reversal
//! and linear couplings with per-inequality certificates, independent
//! Wasserstein-2 oracles, and a numerical check of the functional
//! Blaschke–Santaló inequality with its weak-duality bridge.

pub mod coupling;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod ot;
pub mod quad;
pub mod representation;
pub mod santalo;
pub mod wiener;

pub use error::{LabError, Result};
