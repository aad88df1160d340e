//! Simulation and verification toolkit for nonlinear velocity-alignment
//! dynamics.
//!
//! The model is a system of weighted atoms (η_i, v_i) ∈ ℝ^d × ℝ^d evolving
//! under pairwise velocity alignment,
//!
//! ```text
//!   η̇_i = v_i,
//!   v̇_i = κ Σ_j w_j φ(|η_i − η_j|) G_p(v_j − v_i),     G_p(ξ) = |ξ|^{p−2} ξ,
//! ```
//!
//! where φ is a non-increasing radial kernel, κ > 0 a coupling strength, and
//! p ≥ 2 the alignment exponent. The crate provides:
//!
//! - [`kernel`], [`coupling`], [`ensemble`]: the domain types (kernel
//!   families with closed-form tail integrals, the nonlinearity G_p and its
//!   Jacobian, weighted atomic measures);
//! - [`sim`]: fixed-step fourth-order integration with a step-synchronous
//!   energy ledger and optional label-Jacobian co-integration;
//! - [`analytics`]: diameters, decay envelopes, asymptotic-diameter solver,
//!   algebraic rate fits, and the energy report;
//! - [`euler`]: reconstruction of Eulerian fields (density, bulk velocity,
//!   Reynolds-type stress, alignment defect force) by spatial binning;
//! - [`thresholds`]: the 1-d critical-threshold test, order-preservation
//!   monitoring, and the large-coupling injectivity certificate;
//! - [`meanfield`]: modulated energies, exact small-N Wasserstein distances,
//!   bounded-Lipschitz momentum bounds, comparison-system certificates, and
//!   seeded particle-stability experiments;
//! - [`config`], [`runner`]: a JSON run configuration with presets, and the
//!   deterministic artifact writer behind the `flocklab` binary;
//! - [`accept`]: the end-to-end verification suite run by `flocklab verify`.
//!
//! Determinism is a design contract: given a configuration and seed, every
//! artifact is byte-identical regardless of thread count.

// The numeric kernels index several parallel flat arrays in lockstep; the
// iterator rewrites clippy suggests obscure the stride arithmetic.
#![allow(clippy::needless_range_loop)]

pub mod accept;
pub mod analytics;
pub mod assignment;
pub mod config;
pub mod coupling;
pub mod ensemble;
pub mod error;
pub mod euler;
pub mod fields;
pub mod gronwall;
pub mod kernel;
pub mod linalg;
pub mod meanfield;
pub mod report;
pub mod runner;
pub mod sampler;
pub mod sim;
pub mod thresholds;
pub mod tolerances;

pub use error::{Error, Result};
