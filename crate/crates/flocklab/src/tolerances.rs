//! Numerical tolerances shared by validation and certification routines.
//!
//! Everything here is an accuracy *budget*, not a statement about the
//! mathematics: the continuous identities are exact, and each constant says
//! how much floating-point slack a particular check is allowed to consume.
//! Keeping them in one place makes the budgets auditable and keeps magic
//! numbers out of call sites.

/// Allowed defect in Σ w_i = 1 for an atomic ensemble. Summing a few thousand
/// doubles accumulates error well below 1e-13; anything larger points at
/// mis-normalized input rather than rounding.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Allowed defect in Σ ρ_z = 1 after binning (a pure regrouping of the
/// ensemble weights, so the budget matches [`WEIGHT_SUM_TOL`]).
pub const MASS_CONSERVATION_TOL: f64 = 1e-12;

/// Per-cell bound on |Σ ν ω|: fibre fluctuations have zero mean by
/// construction, so only cancellation error remains.
pub const FIBRE_MEAN_TOL: f64 = 1e-12;

/// Fibre covariance matrices are positive semidefinite up to rounding; the
/// minimum eigenvalue may only go negative by this fraction of the trace.
pub const PSD_SLACK_REL: f64 = 1e-12;

/// Relative budget for the kinetic-trace identity
/// Σ ρ tr θ = Σ w |v|² − Σ ρ |u|², which holds exactly in real arithmetic.
pub const TRACE_IDENTITY_TOL: f64 = 1e-10;

/// Relative budget for the two routes to the velocity fluctuation δE
/// (moment identity vs. O(N²) double sum).
pub const DELTA_E_REL_TOL: f64 = 1e-10;

/// Sup-norm growth allowed over the initial velocity bound. The maximum
/// principle forbids any growth; fourth-order stepping leaves only rounding.
pub const MAX_PRINCIPLE_SLACK: f64 = 1e-9;

/// Relative drift budget for the conserved total momentum.
pub const MOMENTUM_DRIFT_REL: f64 = 1e-10;

/// Relative drift budget for the linear-in-time center of mass.
pub const CENTER_OF_MASS_TOL: f64 = 1e-9;

/// Multiplicative slack on analytic decay envelopes: measured diameters may
/// exceed an envelope only by this relative amount.
pub const ENVELOPE_SLACK_REL: f64 = 1e-6;

/// Residual accepted when solving the asymptotic-diameter equation by
/// bisection; the bracket is refined far beyond this, so the residual is
/// limited by the tail-integral evaluation, not the root finder.
pub const BISECTION_RESIDUAL_TOL: f64 = 1e-12;

/// A 1-d ordered gap counts as collapsed once it falls below this fraction
/// of the initial position diameter.
pub const GAP_COLLAPSE_REL: f64 = 1e-9;

/// Atoms sharing a position must share their effective velocity to within
/// this tolerance for the profile to count as non-decreasing.
pub const TIE_VHAT_TOL: f64 = 1e-12;

/// Relative slack when comparing a measured gradient integral against its
/// certified a-priori bound (quadrature truncates the infinite horizon).
pub const CERT_COMPARE_SLACK: f64 = 1e-3;
