//! Radial interaction kernels and their calculus.
//!
//! A kernel φ: [0,∞) → [0,∞) weights pairwise alignment by distance. The
//! families below form a closed enum — not user callbacks — so that tail
//! integrals, heavy-tail decisions, Lipschitz constants, and the odd
//! primitive Φ all have exact closed forms. Flocking conditions hinge on
//! whether ∫^∞ φ diverges; that has to be *decided*, not sampled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance weight for pairwise alignment. Non-negative and non-increasing
/// in the radius for every admissible parameter choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Kernel {
    /// φ(r) = c with c > 0: all-to-all coupling, no spatial decay.
    Constant { c: f64 },
    /// φ(r) = (1 + r)^(−beta) with beta ≥ 0: algebraic tail, heavy for
    /// beta ≤ 1.
    PowerLaw { beta: f64 },
    /// φ(r) = max(0, 1 − r/radius): finite interaction range with a kink at
    /// r = radius.
    CompactBump { radius: f64 },
}

impl Kernel {
    /// Check the family parameter. Construction through serde (config files)
    /// bypasses any constructor, so validation is a separate, explicit step.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Constant { c } => {
                if !c.is_finite() || c <= 0.0 {
                    return Err(Error::arg(format!(
                        "constant kernel level must be positive and finite, got {c}"
                    )));
                }
            }
            Kernel::PowerLaw { beta } => {
                if !beta.is_finite() || beta < 0.0 {
                    return Err(Error::arg(format!(
                        "power-law exponent must be non-negative and finite, got {beta}"
                    )));
                }
            }
            Kernel::CompactBump { radius } => {
                if !radius.is_finite() || radius <= 0.0 {
                    return Err(Error::arg(format!(
                        "bump radius must be positive and finite, got {radius}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// φ(r) for a finite radius r ≥ 0.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::arg(format!(
                "kernel radius must be finite and non-negative, got {r}"
            )));
        }
        Ok(self.eval_unchecked(r))
    }

    /// φ(r) without the domain check; callers guarantee r is a finite
    /// non-negative number (e.g. a vector norm of a finite state).
    #[inline]
    pub(crate) fn eval_unchecked(&self, r: f64) -> f64 {
        match *self {
            Kernel::Constant { c } => c,
            Kernel::PowerLaw { beta } => (1.0 + r).powf(-beta),
            Kernel::CompactBump { radius } => {
                let t = 1.0 - r / radius;
                if t > 0.0 {
                    t
                } else {
                    0.0
                }
            }
        }
    }

    /// Global Lipschitz constant of φ on [0,∞): sup_r |φ'(r)|.
    pub fn lipschitz_constant(&self) -> f64 {
        match *self {
            Kernel::Constant { .. } => 0.0,
            Kernel::PowerLaw { beta } => beta,
            Kernel::CompactBump { radius } => 1.0 / radius,
        }
    }

    /// φ'(r) for finite r ≥ 0. The bump kernel is not differentiable at its
    /// support radius; the right derivative (zero) is returned there, and
    /// integration steps that cross the kink are flagged by the simulator.
    pub fn derivative(&self, r: f64) -> Result<f64> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::arg(format!(
                "kernel radius must be finite and non-negative, got {r}"
            )));
        }
        Ok(self.derivative_unchecked(r))
    }

    #[inline]
    pub(crate) fn derivative_unchecked(&self, r: f64) -> f64 {
        match *self {
            Kernel::Constant { .. } => 0.0,
            Kernel::PowerLaw { beta } => -beta * (1.0 + r).powf(-beta - 1.0),
            Kernel::CompactBump { radius } => {
                if r < radius {
                    -1.0 / radius
                } else {
                    0.0
                }
            }
        }
    }

    /// ∫_a^b φ(r) dr in closed form. `b` may be `f64::INFINITY`; a divergent
    /// integral returns `f64::INFINITY` rather than an error, because "the
    /// tail diverges" is an answer the flocking conditions consume.
    pub fn tail_integral(&self, a: f64, b: f64) -> Result<f64> {
        if !a.is_finite() || a < 0.0 {
            return Err(Error::arg(format!(
                "tail integral lower end must be finite and non-negative, got {a}"
            )));
        }
        if b.is_nan() || b < 0.0 {
            return Err(Error::arg(format!(
                "tail integral upper end must be non-negative (or +inf), got {b}"
            )));
        }
        if a > b {
            return Err(Error::arg(format!(
                "tail integral has lower end {a} above upper end {b}"
            )));
        }
        Ok(match *self {
            Kernel::Constant { c } => {
                if b.is_infinite() {
                    f64::INFINITY
                } else {
                    c * (b - a)
                }
            }
            Kernel::PowerLaw { beta } => {
                if (beta - 1.0).abs() < 1e-14 {
                    // ∫ (1+r)^(−1) dr = ln(1+r)
                    if b.is_infinite() {
                        f64::INFINITY
                    } else {
                        ((1.0 + b) / (1.0 + a)).ln()
                    }
                } else if beta < 1.0 {
                    // antiderivative (1+r)^(1−β)/(1−β), divergent tail
                    if b.is_infinite() {
                        f64::INFINITY
                    } else {
                        ((1.0 + b).powf(1.0 - beta) - (1.0 + a).powf(1.0 - beta)) / (1.0 - beta)
                    }
                } else {
                    // β > 1: integrable tail
                    let fa = (1.0 + a).powf(1.0 - beta);
                    let fb = if b.is_infinite() {
                        0.0
                    } else {
                        (1.0 + b).powf(1.0 - beta)
                    };
                    (fa - fb) / (beta - 1.0)
                }
            }
            Kernel::CompactBump { radius } => {
                // antiderivative r − r²/(2R) up to the support edge
                let f = |r: f64| {
                    let r = r.min(radius);
                    r - r * r / (2.0 * radius)
                };
                let fb = if b.is_infinite() { radius / 2.0 } else { f(b) };
                fb - f(a)
            }
        })
    }

    /// Whether ∫^∞ φ(r) dr diverges, decided in closed form per family.
    pub fn is_heavy_tailed(&self) -> bool {
        match *self {
            Kernel::Constant { .. } => true,
            Kernel::PowerLaw { beta } => beta <= 1.0,
            Kernel::CompactBump { .. } => false,
        }
    }

    /// The odd primitive Φ(r) = ∫_0^r φ(|s|) ds, normalized by Φ(0) = 0.
    /// Φ is odd and non-decreasing; only its monotonicity is consumed
    /// downstream, so the normalization is a free choice.
    pub fn primitive(&self, r: f64) -> Result<f64> {
        if !r.is_finite() {
            return Err(Error::arg(format!(
                "primitive argument must be finite, got {r}"
            )));
        }
        let magnitude = self.tail_integral(0.0, r.abs())?;
        Ok(if r < 0.0 { -magnitude } else { magnitude })
    }

    /// φ(0) = sup φ.
    pub fn peak(&self) -> f64 {
        self.eval_unchecked(0.0)
    }
}

/// Evaluate φ at radius `r`. Flat-function form of [`Kernel::eval`].
pub fn eval_kernel(kernel: &Kernel, r: f64) -> Result<f64> {
    kernel.eval(r)
}

/// ∫_a^b φ(r) dr. Flat-function form of [`Kernel::tail_integral`].
pub fn kernel_tail_integral(kernel: &Kernel, a: f64, b: f64) -> Result<f64> {
    kernel.tail_integral(a, b)
}

/// Whether the kernel tail integral diverges. Flat-function form of
/// [`Kernel::is_heavy_tailed`].
pub fn is_heavy_tailed(kernel: &Kernel) -> bool {
    kernel.is_heavy_tailed()
}

/// The odd primitive Φ with Φ(0) = 0. Flat-function form of
/// [`Kernel::primitive`].
pub fn primitive_phi(kernel: &Kernel, r: f64) -> Result<f64> {
    kernel.primitive(r)
}
