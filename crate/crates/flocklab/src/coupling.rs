//! The alignment nonlinearity G_p(ξ) = |ξ|^{p−2} ξ and its Jacobian.
//!
//! For p = 2 this is the identity and the dynamics are linear in the
//! velocities; for p > 2 the coupling degenerates as velocities align, which
//! is what produces algebraic (rather than exponential) decay rates. The
//! Jacobian ∇G_p(ξ) = (p−2)|ξ|^{p−4} ξ⊗ξ + |ξ|^{p−2} I drives the label
//! Jacobian co-integration; its apparent singularity at ξ = 0 for p < 4 is
//! removable (‖∇G_p‖ ≤ C_p |ξ|^{p−2}), and the continuity limit is used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent and strength of the alignment coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    /// Alignment exponent, p ≥ 2.
    pub p: f64,
    /// Coupling strength, κ > 0.
    pub kappa: f64,
}

impl CouplingParams {
    pub fn new(p: f64, kappa: f64) -> Result<Self> {
        let params = CouplingParams { p, kappa };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.p.is_finite() || self.p < 2.0 {
            return Err(Error::arg(format!(
                "p must be ≥ 2 for the alignment nonlinearity, got {}",
                self.p
            )));
        }
        if !self.kappa.is_finite() || self.kappa <= 0.0 {
            return Err(Error::arg(format!(
                "coupling strength kappa must be positive and finite, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !p.is_finite() || p < 2.0 {
        return Err(Error::arg(format!(
            "p must be ≥ 2 for the alignment nonlinearity, got {p}"
        )));
    }
    Ok(())
}

/// G_p(ξ) = |ξ|^{p−2} ξ, with G_p(0) = 0 by continuity for every p ≥ 2.
pub fn g_p(xi: &[f64], p: f64) -> Result<Vec<f64>> {
    check_exponent(p)?;
    if xi.iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("g_p argument must be finite".to_string()));
    }
    let norm2: f64 = xi.iter().map(|x| x * x).sum();
    if norm2 == 0.0 {
        return Ok(vec![0.0; xi.len()]);
    }
    let factor = norm2.powf((p - 2.0) / 2.0);
    Ok(xi.iter().map(|x| factor * x).collect())
}

/// ∇G_p(ξ) = (p−2)|ξ|^{p−4} ξ⊗ξ + |ξ|^{p−2} I as a row-major d×d matrix.
/// At ξ = 0 the continuity limit applies: identity for p = 2, zero for p > 2.
/// The result is symmetric positive semidefinite.
pub fn grad_g_p(xi: &[f64], p: f64) -> Result<Vec<f64>> {
    check_exponent(p)?;
    if xi.iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("grad_g_p argument must be finite".to_string()));
    }
    let d = xi.len();
    let mut out = vec![0.0; d * d];
    let norm2: f64 = xi.iter().map(|x| x * x).sum();
    if norm2 == 0.0 {
        if p == 2.0 {
            for a in 0..d {
                out[a * d + a] = 1.0;
            }
        }
        return Ok(out);
    }
    let outer_factor = (p - 2.0) * norm2.powf((p - 4.0) / 2.0);
    let diag = norm2.powf((p - 2.0) / 2.0);
    for a in 0..d {
        for b in 0..d {
            out[a * d + b] = outer_factor * xi[a] * xi[b];
        }
        out[a * d + a] += diag;
    }
    Ok(out)
}

/// Precompiled evaluation of the scalar factor |ξ|^{p−2} from |ξ|².
///
/// The simulator calls this once per atom pair per integration stage; the
/// common exponents avoid `powf` entirely. All branches agree with
/// `norm2.powf((p−2)/2)` to within an ulp or two, and a given run always
/// uses one fixed branch, so results do not depend on scheduling.
#[derive(Clone, Copy, Debug)]
pub(crate) enum GpFactor {
    /// p = 2: factor ≡ 1.
    Identity,
    /// p = 2.5: |ξ|^{1/2} = (|ξ|²)^{1/4}.
    QuarterRoot,
    /// p = 3: |ξ|.
    Norm,
    /// p = 4: |ξ|².
    NormSquared,
    /// Any other p ≥ 2: (|ξ|²)^{(p−2)/2}.
    General { half_pm2: f64 },
}

impl GpFactor {
    pub(crate) fn new(p: f64) -> Self {
        if p == 2.0 {
            GpFactor::Identity
        } else if p == 2.5 {
            GpFactor::QuarterRoot
        } else if p == 3.0 {
            GpFactor::Norm
        } else if p == 4.0 {
            GpFactor::NormSquared
        } else {
            GpFactor::General {
                half_pm2: (p - 2.0) / 2.0,
            }
        }
    }

    /// |ξ|^{p−2} given |ξ|². For p > 2 the value at 0 is 0; for p = 2 it is
    /// 1, which multiplies ξ = 0 downstream, so G_p(0) = 0 either way.
    #[inline(always)]
    pub(crate) fn eval(self, norm2: f64) -> f64 {
        match self {
            GpFactor::Identity => 1.0,
            GpFactor::QuarterRoot => norm2.sqrt().sqrt(),
            GpFactor::Norm => norm2.sqrt(),
            GpFactor::NormSquared => norm2,
            GpFactor::General { half_pm2 } => norm2.powf(half_pm2),
        }
    }
}

/// Accumulate `coeff · ∇G_p(ξ)` into a row-major d×d block without
/// allocating; shares the continuity-limit convention with [`grad_g_p`].
pub(crate) fn add_scaled_grad_g_p(out: &mut [f64], xi: &[f64], p: f64, coeff: f64) {
    let d = xi.len();
    let norm2: f64 = xi.iter().map(|x| x * x).sum();
    if norm2 == 0.0 {
        if p == 2.0 {
            for a in 0..d {
                out[a * d + a] += coeff;
            }
        }
        return;
    }
    let outer_factor = coeff * (p - 2.0) * norm2.powf((p - 4.0) / 2.0);
    let diag = coeff * norm2.powf((p - 2.0) / 2.0);
    for a in 0..d {
        for b in 0..d {
            out[a * d + b] += outer_factor * xi[a] * xi[b];
        }
        out[a * d + a] += diag;
    }
}
