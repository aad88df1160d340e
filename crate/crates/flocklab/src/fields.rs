//! Analytic initial velocity fields u₀: ℝ^d → ℝ^d.
//!
//! Runs started from a sampler (rather than an atoms file) take their
//! initial velocities from one of these closed-form families. Keeping the
//! family analytic means ∇u₀ — needed to seed the label Jacobian and to
//! evaluate large-coupling thresholds — is exact rather than estimated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum VelocityField {
    /// u₀(x) = value.
    Constant { value: Vec<f64> },
    /// u₀(x) = A·x with A given row-major (d×d).
    Linear { matrix: Vec<f64> },
    /// Componentwise u₀_k(x) = amplitude_k · sin(frequency_k · x_k + phase_k).
    Sinusoid {
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
        #[serde(default)]
        phase: Vec<f64>,
    },
}

impl VelocityField {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let check_len = |name: &str, len: usize, expected: usize| -> Result<()> {
            if len != expected {
                return Err(Error::arg(format!(
                    "velocity field `{name}` needs {expected} entries for dimension {dim}, got {len}"
                )));
            }
            Ok(())
        };
        match self {
            VelocityField::Constant { value } => {
                check_len("value", value.len(), dim)?;
                if value.iter().any(|v| !v.is_finite()) {
                    return Err(Error::arg("velocity field entries must be finite"));
                }
            }
            VelocityField::Linear { matrix } => {
                check_len("matrix", matrix.len(), dim * dim)?;
                if matrix.iter().any(|v| !v.is_finite()) {
                    return Err(Error::arg("velocity field entries must be finite"));
                }
            }
            VelocityField::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => {
                check_len("amplitude", amplitude.len(), dim)?;
                check_len("frequency", frequency.len(), dim)?;
                if !phase.is_empty() {
                    check_len("phase", phase.len(), dim)?;
                }
                if amplitude
                    .iter()
                    .chain(frequency)
                    .chain(phase)
                    .any(|v| !v.is_finite())
                {
                    return Err(Error::arg("velocity field entries must be finite"));
                }
            }
        }
        Ok(())
    }

    /// u₀(x) for a single position.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        match self {
            VelocityField::Constant { value } => value.clone(),
            VelocityField::Linear { matrix } => {
                let mut out = vec![0.0; d];
                for a in 0..d {
                    let mut s = 0.0;
                    for b in 0..d {
                        s += matrix[a * d + b] * x[b];
                    }
                    out[a] = s;
                }
                out
            }
            VelocityField::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => (0..d)
                .map(|k| {
                    let ph = phase.get(k).copied().unwrap_or(0.0);
                    amplitude[k] * (frequency[k] * x[k] + ph).sin()
                })
                .collect(),
        }
    }

    /// Flat velocity buffer for every atom position in `positions`.
    pub fn eval_all(&self, positions: &[f64], dim: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(positions.len());
        for chunk in positions.chunks_exact(dim) {
            out.extend_from_slice(&self.eval(chunk));
        }
        out
    }

    /// ∇u₀(x) as a row-major d×d block, (a,b) entry ∂u_a/∂x_b.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        match self {
            VelocityField::Constant { .. } => vec![0.0; d * d],
            VelocityField::Linear { matrix } => matrix.clone(),
            VelocityField::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => {
                let mut out = vec![0.0; d * d];
                for k in 0..d {
                    let ph = phase.get(k).copied().unwrap_or(0.0);
                    out[k * d + k] =
                        amplitude[k] * frequency[k] * (frequency[k] * x[k] + ph).cos();
                }
                out
            }
        }
    }

    /// Flat buffer of per-atom gradient blocks (n·d·d entries).
    pub fn grad_all(&self, positions: &[f64], dim: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(positions.len() * dim);
        for chunk in positions.chunks_exact(dim) {
            out.extend_from_slice(&self.grad(chunk));
        }
        out
    }

    /// sup_x ‖∇u₀(x)‖ (operator 2-norm), exact per family.
    pub fn grad_sup(&self, dim: usize) -> f64 {
        match self {
            VelocityField::Constant { .. } => 0.0,
            VelocityField::Linear { matrix } => spectral_norm(matrix, dim),
            VelocityField::Sinusoid {
                amplitude,
                frequency,
                ..
            } => amplitude
                .iter()
                .zip(frequency)
                .map(|(a, f)| (a * f).abs())
                .fold(0.0, f64::max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_grad_per_family() {
        let lin = VelocityField::Linear {
            matrix: vec![0.0, 1.0, -1.0, 0.0],
        };
        assert_eq!(lin.eval(&[2.0, 3.0]), vec![3.0, -2.0]);
        assert_eq!(lin.grad(&[5.0, 5.0]), vec![0.0, 1.0, -1.0, 0.0]);
        assert_eq!(lin.grad_sup(2), 1.0);

        let constant = VelocityField::Constant {
            value: vec![1.0, -1.0],
        };
        assert_eq!(constant.eval(&[9.0, 9.0]), vec![1.0, -1.0]);
        assert_eq!(constant.grad_sup(2), 0.0);

        let sin = VelocityField::Sinusoid {
            amplitude: vec![2.0],
            frequency: vec![3.0],
            phase: vec![],
        };
        assert_eq!(sin.eval(&[0.0]), vec![0.0]);
        let g = sin.grad(&[0.0]);
        assert!((g[0] - 6.0).abs() < 1e-15);
        assert_eq!(sin.grad_sup(1), 6.0);
    }

    #[test]
    fn sinusoid_grad_matches_finite_differences() {
        let field = VelocityField::Sinusoid {
            amplitude: vec![1.5, -0.5],
            frequency: vec![2.0, 4.0],
            phase: vec![0.3, -1.1],
        };
        let x = [0.4, -0.9];
        let grad = field.grad(&x);
        let eps = 1e-7;
        for b in 0..2 {
            let mut hi = x;
            hi[b] += eps;
            let fhi = field.eval(&hi);
            let flo = field.eval(&x);
            for a in 0..2 {
                let fd = (fhi[a] - flo[a]) / eps;
                assert!((fd - grad[a * 2 + b]).abs() < 1e-6, "entry ({a},{b})");
            }
        }
    }

    #[test]
    fn validate_checks_lengths() {
        let lin = VelocityField::Linear {
            matrix: vec![1.0, 0.0],
        };
        assert!(lin.validate(2).is_err());
        let sin = VelocityField::Sinusoid {
            amplitude: vec![1.0],
            frequency: vec![1.0, 2.0],
            phase: vec![],
        };
        assert!(sin.validate(1).is_err());
    }
}
