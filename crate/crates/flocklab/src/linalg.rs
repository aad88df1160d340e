//! Small dense-matrix helpers for d×d phase-space blocks.
//!
//! Phase-space dimension is tiny (typically 1–3), so the common cases get
//! closed forms and everything else falls through to nalgebra.

use nalgebra::DMatrix;

/// Operator 2-norm (largest singular value) of a row-major d×d matrix.
pub fn spectral_norm(m: &[f64], d: usize) -> f64 {
    assert_eq!(m.len(), d * d, "matrix block has wrong length");
    match d {
        1 => m[0].abs(),
        2 => {
            // Singular values of [[a,b],[c,e]] from the eigenvalues of AᵀA.
            let (a, b, c, e) = (m[0], m[1], m[2], m[3]);
            let frob2 = a * a + b * b + c * c + e * e;
            let gap = ((a * a + b * b - c * c - e * e).powi(2)
                + 4.0 * (a * c + b * e).powi(2))
            .sqrt();
            (0.5 * (frob2 + gap)).max(0.0).sqrt()
        }
        _ => {
            let mat = DMatrix::from_row_slice(d, d, m);
            mat.singular_values().iter().copied().fold(0.0, f64::max)
        }
    }
}

/// Smallest eigenvalue of a symmetric row-major d×d matrix.
pub fn min_symmetric_eigenvalue(m: &[f64], d: usize) -> f64 {
    assert_eq!(m.len(), d * d, "matrix block has wrong length");
    match d {
        1 => m[0],
        2 => {
            let (a, b, e) = (m[0], m[1], m[3]);
            let mid = 0.5 * (a + e);
            let rad = (0.25 * (a - e) * (a - e) + b * b).sqrt();
            mid - rad
        }
        _ => {
            let mat = DMatrix::from_row_slice(d, d, m);
            mat.symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// out = a · b for row-major d×d blocks (out must not alias a or b).
pub(crate) fn matmul(out: &mut [f64], a: &[f64], b: &[f64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = s;
        }
    }
}

/// y = Mᵀ x for a row-major d×d block, i.e. y_b = Σ_a M_{ab} x_a.
pub(crate) fn transpose_apply(y: &mut [f64], m: &[f64], x: &[f64], d: usize) {
    for b in 0..d {
        let mut s = 0.0;
        for a in 0..d {
            s += m[a * d + b] * x[a];
        }
        y[b] = s;
    }
}
