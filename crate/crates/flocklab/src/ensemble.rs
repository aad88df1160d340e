//! Weighted atomic ensembles: the discrete measure ρ₀ = Σ_i w_i δ_{x_i}.
//!
//! Positions are stored flat, row-major with stride `dim`. Weights are
//! strictly positive and sum to one; the ensemble is immutable after
//! construction so that downstream code can rely on those invariants.

use crate::error::{Error, Result};
use crate::tolerances::WEIGHT_SUM_TOL;

#[derive(Clone, Debug, PartialEq)]
pub struct AtomEnsemble {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomEnsemble {
    /// Build an ensemble from flat positions (`weights.len() * dim` entries)
    /// and strictly positive weights summing to one.
    pub fn new(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("ensemble dimension must be at least 1"));
        }
        if weights.is_empty() {
            return Err(Error::arg("ensemble must contain at least one atom"));
        }
        if positions.len() != weights.len() * dim {
            return Err(Error::arg(format!(
                "expected {} position entries for {} atoms in dimension {}, got {}",
                weights.len() * dim,
                weights.len(),
                dim,
                positions.len()
            )));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::arg("atom positions must be finite"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::arg("atom weights must be positive and finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::arg(format!(
                "atom weights must sum to 1 within {WEIGHT_SUM_TOL:.0e}, got {total:.17}"
            )));
        }
        Ok(AtomEnsemble {
            dim,
            positions,
            weights,
        })
    }

    /// Equal-weight ensemble (w_i = 1/N) over the given flat positions.
    pub fn equal_weights(dim: usize, positions: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("ensemble dimension must be at least 1"));
        }
        if positions.is_empty() || positions.len() % dim != 0 {
            return Err(Error::arg(format!(
                "position buffer length {} is not a positive multiple of dim {}",
                positions.len(),
                dim
            )));
        }
        let n = positions.len() / dim;
        AtomEnsemble::new(dim, positions, vec![1.0 / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Largest pairwise position distance at construction time.
    pub fn position_diameter(&self) -> f64 {
        let n = self.n();
        let d = self.dim;
        let mut best = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let mut acc = 0.0;
                for k in 0..d {
                    let diff = self.positions[i * d + k] - self.positions[j * d + k];
                    acc += diff * diff;
                }
                best = best.max(acc);
            }
        }
        best.sqrt()
    }
}

/// Parse the plain-text atom format: one atom per line,
/// `w x_1 … x_d v_1 … v_d`, whitespace-separated; blank lines and lines
/// starting with `#` are ignored. Returns the ensemble and the velocity
/// array (flat, stride `dim`).
pub fn read_atoms_text(text: &str, dim: usize) -> Result<(AtomEnsemble, Vec<f64>)> {
    if dim == 0 {
        return Err(Error::arg("ensemble dimension must be at least 1"));
    }
    let expected = 1 + 2 * dim;
    let mut weights = Vec::new();
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != expected {
            return Err(Error::arg(format!(
                "atoms file line {}: expected {expected} columns (w, {dim} position, {dim} velocity), got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let mut parsed = Vec::with_capacity(expected);
        for f in &fields {
            let value: f64 = f.parse().map_err(|_| {
                Error::arg(format!(
                    "atoms file line {}: could not parse `{f}` as a number",
                    lineno + 1
                ))
            })?;
            parsed.push(value);
        }
        weights.push(parsed[0]);
        positions.extend_from_slice(&parsed[1..1 + dim]);
        velocities.extend_from_slice(&parsed[1 + dim..]);
    }
    if velocities.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("atom velocities must be finite"));
    }
    let ensemble = AtomEnsemble::new(dim, positions, weights)?;
    Ok((ensemble, velocities))
}

/// Serialize an ensemble and velocity array back to the plain-text atom
/// format; round-trips through [`read_atoms_text`].
pub fn write_atoms_text(ensemble: &AtomEnsemble, velocities: &[f64]) -> Result<String> {
    let d = ensemble.dim();
    if velocities.len() != ensemble.n() * d {
        return Err(Error::arg(format!(
            "velocity buffer has {} entries, expected {}",
            velocities.len(),
            ensemble.n() * d
        )));
    }
    let mut out = String::new();
    for i in 0..ensemble.n() {
        out.push_str(&format!("{:.17e}", ensemble.weights()[i]));
        for k in 0..d {
            out.push_str(&format!(" {:.17e}", ensemble.position(i)[k]));
        }
        for k in 0..d {
            out.push_str(&format!(" {:.17e}", velocities[i * d + k]));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_invariants() {
        let ens = AtomEnsemble::new(2, vec![0.0, 0.0, 1.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(ens.n(), 2);
        assert_eq!(ens.dim(), 2);
        assert_eq!(ens.position(1), &[1.0, 1.0]);

        assert!(AtomEnsemble::new(2, vec![0.0; 4], vec![0.6, 0.6]).is_err());
        assert!(AtomEnsemble::new(2, vec![0.0; 4], vec![1.5, -0.5]).is_err());
        assert!(AtomEnsemble::new(2, vec![0.0; 3], vec![0.5, 0.5]).is_err());
        assert!(AtomEnsemble::new(2, vec![], vec![]).is_err());
        assert!(AtomEnsemble::new(2, vec![f64::NAN; 4], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn equal_weights_normalizes() {
        let ens = AtomEnsemble::equal_weights(1, vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(ens.weights(), &[1.0 / 3.0; 3]);
        let total: f64 = ens.weights().iter().sum();
        assert!((total - 1.0).abs() <= WEIGHT_SUM_TOL);
    }

    #[test]
    fn position_diameter_is_exact_for_small_sets() {
        let ens =
            AtomEnsemble::equal_weights(2, vec![0.0, 0.0, 3.0, 4.0, 1.0, 1.0]).unwrap();
        assert_eq!(ens.position_diameter(), 5.0);
        let single = AtomEnsemble::equal_weights(2, vec![7.0, -2.0]).unwrap();
        assert_eq!(single.position_diameter(), 0.0);
    }

    #[test]
    fn atoms_text_round_trip() {
        let text = "\
# two atoms on the line
0.5  -1.0 1.0
0.5   1.0 -1.0

";
        let (ens, vel) = read_atoms_text(text, 1).unwrap();
        assert_eq!(ens.n(), 2);
        assert_eq!(ens.positions(), &[-1.0, 1.0]);
        assert_eq!(vel, vec![1.0, -1.0]);

        let rendered = write_atoms_text(&ens, &vel).unwrap();
        let (ens2, vel2) = read_atoms_text(&rendered, 1).unwrap();
        assert_eq!(ens.positions(), ens2.positions());
        assert_eq!(ens.weights(), ens2.weights());
        assert_eq!(vel, vel2);
    }

    #[test]
    fn atoms_text_reports_line_numbers() {
        let err = read_atoms_text("0.5 0.0 0.0\n0.5 1.0\n", 1).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = read_atoms_text("0.5 zero 0.0\n", 1).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
