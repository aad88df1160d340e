//! Run configuration: JSON parsing, scenario presets, schema checking with
//! suggestions, and aggregated semantic validation.
//!
//! A configuration is a single JSON object. It may name a `preset`, in
//! which case the preset expands to a complete configuration first and the
//! remaining user keys are deep-merged over it (objects merge recursively,
//! everything else replaces). Unknown keys are rejected — with a pointer to
//! the intended key where one can be guessed — and semantic validation
//! reports every problem at once rather than stopping at the first.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

use crate::coupling::CouplingParams;
use crate::ensemble::{read_atoms_text, AtomEnsemble};
use crate::error::{Error, Result};
use crate::fields::VelocityField;
use crate::kernel::Kernel;
use crate::sampler::{sample_ensemble, EnsembleSpec};
use crate::sim::{default_timestep, SimOptions};

/// A Wasserstein/modulated-energy order in `[1, ∞]`. Serialized as a plain
/// number, with the string `"inf"` denoting infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QOrder(pub f64);

impl QOrder {
    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl std::fmt::Display for QOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for QOrder {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for QOrder {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        match &value {
            Value::Number(n) => n
                .as_f64()
                .map(QOrder)
                .ok_or_else(|| serde::de::Error::custom("q must be a finite number or \"inf\"")),
            Value::String(s) if s == "inf" || s == "infinity" => Ok(QOrder(f64::INFINITY)),
            other => Err(serde::de::Error::custom(format!(
                "q must be a number or \"inf\", got {other}"
            ))),
        }
    }
}

fn de_dt<'de, D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Option<f64>, D::Error> {
    let value = Value::deserialize(deserializer)?;
    match &value {
        Value::Null => Ok(None),
        Value::String(s) if s == "auto" => Ok(None),
        Value::Number(n) => n.as_f64().map(Some).ok_or_else(|| {
            serde::de::Error::custom("dt must be a number, \"auto\", or null")
        }),
        other => Err(serde::de::Error::custom(format!(
            "dt must be a number, \"auto\", or null, got {other}"
        ))),
    }
}

fn ser_dt<S: Serializer>(dt: &Option<f64>, serializer: S) -> std::result::Result<S::Ok, S::Error> {
    match dt {
        Some(v) => serializer.serialize_f64(*v),
        None => serializer.serialize_str("auto"),
    }
}

fn default_stride() -> usize {
    10
}

fn default_h() -> f64 {
    0.25
}

fn default_q() -> Vec<QOrder> {
    vec![QOrder(2.0)]
}

fn default_out() -> String {
    "out".to_string()
}

/// Controls for the (N, seed) mean-field stability sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeanfieldSweep {
    /// Particle counts to sweep.
    pub n_grid: Vec<usize>,
    /// Seeds per particle count.
    pub seeds: Vec<u64>,
}

/// A fully expanded run configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    /// Spatial dimension of positions and velocities.
    pub dim: usize,
    /// Communication kernel φ.
    pub kernel: Kernel,
    /// Alignment exponent, p ≥ 2.
    pub p: f64,
    /// Coupling strength, κ > 0.
    pub kappa: f64,
    /// Initial atom positions and weights.
    pub ensemble: EnsembleSpec,
    /// Initial velocity profile (ignored for file-backed ensembles, which
    /// carry their own velocities).
    pub u0: VelocityField,
    /// Step size; absent or `"auto"` derives one from the kernel, coupling,
    /// and initial speed.
    #[serde(default, deserialize_with = "de_dt", serialize_with = "ser_dt")]
    pub dt: Option<f64>,
    /// Final time.
    pub horizon: f64,
    /// Retain every k-th step in the trajectory (diagnostics cover every
    /// step regardless).
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    /// Spatial bin width for Eulerian reconstruction.
    #[serde(default = "default_h")]
    pub h: f64,
    /// Orders for Wasserstein/modulated-energy computations.
    #[serde(default = "default_q")]
    pub q: Vec<QOrder>,
    /// Seed for every random draw in the run.
    #[serde(default)]
    pub seed: u64,
    /// Artifact directory.
    #[serde(default = "default_out")]
    pub out_dir: String,
    /// Co-integrate label Jacobians (needs a closed-form velocity profile).
    #[serde(default)]
    pub track_jacobians: bool,
    /// Present iff the configuration drives a mean-field sweep.
    #[serde(default)]
    pub meanfield: Option<MeanfieldSweep>,
}

/// The built-in scenario presets.
pub const PRESET_NAMES: [&str; 8] = [
    "two-body-p2",
    "two-body-p3",
    "subcritical-1d",
    "supercritical-1d",
    "heavy-tail-flock",
    "p25-algebraic",
    "large-kappa-euler",
    "meanfield-sweep",
];

/// Expands a preset name into a complete configuration object.
///
/// # Errors
///
/// [`Error::Argument`] for an unknown name (the message lists the valid
/// ones).
pub fn preset_value(name: &str) -> Result<Value> {
    let value = match name {
        // Two equal atoms at ±1/2 under the constant kernel: the relative
        // motion has a closed form, used as an integrator oracle.
        "two-body-p2" => json!({
            "dim": 1,
            "kernel": {"family": "constant", "c": 1.0},
            "p": 2.0,
            "kappa": 1.0,
            "ensemble": {"source": "grid", "per_axis": 2, "extent": 0.5},
            "u0": {"family": "linear", "matrix": [-0.5]},
            "dt": 1.0e-3,
            "horizon": 10.0,
            "sample_stride": 100,
            "h": 0.25,
            "q": [2.0],
            "seed": 42,
            "out_dir": "out"
        }),
        "two-body-p3" => json!({
            "dim": 1,
            "kernel": {"family": "constant", "c": 1.0},
            "p": 3.0,
            "kappa": 1.0,
            "ensemble": {"source": "grid", "per_axis": 2, "extent": 0.5},
            "u0": {"family": "linear", "matrix": [-1.0]},
            "dt": 1.0e-3,
            "horizon": 2.0,
            "sample_stride": 100,
            "h": 0.25,
            "q": [2.0],
            "seed": 42,
            "out_dir": "out"
        }),
        // u₀ = −x against the constant unit kernel makes the effective
        // velocity identically zero: the marginal order-preserving case.
        "subcritical-1d" => json!({
            "dim": 1,
            "kernel": {"family": "constant", "c": 1.0},
            "p": 2.0,
            "kappa": 1.0,
            "ensemble": {"source": "grid", "per_axis": 8, "extent": 1.0},
            "u0": {"family": "linear", "matrix": [-1.0]},
            "dt": "auto",
            "horizon": 20.0,
            "sample_stride": 10,
            "h": 0.25,
            "q": [2.0],
            "seed": 7,
            "out_dir": "out"
        }),
        // u₀ = −2x overshoots: every adjacent pair collides at t = ln 2.
        "supercritical-1d" => json!({
            "dim": 1,
            "kernel": {"family": "constant", "c": 1.0},
            "p": 2.0,
            "kappa": 1.0,
            "ensemble": {"source": "grid", "per_axis": 8, "extent": 1.0},
            "u0": {"family": "linear", "matrix": [-2.0]},
            "dt": "auto",
            "horizon": 20.0,
            "sample_stride": 10,
            "h": 0.0625,
            "q": [2.0],
            "seed": 7,
            "out_dir": "out"
        }),
        "heavy-tail-flock" => json!({
            "dim": 2,
            "kernel": {"family": "power-law", "beta": 0.5},
            "p": 2.0,
            "kappa": 1.0,
            "ensemble": {"source": "uniform-ball", "radius": 1.0, "n": 200},
            "u0": {
                "family": "sinusoid",
                "amplitude": [0.4, 0.3],
                "frequency": [2.0, 3.0],
                "phase": [0.5, 1.2]
            },
            "dt": "auto",
            "horizon": 20.0,
            "sample_stride": 20,
            "h": 0.25,
            "q": [2.0],
            "seed": 1,
            "out_dir": "out"
        }),
        // Expanding line of atoms under p = 2.5: the velocity diameter
        // decays algebraically rather than exponentially.
        "p25-algebraic" => json!({
            "dim": 1,
            "kernel": {"family": "power-law", "beta": 0.5},
            "p": 2.5,
            "kappa": 1.0,
            "ensemble": {"source": "grid", "per_axis": 8, "extent": 1.0},
            "u0": {"family": "linear", "matrix": [0.5]},
            "dt": "auto",
            "horizon": 100.0,
            "sample_stride": 50,
            "h": 0.25,
            "q": [2.0],
            "seed": 3,
            "out_dir": "out"
        }),
        // Strong coupling with unit shear: the gradient integral halves the
        // certificate threshold and the flow map stays injective.
        "large-kappa-euler" => json!({
            "dim": 1,
            "kernel": {"family": "constant", "c": 1.0},
            "p": 2.0,
            "kappa": 2.0,
            "ensemble": {"source": "grid", "per_axis": 8, "extent": 1.0},
            "u0": {"family": "linear", "matrix": [-1.0]},
            "dt": "auto",
            "horizon": 8.0,
            "sample_stride": 10,
            "h": 0.25,
            "q": [2.0],
            "seed": 5,
            "track_jacobians": true,
            "out_dir": "out"
        }),
        "meanfield-sweep" => json!({
            "dim": 2,
            "kernel": {"family": "power-law", "beta": 0.5},
            "p": 2.0,
            "kappa": 1.0,
            "ensemble": {"source": "uniform-ball", "radius": 1.0, "n": 128},
            "u0": {
                "family": "sinusoid",
                "amplitude": [0.3, 0.3],
                "frequency": [1.0, 1.0],
                "phase": [0.0, 0.0]
            },
            "dt": "auto",
            "horizon": 50.0,
            "sample_stride": 20,
            "h": 0.25,
            "q": [2.0],
            "seed": 11,
            "out_dir": "out",
            "meanfield": {
                "n_grid": [32, 64, 128, 256, 512, 1024],
                "seeds": [1, 2, 3]
            }
        }),
        other => {
            return Err(Error::arg(format!(
                "unknown preset `{other}`; available presets: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(value)
}

/// Edit distance used for key suggestions.
fn levenshtein(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut prev = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let insertion = row[j] + 1;
            let deletion = row[j + 1] + 1;
            let substitution = prev + usize::from(ca != cb);
            prev = row[j + 1];
            row[j + 1] = insertion.min(deletion).min(substitution);
        }
    }
    row[b.len()]
}

/// Keys recognized at each object of the configuration tree, addressed by
/// dotted path ("" is the root).
fn known_keys(path: &str) -> Option<&'static [&'static str]> {
    match path {
        "" => Some(&[
            "dim",
            "kernel",
            "p",
            "kappa",
            "ensemble",
            "u0",
            "dt",
            "horizon",
            "sample_stride",
            "h",
            "q",
            "seed",
            "out_dir",
            "track_jacobians",
            "meanfield",
        ]),
        "kernel" => Some(&["family", "c", "beta", "radius"]),
        "ensemble" => Some(&["source", "path", "radius", "n", "sigma", "per_axis", "extent"]),
        "u0" => Some(&["family", "value", "matrix", "amplitude", "frequency", "phase"]),
        "meanfield" => Some(&["n_grid", "seeds"]),
        _ => None,
    }
}

/// Misspellings and renames worth pointing at their canonical key.
const KEY_ALIASES: [(&str, &str); 7] = [
    ("phi_exponent", "kernel.beta"),
    ("phi", "kernel"),
    ("timestep", "dt"),
    ("t_end", "horizon"),
    ("t_final", "horizon"),
    ("n_atoms", "ensemble.n"),
    ("stride", "sample_stride"),
];

fn check_unknown_keys(value: &Value, path: &str, problems: &mut Vec<String>) {
    let Value::Object(map) = value else { return };
    let Some(known) = known_keys(path) else { return };
    for (key, child) in map {
        if known.contains(&key.as_str()) {
            let child_path = if path.is_empty() {
                key.clone()
            } else {
                format!("{path}.{key}")
            };
            check_unknown_keys(child, &child_path, problems);
            continue;
        }
        let shown = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        let suggestion = KEY_ALIASES
            .iter()
            .find(|(alias, _)| alias == key)
            .map(|(_, target)| (*target).to_string())
            .or_else(|| {
                known
                    .iter()
                    .map(|k| (k, levenshtein(key, k)))
                    .filter(|(_, d)| *d <= 2)
                    .min_by_key(|(_, d)| *d)
                    .map(|(k, _)| {
                        if path.is_empty() {
                            (*k).to_string()
                        } else {
                            format!("{path}.{k}")
                        }
                    })
            });
        match suggestion {
            Some(target) => problems.push(format!(
                "unknown key `{shown}`; did you mean `{target}`?"
            )),
            None => problems.push(format!("unknown key `{shown}`")),
        }
    }
}

/// Recursively merges `src` over `dest`: objects merge key-by-key, every
/// other value replaces.
fn deep_merge(dest: &mut Value, src: Value) {
    match (dest, src) {
        (Value::Object(dest_map), Value::Object(src_map)) => {
            for (key, src_child) in src_map {
                match dest_map.get_mut(&key) {
                    Some(dest_child) => deep_merge(dest_child, src_child),
                    None => {
                        dest_map.insert(key, src_child);
                    }
                }
            }
        }
        (dest_slot, src_value) => *dest_slot = src_value,
    }
}

/// Parses and validates a configuration from JSON text.
///
/// The optional `"preset"` key expands first; every remaining key merges
/// over the expansion. Schema problems (unknown keys) and semantic problems
/// (out-of-range values) are aggregated into a single [`Error::Config`].
///
/// # Errors
///
/// [`Error::Json`] for malformed JSON (with line and column);
/// [`Error::Argument`] for an unknown preset; [`Error::Config`] listing
/// every schema or semantic problem found.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let user: Value = serde_json::from_str(text)?;
    let Value::Object(mut user_map) = user else {
        return Err(Error::arg("configuration must be a JSON object"));
    };

    let mut merged = match user_map.remove("preset") {
        Some(Value::String(name)) => preset_value(&name)?,
        Some(other) => {
            return Err(Error::arg(format!(
                "preset must be a string naming one of: {} (got {other})",
                PRESET_NAMES.join(", ")
            )))
        }
        None => Value::Object(Map::new()),
    };

    let mut problems = Vec::new();
    check_unknown_keys(&Value::Object(user_map.clone()), "", &mut problems);
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }

    deep_merge(&mut merged, Value::Object(user_map));
    let config: SimConfig =
        serde_json::from_value(merged).map_err(|e| Error::Config(vec![e.to_string()]))?;
    config.validate()?;
    Ok(config)
}

impl SimConfig {
    /// Expands a preset into its full configuration.
    pub fn from_preset(name: &str) -> Result<SimConfig> {
        let value = preset_value(name)?;
        let config: SimConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(vec![e.to_string()]))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks every field, reporting all problems at once.
    ///
    /// # Errors
    ///
    /// [`Error::Config`] with one entry per violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("dim must be at least 1".to_string());
        }
        if !(self.p.is_finite() && self.p >= 2.0) {
            problems.push(format!("p must be ≥ 2, got {}", self.p));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            problems.push(format!("kappa must be positive and finite, got {}", self.kappa));
        }
        if let Err(e) = self.kernel.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.ensemble.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.u0.validate(self.dim) {
            problems.push(e.to_string());
        }
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                problems.push(format!("dt must be positive and finite, got {dt}"));
            }
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            problems.push(format!(
                "horizon must be non-negative and finite, got {}",
                self.horizon
            ));
        }
        if self.sample_stride == 0 {
            problems.push("sample_stride must be at least 1".to_string());
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            problems.push(format!("h must be positive and finite, got {}", self.h));
        }
        if self.q.is_empty() {
            problems.push("q must list at least one order".to_string());
        }
        for q in &self.q {
            if q.0.is_nan() || q.0 < 1.0 {
                problems.push(format!("q orders must lie in [1, ∞], got {}", q.0));
            }
        }
        if self.out_dir.is_empty() {
            problems.push("out_dir must not be empty".to_string());
        }
        if self.track_jacobians && matches!(self.ensemble, EnsembleSpec::File { .. }) {
            problems.push(
                "track_jacobians needs a closed-form u0; file ensembles carry \
                 velocities without gradients"
                    .to_string(),
            );
        }
        if let Some(sweep) = &self.meanfield {
            if sweep.n_grid.is_empty() {
                problems.push("meanfield.n_grid must list at least one count".to_string());
            }
            if sweep.n_grid.contains(&0) {
                problems.push("meanfield.n_grid entries must be at least 1".to_string());
            }
            if sweep.seeds.is_empty() {
                problems.push("meanfield.seeds must list at least one seed".to_string());
            }
            if matches!(self.ensemble, EnsembleSpec::File { .. }) {
                problems.push(
                    "the mean-field sweep samples its reference; file ensembles are not \
                     supported here"
                        .to_string(),
                );
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// The coupling parameters (p, κ).
    pub fn coupling(&self) -> Result<CouplingParams> {
        CouplingParams::new(self.p, self.kappa)
    }

    /// Realizes the initial system: atoms plus initial velocities. File
    /// ensembles are read from disk (and carry their own velocities);
    /// sampled ensembles evaluate the configured velocity profile.
    pub fn load_system(&self) -> Result<(AtomEnsemble, Vec<f64>)> {
        match &self.ensemble {
            EnsembleSpec::File { path } => {
                let text = std::fs::read_to_string(path)?;
                read_atoms_text(&text, self.dim)
            }
            spec => {
                let ensemble = sample_ensemble(spec, self.dim, self.seed)?;
                let u0 = self.u0.eval_all(ensemble.positions(), self.dim);
                Ok((ensemble, u0))
            }
        }
    }

    /// The step size: the configured one, or the derived default.
    pub fn resolved_dt(&self, u0: &[f64]) -> Result<f64> {
        if let Some(dt) = self.dt {
            return Ok(dt);
        }
        let cp = self.coupling()?;
        let sup = u0
            .chunks_exact(self.dim)
            .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        Ok(default_timestep(&self.kernel, &cp, sup))
    }

    /// Integration options for this configuration. Diameters are always
    /// tracked (the analytics layer consumes them); Jacobians only on
    /// request.
    pub fn sim_options(&self, ensemble: &AtomEnsemble, u0: &[f64]) -> Result<SimOptions> {
        let grad_u0 = if self.track_jacobians {
            Some(self.u0.grad_all(ensemble.positions(), self.dim))
        } else {
            None
        };
        Ok(SimOptions {
            dt: self.resolved_dt(u0)?,
            horizon: self.horizon,
            sample_stride: self.sample_stride,
            grad_u0,
            track_diameters: true,
        })
    }

    /// The configuration as a JSON value (fully expanded, for manifests).
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("configurations serialize infallibly")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_expands_and_validates() {
        for name in PRESET_NAMES {
            let config = SimConfig::from_preset(name).unwrap();
            assert!(config.horizon > 0.0, "preset {name}");
            // Expansion is deterministic.
            let again = SimConfig::from_preset(name).unwrap();
            assert_eq!(config.to_value(), again.to_value(), "preset {name}");
        }
        assert!(SimConfig::from_preset("no-such-preset").is_err());
    }

    #[test]
    fn preset_only_config_expands_to_full() {
        let config = parse_config(r#"{"preset": "two-body-p2"}"#).unwrap();
        assert_eq!(config.dim, 1);
        assert_eq!(config.p, 2.0);
        assert_eq!(config.dt, Some(1.0e-3));
        assert_eq!(config.horizon, 10.0);
    }

    #[test]
    fn user_keys_override_preset_values() {
        let config =
            parse_config(r#"{"preset": "two-body-p2", "horizon": 3.5, "kernel": {"c": 2.0}}"#)
                .unwrap();
        assert_eq!(config.horizon, 3.5);
        assert_eq!(config.kernel, Kernel::Constant { c: 2.0 });
        // Untouched preset fields survive the merge.
        assert_eq!(config.dt, Some(1.0e-3));
    }

    #[test]
    fn small_p_is_rejected_with_the_range_message() {
        let err = parse_config(r#"{"preset": "two-body-p2", "p": 1.5}"#).unwrap_err();
        match err {
            Error::Config(problems) => {
                assert!(
                    problems.iter().any(|p| p.contains("p must be ≥ 2")),
                    "problems: {problems:?}"
                );
            }
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_suggestions() {
        let err = parse_config(r#"{"preset": "two-body-p2", "phi_exponent": 0.5}"#).unwrap_err();
        match err {
            Error::Config(problems) => {
                assert_eq!(problems.len(), 1);
                assert!(problems[0].contains("phi_exponent"));
                assert!(problems[0].contains("kernel.beta"), "message: {}", problems[0]);
            }
            other => panic!("expected a config error, got {other}"),
        }

        let err = parse_config(r#"{"preset": "two-body-p2", "horizn": 5.0}"#).unwrap_err();
        match err {
            Error::Config(problems) => {
                assert!(problems[0].contains("horizon"), "message: {}", problems[0]);
            }
            other => panic!("expected a config error, got {other}"),
        }

        let err = parse_config(r#"{"preset": "two-body-p2", "kernel": {"beter": 1.0}}"#)
            .unwrap_err();
        match err {
            Error::Config(problems) => {
                assert!(problems[0].contains("kernel.beter"));
                assert!(problems[0].contains("kernel.beta"), "message: {}", problems[0]);
            }
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn validation_aggregates_every_problem() {
        let text = r#"{
            "dim": 1,
            "kernel": {"family": "constant", "c": -1.0},
            "p": 1.0,
            "kappa": 0.0,
            "ensemble": {"source": "grid", "per_axis": 2, "extent": 1.0},
            "u0": {"family": "linear", "matrix": [1.0]},
            "horizon": -2.0
        }"#;
        match parse_config(text).unwrap_err() {
            Error::Config(problems) => {
                assert!(problems.len() >= 4, "problems: {problems:?}");
            }
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = parse_config("{\"dim\": 1,,}").unwrap_err();
        let message = err.to_string();
        assert!(message.contains("line"), "message: {message}");
        assert!(message.contains("column"), "message: {message}");
    }

    #[test]
    fn q_orders_accept_inf_and_round_trip() {
        let config = parse_config(r#"{"preset": "two-body-p2", "q": [1, 2.5, "inf"]}"#).unwrap();
        assert_eq!(config.q.len(), 3);
        assert_eq!(config.q[0], QOrder(1.0));
        assert_eq!(config.q[1], QOrder(2.5));
        assert!(config.q[2].is_infinite());
        let value = config.to_value();
        assert_eq!(value["q"][2], json!("inf"));
        assert_eq!(format!("{}", config.q[2]), "inf");

        assert!(parse_config(r#"{"preset": "two-body-p2", "q": [0.5]}"#).is_err());
    }

    #[test]
    fn dt_auto_resolves_from_the_system() {
        let config = parse_config(r#"{"preset": "subcritical-1d"}"#).unwrap();
        assert_eq!(config.dt, None);
        let (ensemble, u0) = config.load_system().unwrap();
        let dt = config.resolved_dt(&u0).unwrap();
        assert!(dt > 0.0 && dt < 1.0);
        let opts = config.sim_options(&ensemble, &u0).unwrap();
        assert_eq!(opts.dt, dt);
        assert!(opts.grad_u0.is_none());

        let jac = parse_config(r#"{"preset": "large-kappa-euler"}"#).unwrap();
        let (ensemble, u0) = jac.load_system().unwrap();
        let opts = jac.sim_options(&ensemble, &u0).unwrap();
        let g = opts.grad_u0.unwrap();
        assert_eq!(g.len(), ensemble.n());
        assert!(g.iter().all(|&v| v == -1.0));
    }

    #[test]
    fn grid_sampler_matches_documented_layout() {
        let config = parse_config(r#"{"preset": "subcritical-1d"}"#).unwrap();
        let (ensemble, u0) = config.load_system().unwrap();
        assert_eq!(ensemble.n(), 8);
        assert_eq!(ensemble.position(0), &[-1.0]);
        assert_eq!(ensemble.position(7), &[1.0]);
        // u0 = −x at the endpoints.
        assert_eq!(u0[0], 1.0);
        assert_eq!(u0[7], -1.0);
    }
}
