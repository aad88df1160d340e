//! Quantitative comparison of a sampled particle system with a reference
//! atom quadrature: modulated energies under the product coupling, exact
//! small-N Wasserstein distances, the phase-space product bound, the
//! bounded-Lipschitz momentum-discrepancy bound, and the seeded
//! stability-experiment driver.
//!
//! Throughout, "particles" means an equal-weight system (weight 1/N each)
//! sampled from the initial density, and "reference" means the weighted
//! atom ensemble evolving under the same dynamics. The modulated energies
//! couple every particle with every reference atom:
//!
//! ```text
//!   E_q(X)(t) = ( (1/N) Σ_i Σ_k w_k |x_i(t) − η_k(t)|^q )^{1/q},
//! ```
//!
//! with the analogous velocity form; `q = ∞` takes the maximum over all
//! (particle, atom) pairs.

use std::time::Instant;

use serde::Serialize;

use crate::assignment::{bottleneck_assignment, min_cost_assignment};
use crate::coupling::CouplingParams;
use crate::ensemble::AtomEnsemble;
use crate::error::{Error, Result};
use crate::euler::EulerianSnapshot;
use crate::fields::VelocityField;
use crate::kernel::Kernel;
use crate::sampler::{sample_ensemble, EnsembleSpec};
use crate::sim::{default_timestep, simulate, PhaseState, SimOptions, Trajectory};

/// Largest point count accepted by the exact assignment-based distances.
pub const EXACT_TRANSPORT_LIMIT: usize = 512;

/// Maximum deviation from uniform weights tolerated by the exact distances.
const UNIFORM_WEIGHT_TOL: f64 = 1e-12;

/// A weighted empirical measure on ℝ^m (point masses, weights summing to 1).
#[derive(Clone, Debug)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds a measure from flat row-major points and explicit weights.
    ///
    /// # Errors
    ///
    /// [`Error::Argument`] if the buffers are empty or inconsistent, a
    /// weight is non-positive, or the weights do not sum to 1 within
    /// [`crate::tolerances::WEIGHT_SUM_TOL`].
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("measure dimension must be at least 1"));
        }
        if points.is_empty() || points.len() % dim != 0 {
            return Err(Error::arg(format!(
                "points buffer of {} entries is not a positive multiple of dim {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if weights.len() != n {
            return Err(Error::arg(format!(
                "{} weights do not match {n} points",
                weights.len()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::arg("points must be finite"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::arg("weights must be positive and finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > crate::tolerances::WEIGHT_SUM_TOL {
            return Err(Error::arg(format!(
                "weights sum to {total}, expected 1 within {}",
                crate::tolerances::WEIGHT_SUM_TOL
            )));
        }
        Ok(EmpiricalMeasure { dim, points, weights })
    }

    /// Equal-weight measure on the given points.
    pub fn equal(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("measure dimension must be at least 1"));
        }
        if points.is_empty() || points.len() % dim != 0 {
            return Err(Error::arg(format!(
                "points buffer of {} entries is not a positive multiple of dim {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    /// Phase-space lift of a state: points `(η_i, v_i) ∈ ℝ^{2d}`, equal
    /// weights.
    pub fn phase_lift(state: &PhaseState) -> Result<Self> {
        let d = state.dim;
        let mut points = Vec::with_capacity(state.n() * 2 * d);
        for i in 0..state.n() {
            points.extend_from_slice(state.eta_of(i));
            points.extend_from_slice(state.vel_of(i));
        }
        Self::equal(2 * d, points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn is_uniform(&self) -> bool {
        let w0 = 1.0 / self.n() as f64;
        self.weights.iter().all(|w| (w - w0).abs() <= UNIFORM_WEIGHT_TOL)
    }
}

fn validate_q(q: f64) -> Result<()> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::arg(format!("order q = {q} must lie in [1, ∞]")));
    }
    Ok(())
}

/// `Σ_i Σ_k (w_k/N) |a_i − b_k|^q` raised to `1/q`, or the pair maximum for
/// `q = ∞`. `a` is equal-weight with `n_a` points, `b` carries `weights`.
fn product_coupling_norm(
    a: &[f64],
    n_a: usize,
    b: &[f64],
    weights: &[f64],
    dim: usize,
    q: f64,
) -> f64 {
    let inv_n = 1.0 / n_a as f64;
    if q.is_infinite() {
        let mut worst = 0.0f64;
        for i in 0..n_a {
            let ai = &a[i * dim..(i + 1) * dim];
            for k in 0..weights.len() {
                let bk = &b[k * dim..(k + 1) * dim];
                let norm2: f64 = ai.iter().zip(bk).map(|(x, y)| (x - y) * (x - y)).sum();
                worst = worst.max(norm2);
            }
        }
        return worst.sqrt();
    }
    let mut acc = 0.0f64;
    for i in 0..n_a {
        let ai = &a[i * dim..(i + 1) * dim];
        for (k, &w) in weights.iter().enumerate() {
            let bk = &b[k * dim..(k + 1) * dim];
            let norm2: f64 = ai.iter().zip(bk).map(|(x, y)| (x - y) * (x - y)).sum();
            let cost = if q == 2.0 {
                norm2
            } else if q == 1.0 {
                norm2.sqrt()
            } else {
                norm2.powf(0.5 * q)
            };
            acc += w * cost;
        }
    }
    (inv_n * acc).powf(1.0 / q)
}

/// Modulated energies of a particle state against a reference state.
///
/// `ensemble` supplies the reference weights `w_k`; the particles are
/// equal-weight. Returns `(E_q(X), E_q(V))` under the product coupling.
///
/// # Errors
///
/// [`Error::Argument`] for mismatched dimensions, a reference state that
/// does not match the ensemble, or `q < 1`.
pub fn modulated_energy(
    particles: &PhaseState,
    reference: &PhaseState,
    ensemble: &AtomEnsemble,
    q: f64,
) -> Result<(f64, f64)> {
    validate_q(q)?;
    if particles.dim != reference.dim || reference.dim != ensemble.dim() {
        return Err(Error::arg(format!(
            "dimension mismatch: particles {}, reference {}, ensemble {}",
            particles.dim,
            reference.dim,
            ensemble.dim()
        )));
    }
    if reference.n() != ensemble.n() {
        return Err(Error::arg(format!(
            "reference state has {} atoms but the ensemble has {}",
            reference.n(),
            ensemble.n()
        )));
    }
    let d = particles.dim;
    let n = particles.n();
    let w = ensemble.weights();
    let e_x = product_coupling_norm(&particles.eta, n, &reference.eta, w, d, q);
    let e_v = product_coupling_norm(&particles.vel, n, &reference.vel, w, d, q);
    Ok((e_x, e_v))
}

/// Time series of modulated energies along a pair of trajectories sampled
/// on the same grid.
#[derive(Clone, Debug, Serialize)]
pub struct ModulatedReport {
    pub q: f64,
    pub times: Vec<f64>,
    pub e_x: Vec<f64>,
    pub e_v: Vec<f64>,
    /// `sup_t E_q(X)` over the samples.
    pub sup_e_x: f64,
    /// `sup_t E_q(V)` over the samples.
    pub sup_e_v: f64,
    /// `sup_t (E_q(X) + E_q(V))` over the samples.
    pub sup_combined: f64,
    pub initial_e_x: f64,
    pub initial_e_v: f64,
}

/// Evaluates the modulated energies at every retained sample of a particle
/// trajectory against a reference trajectory.
///
/// Both trajectories must carry the same number of samples at matching
/// times (same step size and stride).
///
/// # Errors
///
/// [`Error::Argument`] if the sample grids disagree or the dimensions are
/// inconsistent.
pub fn modulated_series(
    particles: &Trajectory,
    reference: &Trajectory,
    ensemble: &AtomEnsemble,
    q: f64,
) -> Result<ModulatedReport> {
    validate_q(q)?;
    if particles.samples.len() != reference.samples.len() {
        return Err(Error::arg(format!(
            "trajectories carry {} and {} samples; they must be integrated on the same grid",
            particles.samples.len(),
            reference.samples.len()
        )));
    }
    if particles.samples.is_empty() {
        return Err(Error::arg("trajectories carry no samples"));
    }
    let mut times = Vec::with_capacity(particles.samples.len());
    let mut e_x = Vec::with_capacity(particles.samples.len());
    let mut e_v = Vec::with_capacity(particles.samples.len());
    for (ps, rs) in particles.samples.iter().zip(&reference.samples) {
        let (tp, tr) = (ps.state.t, rs.state.t);
        if (tp - tr).abs() > 1e-9 * (1.0 + tp.abs()) {
            return Err(Error::arg(format!(
                "sample times diverge: particle {tp} vs reference {tr}"
            )));
        }
        let (ex, ev) = modulated_energy(&ps.state, &rs.state, ensemble, q)?;
        times.push(tp);
        e_x.push(ex);
        e_v.push(ev);
    }
    let sup_e_x = e_x.iter().fold(0.0f64, |a, &b| a.max(b));
    let sup_e_v = e_v.iter().fold(0.0f64, |a, &b| a.max(b));
    let sup_combined = e_x
        .iter()
        .zip(&e_v)
        .fold(0.0f64, |a, (&x, &v)| a.max(x + v));
    Ok(ModulatedReport {
        q,
        initial_e_x: e_x[0],
        initial_e_v: e_v[0],
        times,
        e_x,
        e_v,
        sup_e_x,
        sup_e_v,
        sup_combined,
    })
}

/// Exact q-Wasserstein distance between two measures on the line via the
/// merged-CDF quantile coupling. Supports general weights and `q = ∞`
/// (maximum displacement under the monotone coupling).
///
/// # Errors
///
/// [`Error::Unsupported`] off the line; [`Error::Argument`] for `q < 1`.
pub fn wasserstein_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, q: f64) -> Result<f64> {
    validate_q(q)?;
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::unsupported(
            "the quantile coupling is exact only on the line; use the assignment solver in higher dimension",
        ));
    }

    let sorted = |m: &EmpiricalMeasure| -> (Vec<f64>, Vec<f64>) {
        let mut order: Vec<usize> = (0..m.n()).collect();
        order.sort_by(|&a, &b| m.points[a].partial_cmp(&m.points[b]).expect("finite points"));
        let xs: Vec<f64> = order.iter().map(|&i| m.points[i]).collect();
        let mut cum = 0.0;
        let cdf: Vec<f64> = order
            .iter()
            .map(|&i| {
                cum += m.weights[i];
                cum
            })
            .collect();
        (xs, cdf)
    };
    let (xa, ca) = sorted(mu);
    let (xb, cb) = sorted(nu);

    // Merge the two CDFs; each interval between consecutive levels couples
    // one quantile of μ with one of ν.
    let mut levels: Vec<f64> = ca.iter().chain(cb.iter()).copied().collect();
    levels.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));
    levels.dedup();

    let (mut ia, mut ib) = (0usize, 0usize);
    let mut prev = 0.0f64;
    let mut acc = 0.0f64;
    let mut worst = 0.0f64;
    for &level in &levels {
        let mass = level - prev;
        if mass > 0.0 {
            while ia + 1 < xa.len() && ca[ia] <= prev {
                ia += 1;
            }
            while ib + 1 < xb.len() && cb[ib] <= prev {
                ib += 1;
            }
            let gap = (xa[ia] - xb[ib]).abs();
            if q.is_infinite() {
                worst = worst.max(gap);
            } else if q == 1.0 {
                acc += mass * gap;
            } else if q == 2.0 {
                acc += mass * gap * gap;
            } else {
                acc += mass * gap.powf(q);
            }
            prev = level;
        }
    }
    Ok(if q.is_infinite() { worst } else { acc.powf(1.0 / q) })
}

fn validate_exact_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<usize> {
    if mu.dim() != nu.dim() {
        return Err(Error::arg(format!(
            "dimension mismatch: {} vs {}",
            mu.dim(),
            nu.dim()
        )));
    }
    if mu.n() != nu.n() {
        return Err(Error::arg(format!(
            "exact transport requires equal sizes, got {} vs {}",
            mu.n(),
            nu.n()
        )));
    }
    if mu.n() > EXACT_TRANSPORT_LIMIT {
        return Err(Error::arg(format!(
            "exact transport is limited to {EXACT_TRANSPORT_LIMIT} points, got {}",
            mu.n()
        )));
    }
    if !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::arg(
            "exact transport requires equal weights on both sides",
        ));
    }
    Ok(mu.n())
}

/// Exact q-Wasserstein distance (finite `q`) between equal-size
/// equal-weight measures, by optimal assignment on the cost `|x − y|^q`.
///
/// # Errors
///
/// [`Error::Argument`] for size mismatch, more than
/// [`EXACT_TRANSPORT_LIMIT`] points, non-uniform weights, or `q < 1`;
/// infinite `q` is rejected (use [`wasserstein_infty`]).
pub fn wasserstein_exact(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, q: f64) -> Result<f64> {
    validate_q(q)?;
    if q.is_infinite() {
        return Err(Error::arg(
            "q = ∞ is a bottleneck problem; use wasserstein_infty",
        ));
    }
    let n = validate_exact_pair(mu, nu)?;
    let dim = mu.dim();
    let mut cost = vec![0.0f64; n * n];
    for i in 0..n {
        let x = mu.point(i);
        for j in 0..n {
            let y = nu.point(j);
            let norm2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            cost[i * n + j] = if q == 2.0 {
                norm2
            } else if q == 1.0 {
                norm2.sqrt()
            } else {
                norm2.powf(0.5 * q)
            };
            let _ = dim;
        }
    }
    let (_, total) = min_cost_assignment(&cost, n);
    Ok((total / n as f64).powf(1.0 / q))
}

/// Exact ∞-Wasserstein (bottleneck) distance between equal-size
/// equal-weight measures: the smallest achievable maximum displacement
/// over perfect matchings.
///
/// # Errors
///
/// As [`wasserstein_exact`], minus the order argument.
pub fn wasserstein_infty(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    let n = validate_exact_pair(mu, nu)?;
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        let x = mu.point(i);
        for j in 0..n {
            let y = nu.point(j);
            let norm2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            dist[i * n + j] = norm2.sqrt();
        }
    }
    Ok(bottleneck_assignment(&dist, n))
}

/// Product bound on the phase-space Wasserstein distance, optionally
/// checked against the exact assignment value.
#[derive(Clone, Debug, Serialize)]
pub struct ProductBoundReport {
    /// `2^{1−1/q} (E_q(X)^q + E_q(V)^q)^{1/q}` (for `q = ∞`:
    /// `2 max{E_∞(X), E_∞(V)}`).
    pub bound: f64,
    /// Exact phase-space distance between the particle empirical and the
    /// reference lift `{(η_k, v_k)}`, when sizes and weights permit the
    /// assignment solver.
    pub exact: Option<f64>,
}

/// Bounds the phase-space q-Wasserstein distance between the particle
/// empirical measure and the mono-kinetic reference lift by the modulated
/// energies, and computes the exact distance when the point counts agree,
/// stay within [`EXACT_TRANSPORT_LIMIT`], and the reference weights are
/// uniform.
///
/// When `snapshot` is supplied it certifies that the reference is
/// mono-kinetic: every spatial cell must hold exactly one atom (singleton
/// fibres), otherwise the lift `{(η_k, v_k)}` does not represent a graph
/// measure and the comparison is refused.
///
/// # Errors
///
/// [`Error::Argument`] for inconsistent inputs or a snapshot with merged
/// fibres.
pub fn phase_space_product_bound(
    particles: &PhaseState,
    reference: &PhaseState,
    ensemble: &AtomEnsemble,
    snapshot: Option<&EulerianSnapshot>,
    q: f64,
) -> Result<ProductBoundReport> {
    let (e_x, e_v) = modulated_energy(particles, reference, ensemble, q)?;
    if let Some(snap) = snapshot {
        if snap.cells.len() != reference.n() {
            return Err(Error::arg(format!(
                "snapshot has {} cells for {} atoms; singleton fibres are required \
                 for the mono-kinetic comparison",
                snap.cells.len(),
                reference.n()
            )));
        }
    }
    let bound = if q.is_infinite() {
        2.0 * e_x.max(e_v)
    } else {
        2.0f64.powf(1.0 - 1.0 / q) * (e_x.powf(q) + e_v.powf(q)).powf(1.0 / q)
    };
    let sizes_permit = particles.n() == reference.n()
        && particles.n() <= EXACT_TRANSPORT_LIMIT
        && {
            let w0 = 1.0 / ensemble.n() as f64;
            ensemble
                .weights()
                .iter()
                .all(|w| (w - w0).abs() <= UNIFORM_WEIGHT_TOL)
        };
    let exact = if sizes_permit {
        let mu = EmpiricalMeasure::phase_lift(particles)?;
        let nu = EmpiricalMeasure::phase_lift(reference)?;
        Some(if q.is_infinite() {
            wasserstein_infty(&mu, &nu)?
        } else {
            wasserstein_exact(&mu, &nu, q)?
        })
    } else {
        None
    };
    Ok(ProductBoundReport { bound, exact })
}

/// Bound and lower estimate for the momentum-density discrepancy in the
/// bounded-Lipschitz metric.
#[derive(Clone, Debug, Serialize)]
pub struct MomentumBoundReport {
    /// `((1/N) Σ_i |v_i|^{q/(q−1)})^{1−1/q} E_q(X) + E_q(V)`.
    pub rhs_bound: f64,
    /// Best value of `|∫ φ · d(m − m^N)|` over the built-in dictionary of
    /// 64 test fields with `max{‖φ‖_∞, Lip(φ)} ≤ 1`. A lower estimate of
    /// the metric, not the metric itself.
    pub lower_estimate: f64,
}

/// A scalar test shape paired with an output axis: φ(x) = ψ(x) e_axis.
struct TestField {
    axis: usize,
    shape: Shape,
}

enum Shape {
    /// clamp(⟨x, dir⟩ − center, −1, 1); 1-Lipschitz with sup 1.
    Ramp { dir: Vec<f64>, center: f64 },
    /// sin(ω ⟨x, dir⟩ + phase) / max(1, ω); Lipschitz and sup ≤ 1.
    Sinusoid { dir: Vec<f64>, omega: f64, phase: f64 },
    /// Piecewise-linear in ⟨x, dir⟩ with slopes in [−1, 1] and values in
    /// [−1, 1], constant outside the node range.
    PiecewiseLinear { dir: Vec<f64>, left: f64, spacing: f64, values: Vec<f64> },
}

impl TestField {
    fn eval_scalar(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Ramp { dir, center } => {
                let s: f64 = x.iter().zip(dir).map(|(a, b)| a * b).sum();
                (s - center).clamp(-1.0, 1.0)
            }
            Shape::Sinusoid { dir, omega, phase } => {
                let s: f64 = x.iter().zip(dir).map(|(a, b)| a * b).sum();
                (omega * s + phase).sin() / omega.max(1.0)
            }
            Shape::PiecewiseLinear { dir, left, spacing, values } => {
                let s: f64 = x.iter().zip(dir).map(|(a, b)| a * b).sum();
                let pos = (s - left) / spacing;
                if pos <= 0.0 {
                    values[0]
                } else if pos >= (values.len() - 1) as f64 {
                    *values.last().expect("nodes are non-empty")
                } else {
                    let cell = pos.floor() as usize;
                    let frac = pos - cell as f64;
                    values[cell] + frac * (values[cell + 1] - values[cell])
                }
            }
        }
    }
}

/// The deterministic 64-field dictionary. The first `d²` entries are the
/// pure coordinate ramps clamp(x_c, −1, 1) e_a over all (axis, coordinate)
/// pairs, so simple displacements are always detected; the remainder
/// alternates clamped sinusoids and seeded random piecewise-linear shapes.
fn test_dictionary(dim: usize) -> Vec<TestField> {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DICTIONARY_SIZE: usize = 64;
    let mut fields = Vec::with_capacity(DICTIONARY_SIZE);
    'outer: for axis in 0..dim {
        for coord in 0..dim {
            let mut dir = vec![0.0; dim];
            dir[coord] = 1.0;
            fields.push(TestField { axis, shape: Shape::Ramp { dir, center: 0.0 } });
            if fields.len() == DICTIONARY_SIZE {
                break 'outer;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x6d6f6d5f626c);
    let random_dir = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 1e-3 {
                return v.iter().map(|c| c / norm).collect();
            }
        }
    };
    let mut kind = 0usize;
    while fields.len() < DICTIONARY_SIZE {
        let axis = fields.len() % dim;
        let shape = match kind % 3 {
            0 => Shape::Ramp {
                dir: random_dir(&mut rng),
                center: rng.random_range(-2.0..2.0),
            },
            1 => Shape::Sinusoid {
                dir: random_dir(&mut rng),
                omega: rng.random_range(0.5..3.0),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            },
            _ => {
                let dir = random_dir(&mut rng);
                let nodes = 9;
                let mut values = Vec::with_capacity(nodes);
                let mut v = rng.random_range(-1.0..1.0);
                values.push(v);
                let spacing = 1.0;
                for _ in 1..nodes {
                    let slope: f64 = rng.random_range(-1.0..1.0);
                    v = (v + slope * spacing).clamp(-1.0, 1.0);
                    values.push(v);
                }
                Shape::PiecewiseLinear { dir, left: -4.0, spacing, values }
            }
        };
        fields.push(TestField { axis, shape });
        kind += 1;
    }
    fields
}

/// Bounds the bounded-Lipschitz discrepancy between the particle momentum
/// density `m^N = (1/N) Σ_i v_i δ_{x_i}` and the reference momentum density
/// `m = Σ_k w_k v_k δ_{η_k}` by the modulated energies, and reports the
/// best dictionary value as a certified lower estimate.
///
/// # Errors
///
/// [`Error::Unsupported`] for `q = 1` (the Hölder exponent degenerates);
/// [`Error::Argument`] for inconsistent inputs.
pub fn bl_momentum_bound(
    particles: &PhaseState,
    reference: &PhaseState,
    ensemble: &AtomEnsemble,
    q: f64,
) -> Result<MomentumBoundReport> {
    validate_q(q)?;
    if q == 1.0 {
        return Err(Error::unsupported(
            "the momentum bound needs q > 1: the conjugate exponent q/(q−1) degenerates at q = 1",
        ));
    }
    let (e_x, e_v) = modulated_energy(particles, reference, ensemble, q)?;
    let d = particles.dim;
    let n = particles.n();

    let moment = if q.is_infinite() {
        // q' = 1: plain mean speed.
        (0..n)
            .map(|i| {
                let v = particles.vel_of(i);
                v.iter().map(|c| c * c).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / n as f64
    } else {
        let q_conj = q / (q - 1.0);
        let mean = (0..n)
            .map(|i| {
                let v = particles.vel_of(i);
                v.iter().map(|c| c * c).sum::<f64>().sqrt().powf(q_conj)
            })
            .sum::<f64>()
            / n as f64;
        mean.powf(1.0 - 1.0 / q)
    };
    let rhs_bound = moment * e_x + e_v;

    let mut lower = 0.0f64;
    for field in test_dictionary(d) {
        let mut pairing = 0.0;
        for k in 0..reference.n() {
            pairing += ensemble.weights()[k]
                * field.eval_scalar(reference.eta_of(k))
                * reference.vel_of(k)[field.axis];
        }
        for i in 0..n {
            pairing -= field.eval_scalar(particles.eta_of(i)) * particles.vel_of(i)[field.axis]
                / n as f64;
        }
        lower = lower.max(pairing.abs());
    }
    Ok(MomentumBoundReport { rhs_bound, lower_estimate: lower })
}

/// Scenario for [`stability_experiment`]: the reference quadrature, the
/// particle sampling law, shared dynamics, and integration controls.
#[derive(Clone, Debug)]
pub struct StabilityScenario {
    /// Reference atom quadrature (fixed across all experiment cells).
    pub reference: EnsembleSpec,
    /// Seed used to realize the reference when its spec is random.
    pub reference_seed: u64,
    /// Sampling law for the particles; its count field is overridden by
    /// each N of the sweep. A `Grid` spec is accepted only when its count
    /// already equals N (matched, non-random initialization).
    pub particle_law: EnsembleSpec,
    pub dim: usize,
    /// Initial velocity profile, applied to both systems.
    pub u0: VelocityField,
    pub kernel: Kernel,
    pub coupling: CouplingParams,
    /// Step size; `None` derives one from the kernel, coupling, and initial
    /// speed. Both systems always share the same grid.
    pub dt: Option<f64>,
    /// Retain every `sample_stride`-th step for the energy series.
    pub sample_stride: usize,
}

/// One cell of the stability sweep.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityRow {
    pub n: usize,
    pub seed: u64,
    /// `sup_t (E_q(X) + E_q(V))`.
    pub sup_combined: f64,
    /// `E_q(X)(0) + E_q(V)(0)`.
    pub initial_combined: f64,
    /// `sup / initial`; an exactly-matched run (0/0) reports 1.
    pub ratio: f64,
    /// `E_q(V)(horizon) / E_q(V)(0)` with the same 0/0 convention.
    pub terminal_velocity_ratio: f64,
    /// Wall-clock seconds spent on this cell (sampling + both energy
    /// passes; the reference simulation is shared and excluded).
    pub wall_time_s: f64,
}

fn respec_with_count(law: &EnsembleSpec, n: usize, dim: usize) -> Result<EnsembleSpec> {
    match law {
        EnsembleSpec::UniformBall { radius, .. } => {
            Ok(EnsembleSpec::UniformBall { radius: *radius, n })
        }
        EnsembleSpec::GaussianTruncated { sigma, radius, .. } => {
            Ok(EnsembleSpec::GaussianTruncated { sigma: *sigma, radius: *radius, n })
        }
        EnsembleSpec::Grid { .. } if law.count(dim) == n => Ok(law.clone()),
        EnsembleSpec::Grid { .. } => Err(Error::arg(format!(
            "a grid particle law is only usable at its own count {} (requested {n})",
            law.count(dim)
        ))),
        EnsembleSpec::File { .. } => Err(Error::arg(
            "particles must be sampled from a density; a file is not a sampling law",
        )),
    }
}

/// Samples N particles i.i.d. from the particle law, assigns initial
/// velocities from the scenario profile, and shifts them uniformly so the
/// particle mean velocity equals `reference_momentum`.
pub(crate) fn sample_matched_particles(
    scenario: &StabilityScenario,
    n: usize,
    seed: u64,
    reference_momentum: &[f64],
) -> Result<(AtomEnsemble, Vec<f64>)> {
    let law = respec_with_count(&scenario.particle_law, n, scenario.dim)?;
    let particles = sample_ensemble(&law, scenario.dim, seed)?;
    let mut u0 = scenario.u0.eval_all(particles.positions(), scenario.dim);
    let d = scenario.dim;
    let mut mean = vec![0.0f64; d];
    for chunk in u0.chunks_exact(d) {
        for (m, &c) in mean.iter_mut().zip(chunk) {
            *m += c;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    for chunk in u0.chunks_exact_mut(d) {
        for a in 0..d {
            chunk[a] += reference_momentum[a] - mean[a];
        }
    }
    Ok((particles, u0))
}

fn weighted_momentum(ensemble: &AtomEnsemble, velocities: &[f64], dim: usize) -> Vec<f64> {
    let mut momentum = vec![0.0f64; dim];
    for (k, chunk) in velocities.chunks_exact(dim).enumerate() {
        let w = ensemble.weights()[k];
        for (m, &c) in momentum.iter_mut().zip(chunk) {
            *m += w * c;
        }
    }
    momentum
}

fn safe_ratio(numerator: f64, denominator: f64) -> f64 {
    if numerator == 0.0 && denominator == 0.0 {
        1.0
    } else {
        numerator / denominator
    }
}

/// Runs the (N, seed) stability sweep: simulate the reference quadrature
/// once, then for every cell sample momentum-matched particles, integrate
/// them on the same grid, and record the modulated-energy ratios.
///
/// # Errors
///
/// Propagates sampling, validation, and integration errors; a blow-up in
/// any cell aborts the sweep.
pub fn stability_experiment(
    scenario: &StabilityScenario,
    n_grid: &[usize],
    seeds: &[u64],
    q: f64,
    horizon: f64,
) -> Result<Vec<StabilityRow>> {
    validate_q(q)?;
    if n_grid.is_empty() || seeds.is_empty() {
        return Err(Error::arg("the sweep needs at least one N and one seed"));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::arg(format!("horizon {horizon} must be positive")));
    }

    let dim = scenario.dim;
    let reference = match &scenario.reference {
        EnsembleSpec::File { .. } => {
            return Err(Error::arg(
                "file-backed references are loaded by the runner, not the experiment",
            ))
        }
        spec => sample_ensemble(spec, dim, scenario.reference_seed)?,
    };
    let ref_u0 = scenario.u0.eval_all(reference.positions(), dim);
    let ref_momentum = weighted_momentum(&reference, &ref_u0, dim);

    let u0_sup = ref_u0
        .chunks_exact(dim)
        .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let dt = scenario
        .dt
        .unwrap_or_else(|| default_timestep(&scenario.kernel, &scenario.coupling, u0_sup));
    let opts = SimOptions {
        dt,
        horizon,
        sample_stride: scenario.sample_stride,
        grad_u0: None,
        track_diameters: false,
    };
    let ref_traj = simulate(&reference, &ref_u0, &scenario.kernel, &scenario.coupling, &opts)?;

    let mut rows = Vec::with_capacity(n_grid.len() * seeds.len());
    for &n in n_grid {
        for &seed in seeds {
            let start = Instant::now();
            let (particles, u0) = sample_matched_particles(scenario, n, seed, &ref_momentum)?;
            let traj = simulate(&particles, &u0, &scenario.kernel, &scenario.coupling, &opts)?;
            let report = modulated_series(&traj, &ref_traj, &reference, q)?;
            let initial = report.initial_e_x + report.initial_e_v;
            let terminal_v = *report.e_v.last().expect("series is non-empty");
            rows.push(StabilityRow {
                n,
                seed,
                sup_combined: report.sup_combined,
                initial_combined: initial,
                ratio: safe_ratio(report.sup_combined, initial),
                terminal_velocity_ratio: safe_ratio(terminal_v, report.initial_e_v),
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::euler::{disintegrate, eulerian_snapshot};

    fn state_1d(t: f64, eta: &[f64], vel: &[f64]) -> PhaseState {
        PhaseState::new(t, 1, eta.to_vec(), vel.to_vec()).unwrap()
    }

    fn measure_1d(points: &[f64], weights: Option<&[f64]>) -> EmpiricalMeasure {
        match weights {
            Some(w) => EmpiricalMeasure::new(1, points.to_vec(), w.to_vec()).unwrap(),
            None => EmpiricalMeasure::equal(1, points.to_vec()).unwrap(),
        }
    }

    #[test]
    fn modulated_energy_single_pair_is_the_distance() {
        let particles = state_1d(0.0, &[0.0], &[0.0]);
        let reference = state_1d(0.0, &[1.0], &[0.5]);
        let ensemble = AtomEnsemble::equal_weights(1, vec![1.0]).unwrap();
        let (ex, ev) = modulated_energy(&particles, &reference, &ensemble, 2.0).unwrap();
        assert_eq!(ex, 1.0);
        assert_eq!(ev, 0.5);
    }

    #[test]
    fn modulated_energy_double_sum_two_particles_one_atom() {
        let particles = state_1d(0.0, &[0.0, 2.0], &[0.0, 0.0]);
        let reference = state_1d(0.0, &[1.0], &[0.0]);
        let ensemble = AtomEnsemble::equal_weights(1, vec![1.0]).unwrap();
        let (ex, _) = modulated_energy(&particles, &reference, &ensemble, 2.0).unwrap();
        // ((1/2)(|0−1|² + |2−1|²))^{1/2} = 1.
        assert!((ex - 1.0).abs() <= 1e-15);
        let (ex_inf, _) = modulated_energy(&particles, &reference, &ensemble, f64::INFINITY).unwrap();
        assert_eq!(ex_inf, 1.0);
    }

    #[test]
    fn modulated_energy_matched_single_site_vanishes() {
        let particles = state_1d(0.0, &[0.3], &[0.7]);
        let reference = state_1d(0.0, &[0.3], &[0.7]);
        let ensemble = AtomEnsemble::equal_weights(1, vec![0.3]).unwrap();
        for q in [1.0, 2.0, f64::INFINITY] {
            let (ex, ev) = modulated_energy(&particles, &reference, &ensemble, q).unwrap();
            assert_eq!((ex, ev), (0.0, 0.0));
        }
    }

    #[test]
    fn modulated_energy_is_monotone_in_q() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(1..=8);
            let m = rng.random_range(1..=8);
            let d = rng.random_range(1..=3);
            let particles = PhaseState::new(
                0.0,
                d,
                (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let reference = PhaseState::new(
                0.0,
                d,
                (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let ensemble = AtomEnsemble::new(
                d,
                reference.eta.clone(),
                raw.iter().map(|w| w / total).collect(),
            )
            .unwrap();
            let orders = [1.0, 1.5, 2.0, 3.0, 8.0, f64::INFINITY];
            let mut prev = (0.0, 0.0);
            for (idx, &q) in orders.iter().enumerate() {
                let e = modulated_energy(&particles, &reference, &ensemble, q).unwrap();
                if idx > 0 {
                    assert!(
                        e.0 >= prev.0 * (1.0 - 1e-12) && e.1 >= prev.1 * (1.0 - 1e-12),
                        "power mean must grow with q: {prev:?} then {e:?} at q = {q}"
                    );
                }
                prev = e;
            }
        }
    }

    #[test]
    fn wasserstein_1d_matches_hand_example_at_all_orders() {
        let mu = measure_1d(&[0.0, 1.0], None);
        let nu = measure_1d(&[0.0, 2.0], None);
        assert!((wasserstein_1d(&mu, &nu, 1.0).unwrap() - 0.5).abs() <= 1e-15);
        assert!(
            (wasserstein_1d(&mu, &nu, 2.0).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs()
                <= 1e-15
        );
        assert_eq!(wasserstein_1d(&mu, &nu, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn wasserstein_1d_handles_general_weights() {
        // All of μ's mass sits at 0; ν puts 3/4 at 1, so W₁ = 3/4 · 1.
        let mu = measure_1d(&[0.0], Some(&[1.0]));
        let nu = measure_1d(&[0.0, 1.0], Some(&[0.25, 0.75]));
        assert!((wasserstein_1d(&mu, &nu, 1.0).unwrap() - 0.75).abs() <= 1e-15);
        // q = 2: (0.75 · 1²)^{1/2}.
        assert!((wasserstein_1d(&mu, &nu, 2.0).unwrap() - 0.75f64.sqrt()).abs() <= 1e-15);
        assert_eq!(wasserstein_1d(&mu, &nu, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn wasserstein_1d_rejects_higher_dimension() {
        let mu = EmpiricalMeasure::equal(2, vec![0.0, 0.0]).unwrap();
        let nu = EmpiricalMeasure::equal(2, vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            wasserstein_1d(&mu, &nu, 2.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn wasserstein_exact_two_point_plane_example() {
        let mu = EmpiricalMeasure::equal(2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let nu = EmpiricalMeasure::equal(2, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        // Vertical matching costs 1 per point; the crossed matching √2.
        assert!((wasserstein_exact(&mu, &nu, 2.0).unwrap() - 1.0).abs() <= 1e-15);
        assert!((wasserstein_infty(&mu, &nu).unwrap() - 1.0).abs() <= 1e-15);
        assert_eq!(wasserstein_exact(&mu, &mu, 2.0).unwrap(), 0.0);
        assert_eq!(wasserstein_infty(&mu, &mu).unwrap(), 0.0);
    }

    #[test]
    fn exact_solvers_agree_with_quantile_formulas_on_the_line() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let n = rng.random_range(1..=24);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mu = measure_1d(&xs, None);
            let nu = measure_1d(&ys, None);
            let q = [1.0, 2.0, 3.5][trial % 3];
            let exact = wasserstein_exact(&mu, &nu, q).unwrap();
            let quantile = wasserstein_1d(&mu, &nu, q).unwrap();
            assert!(
                (exact - quantile).abs() <= 1e-10 * (1.0 + quantile),
                "trial {trial}: assignment {exact} vs quantile {quantile}"
            );
            let bottleneck = wasserstein_infty(&mu, &nu).unwrap();
            let quantile_inf = wasserstein_1d(&mu, &nu, f64::INFINITY).unwrap();
            assert!(
                (bottleneck - quantile_inf).abs() <= 1e-12 * (1.0 + quantile_inf),
                "trial {trial}: bottleneck {bottleneck} vs quantile {quantile_inf}"
            );
        }
    }

    #[test]
    fn wasserstein_distances_are_symmetric_and_triangular() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.random_range(2..=10);
            let d = rng.random_range(1..=3);
            let mut draw = || -> EmpiricalMeasure {
                EmpiricalMeasure::equal(
                    d,
                    (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect(),
                )
                .unwrap()
            };
            let (a, b, c) = (draw(), draw(), draw());
            for q in [1.0, 2.0, 3.0] {
                let ab = wasserstein_exact(&a, &b, q).unwrap();
                let ba = wasserstein_exact(&b, &a, q).unwrap();
                let ac = wasserstein_exact(&a, &c, q).unwrap();
                let cb = wasserstein_exact(&c, &b, q).unwrap();
                assert!((ab - ba).abs() <= 1e-10 * (1.0 + ab));
                assert!(ab <= ac + cb + 1e-10 * (1.0 + ab));
            }
            let ab = wasserstein_infty(&a, &b).unwrap();
            let ba = wasserstein_infty(&b, &a).unwrap();
            let ac = wasserstein_infty(&a, &c).unwrap();
            let cb = wasserstein_infty(&c, &b).unwrap();
            assert!((ab - ba).abs() <= 1e-10 * (1.0 + ab));
            assert!(ab <= ac + cb + 1e-10 * (1.0 + ab));
        }
    }

    #[test]
    fn exact_transport_validates_its_preconditions() {
        let mu = EmpiricalMeasure::equal(1, vec![0.0, 1.0]).unwrap();
        let nu = EmpiricalMeasure::equal(1, vec![0.0]).unwrap();
        assert!(wasserstein_exact(&mu, &nu, 2.0).is_err());
        let skew = EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![0.3, 0.7]).unwrap();
        assert!(wasserstein_exact(&mu, &skew, 2.0).is_err());
        assert!(wasserstein_exact(&mu, &mu, f64::INFINITY).is_err());
    }

    #[test]
    fn product_bound_dominates_exact_phase_distance() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let (n, d) = (32, 2);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            PhaseState::new(
                0.0,
                d,
                (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let particles = mk(&mut rng);
        let reference = mk(&mut rng);
        let ensemble = AtomEnsemble::equal_weights(d, reference.eta.clone()).unwrap();
        for q in [1.0, 2.0, f64::INFINITY] {
            let report =
                phase_space_product_bound(&particles, &reference, &ensemble, None, q).unwrap();
            let exact = report.exact.expect("sizes permit the exact comparison");
            assert!(
                exact <= report.bound * (1.0 + 1e-12),
                "q = {q}: exact {exact} vs bound {}",
                report.bound
            );
        }
    }

    #[test]
    fn product_bound_matched_systems_vanish() {
        let particles = state_1d(0.0, &[0.4], &[-0.2]);
        let ensemble = AtomEnsemble::equal_weights(1, vec![0.4]).unwrap();
        let report =
            phase_space_product_bound(&particles, &particles, &ensemble, None, 2.0).unwrap();
        assert_eq!(report.bound, 0.0);
        assert_eq!(report.exact, Some(0.0));
    }

    #[test]
    fn product_bound_rejects_merged_fibres() {
        // Two atoms in one coarse cell: the reference is not mono-kinetic.
        let reference = state_1d(0.0, &[0.0, 0.4], &[1.0, -1.0]);
        let ensemble = AtomEnsemble::equal_weights(1, vec![0.0, 0.4]).unwrap();
        let dis = disintegrate(&reference, &ensemble, 2.0).unwrap();
        let merged = eulerian_snapshot(&reference, &ensemble, &dis).unwrap();
        let particles = state_1d(0.0, &[0.1, 0.2], &[0.0, 0.0]);
        assert!(phase_space_product_bound(
            &particles,
            &reference,
            &ensemble,
            Some(&merged),
            2.0
        )
        .is_err());

        // Fine cells separate the atoms; the same call goes through.
        let fine = disintegrate(&reference, &ensemble, 0.25).unwrap();
        let split = eulerian_snapshot(&reference, &ensemble, &fine).unwrap();
        assert!(phase_space_product_bound(
            &particles,
            &reference,
            &ensemble,
            Some(&split),
            2.0
        )
        .is_ok());
    }

    #[test]
    fn momentum_bound_hand_example_is_sharp() {
        // One particle at δ, one atom at 0, both with unit velocity along
        // the offset axis: rhs = 1 · δ + 0 and the pure ramp attains δ.
        let delta = 0.3;
        let particles = state_1d(0.0, &[delta], &[1.0]);
        let reference = state_1d(0.0, &[0.0], &[1.0]);
        let ensemble = AtomEnsemble::equal_weights(1, vec![0.0]).unwrap();
        let report = bl_momentum_bound(&particles, &reference, &ensemble, 2.0).unwrap();
        assert!((report.rhs_bound - delta).abs() <= 1e-15);
        assert!((report.lower_estimate - delta).abs() <= 1e-12);
        assert!(report.lower_estimate <= report.rhs_bound + 1e-15);
    }

    #[test]
    fn momentum_bound_matched_systems_vanish() {
        // A single shared site makes every coupling term zero.
        let site = state_1d(0.0, &[0.1], &[0.5]);
        let ensemble = AtomEnsemble::equal_weights(1, vec![0.1]).unwrap();
        let report = bl_momentum_bound(&site, &site, &ensemble, 2.0).unwrap();
        assert_eq!(report.rhs_bound, 0.0);
        assert_eq!(report.lower_estimate, 0.0);

        // With several shared sites the momentum measures still coincide,
        // so the certified estimate is zero even though the product
        // coupling keeps the right-hand bound positive.
        let spread = state_1d(0.0, &[0.1, -0.4], &[0.5, 0.5]);
        let spread_ens = AtomEnsemble::equal_weights(1, vec![0.1, -0.4]).unwrap();
        let report = bl_momentum_bound(&spread, &spread, &spread_ens, 2.0).unwrap();
        assert!(report.lower_estimate <= 1e-15);
        assert!(report.rhs_bound > 0.0);
    }

    #[test]
    fn momentum_bound_rejects_first_order() {
        let state = state_1d(0.0, &[0.0], &[1.0]);
        let ensemble = AtomEnsemble::equal_weights(1, vec![0.0]).unwrap();
        assert!(matches!(
            bl_momentum_bound(&state, &state, &ensemble, 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn momentum_bound_holds_along_a_random_run() {
        let scenario = small_scenario();
        let reference = sample_ensemble(&scenario.reference, 2, scenario.reference_seed).unwrap();
        let ref_u0 = scenario.u0.eval_all(reference.positions(), 2);
        let ref_mom = weighted_momentum(&reference, &ref_u0, 2);
        let (particles, u0) = sample_matched_particles(&scenario, 16, 5, &ref_mom).unwrap();
        let opts = SimOptions {
            dt: 0.05,
            horizon: 2.0,
            sample_stride: 8,
            grad_u0: None,
            track_diameters: false,
        };
        let ref_traj =
            simulate(&reference, &ref_u0, &scenario.kernel, &scenario.coupling, &opts).unwrap();
        let traj =
            simulate(&particles, &u0, &scenario.kernel, &scenario.coupling, &opts).unwrap();
        for (ps, rs) in traj.samples.iter().zip(&ref_traj.samples) {
            for q in [2.0, f64::INFINITY] {
                let report =
                    bl_momentum_bound(&ps.state, &rs.state, &reference, q).unwrap();
                assert!(
                    report.lower_estimate <= report.rhs_bound * (1.0 + 1e-12),
                    "t = {}: lower {} vs rhs {}",
                    ps.state.t,
                    report.lower_estimate,
                    report.rhs_bound
                );
            }
            let bound2 =
                phase_space_product_bound(&ps.state, &rs.state, &reference, None, 2.0).unwrap();
            if let Some(exact) = bound2.exact {
                assert!(exact <= bound2.bound * (1.0 + 1e-12));
            }
        }
    }

    fn small_scenario() -> StabilityScenario {
        StabilityScenario {
            reference: EnsembleSpec::UniformBall { radius: 1.0, n: 16 },
            reference_seed: 902,
            particle_law: EnsembleSpec::UniformBall { radius: 1.0, n: 1 },
            dim: 2,
            u0: VelocityField::Sinusoid {
                amplitude: vec![0.4, 0.4],
                frequency: vec![1.0, 1.0],
                phase: vec![],
            },
            kernel: Kernel::PowerLaw { beta: 0.5 },
            coupling: CouplingParams::new(2.0, 1.0).unwrap(),
            dt: Some(0.05),
            sample_stride: 8,
        }
    }

    #[test]
    fn stability_experiment_keeps_momenta_matched() {
        let scenario = small_scenario();
        let reference = sample_ensemble(&scenario.reference, 2, scenario.reference_seed).unwrap();
        let ref_u0 = scenario.u0.eval_all(reference.positions(), 2);
        let ref_mom = weighted_momentum(&reference, &ref_u0, 2);
        let (particles, u0) = sample_matched_particles(&scenario, 24, 3, &ref_mom).unwrap();

        let part_mom = weighted_momentum(&particles, &u0, 2);
        for a in 0..2 {
            assert!((part_mom[a] - ref_mom[a]).abs() <= 1e-14);
        }

        let opts = SimOptions {
            dt: 0.05,
            horizon: 3.0,
            sample_stride: 10,
            grad_u0: None,
            track_diameters: false,
        };
        let ref_traj =
            simulate(&reference, &ref_u0, &scenario.kernel, &scenario.coupling, &opts).unwrap();
        let traj =
            simulate(&particles, &u0, &scenario.kernel, &scenario.coupling, &opts).unwrap();
        for (ps, rs) in traj.samples.iter().zip(&ref_traj.samples) {
            let pm = weighted_momentum(&particles, &ps.state.vel, 2);
            let rm = weighted_momentum(&reference, &rs.state.vel, 2);
            let drift: f64 = pm
                .iter()
                .zip(&rm)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(
                drift <= 1e-10,
                "momenta diverged by {drift} at t = {}",
                ps.state.t
            );
        }
    }

    #[test]
    fn stability_experiment_reports_unit_ratio_for_matched_run() {
        // Single-site reference and a grid particle law at the same site:
        // both systems are the same free-streaming point, so every energy
        // vanishes and the 0/0 convention applies.
        let scenario = StabilityScenario {
            reference: EnsembleSpec::Grid { per_axis: 1, extent: 0.0 },
            reference_seed: 0,
            particle_law: EnsembleSpec::Grid { per_axis: 1, extent: 0.0 },
            dim: 1,
            u0: VelocityField::Constant { value: vec![0.5] },
            kernel: Kernel::Constant { c: 1.0 },
            coupling: CouplingParams::new(2.0, 1.0).unwrap(),
            dt: Some(0.1),
            sample_stride: 4,
        };
        let rows = stability_experiment(&scenario, &[1], &[0], 2.0, 1.0).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].sup_combined, 0.0);
        assert_eq!(rows[0].initial_combined, 0.0);
        assert_eq!(rows[0].ratio, 1.0);
        assert_eq!(rows[0].terminal_velocity_ratio, 1.0);
    }

    #[test]
    fn stability_experiment_sweep_produces_bounded_ratios() {
        let scenario = small_scenario();
        let rows = stability_experiment(&scenario, &[8, 16], &[1, 2], 2.0, 2.0).unwrap();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert!(row.initial_combined > 0.0);
            assert!(row.sup_combined >= row.initial_combined * (1.0 - 1e-12));
            assert!(row.ratio >= 1.0 - 1e-12);
            assert!(
                row.ratio <= 20.0,
                "N = {}, seed {}: ratio {} out of any plausible range",
                row.n,
                row.seed,
                row.ratio
            );
        }
    }

    #[test]
    fn particle_law_respec_accepts_only_samplable_densities() {
        assert!(respec_with_count(&EnsembleSpec::UniformBall { radius: 1.0, n: 3 }, 64, 2).is_ok());
        assert!(respec_with_count(
            &EnsembleSpec::Grid { per_axis: 2, extent: 1.0 },
            4,
            2
        )
        .is_ok());
        assert!(respec_with_count(
            &EnsembleSpec::Grid { per_axis: 2, extent: 1.0 },
            5,
            2
        )
        .is_err());
        assert!(respec_with_count(
            &EnsembleSpec::File { path: "atoms.txt".into() },
            4,
            2
        )
        .is_err());
    }

    #[test]
    fn safe_ratio_conventions() {
        assert_eq!(safe_ratio(0.0, 0.0), 1.0);
        assert_eq!(safe_ratio(3.0, 2.0), 1.5);
        assert_eq!(safe_ratio(1.0, 0.0), f64::INFINITY);
    }
}
