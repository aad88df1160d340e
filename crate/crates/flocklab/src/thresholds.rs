//! Critical-threshold classification in one dimension and the
//! large-coupling injectivity condition in any dimension.
//!
//! In 1D the long-time behaviour is decided by the effective initial
//! velocity
//!
//! ```text
//!   v̂(x) = u₀(x) − κ Σ_j w_j Φ(x_j − x),   Φ' = φ, Φ odd,
//! ```
//!
//! which each atom approaches exponentially fast: order is preserved iff v̂
//! is non-decreasing across atoms sorted by position, and a decreasing pair
//! forces a collision no later than (x−y)/(v̂(y)−v̂(x)). In higher
//! dimensions (p = 2), a sufficiently large κ damps velocity gradients
//! uniformly; the resulting bound on ∫‖∇v‖ certifies injectivity of the
//! flow map.

use crate::analytics::solve_deta_infty;
use crate::coupling::CouplingParams;
use crate::ensemble::AtomEnsemble;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::sim::{phase_diameters, Trajectory};
use crate::tolerances::{CERT_COMPARE_SLACK, GAP_COLLAPSE_REL, TIE_VHAT_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criticality {
    Subcritical,
    Supercritical,
}

/// Effective initial velocity of every atom with its monotonicity
/// classification.
#[derive(Clone, Debug)]
pub struct EffectiveVelocity1D {
    /// v̂ per atom, in the original atom order.
    pub v_hat: Vec<f64>,
    pub classification: Criticality,
    /// Atom indices (left, right by position) of the first adjacent sorted
    /// pair with decreasing v̂; present iff supercritical.
    pub violating_pair: Option<(usize, usize)>,
}

/// v̂_i = u0_i − κ Σ_j w_j Φ(x_j − x_i), classified by monotonicity along
/// atoms sorted by position. Atoms sharing a position must share v̂ (within
/// 1e−12), otherwise the data are already supercritical.
pub fn effective_velocity(
    ensemble: &AtomEnsemble,
    u0: &[f64],
    kernel: &Kernel,
    kappa: f64,
) -> Result<EffectiveVelocity1D> {
    if ensemble.dim() != 1 {
        return Err(Error::unsupported(format!(
            "the effective velocity is a one-dimensional construction, got dim {}",
            ensemble.dim()
        )));
    }
    kernel.validate()?;
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::arg(format!(
            "coupling strength must be finite and non-negative, got {kappa}"
        )));
    }
    if u0.len() != ensemble.n() {
        return Err(Error::arg(format!(
            "initial velocity buffer must hold {} entries, got {}",
            ensemble.n(),
            u0.len()
        )));
    }
    let x = ensemble.positions();
    let w = ensemble.weights();
    let n = ensemble.n();
    let mut v_hat = Vec::with_capacity(n);
    for i in 0..n {
        let mut drift = 0.0;
        for j in 0..n {
            drift += w[j] * kernel.primitive(x[j] - x[i])?;
        }
        v_hat.push(u0[i] - kappa * drift);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let scale = 1.0 + v_hat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for win in order.windows(2) {
        let (a, b) = (win[0], win[1]);
        let violated = if x[a] == x[b] {
            (v_hat[a] - v_hat[b]).abs() > TIE_VHAT_TOL * scale
        } else {
            // The tie tolerance also guards this comparison: a marginal
            // profile (v̂ analytically constant) must not flip
            // supercritical on summation noise.
            v_hat[b] < v_hat[a] - TIE_VHAT_TOL * scale
        };
        if violated {
            return Ok(EffectiveVelocity1D {
                v_hat,
                classification: Criticality::Supercritical,
                violating_pair: Some((a, b)),
            });
        }
    }
    Ok(EffectiveVelocity1D {
        v_hat,
        classification: Criticality::Subcritical,
        violating_pair: None,
    })
}

/// Upper bound on the first collision time of a pair with x > y:
/// (x − y)/(v̂(y) − v̂(x)), or ∞ when the effective velocities do not force
/// a collision.
pub fn collision_bound(x: f64, y: f64, v_hat_x: f64, v_hat_y: f64) -> Result<f64> {
    if !(x.is_finite() && y.is_finite() && v_hat_x.is_finite() && v_hat_y.is_finite()) {
        return Err(Error::arg("collision bound inputs must be finite"));
    }
    if x <= y {
        return Err(Error::arg(format!(
            "collision bound expects x > y, got x = {x}, y = {y}"
        )));
    }
    if v_hat_x >= v_hat_y {
        return Ok(f64::INFINITY);
    }
    Ok((x - y) / (v_hat_y - v_hat_x))
}

/// Order-preservation history of a 1D trajectory.
#[derive(Clone, Debug)]
pub struct OrderReport {
    pub times: Vec<f64>,
    /// Min over adjacent sorted pairs of (η_i − η_j) / ((x_i − x_j)e^{−κφ(0)t})
    /// per sample; stays ≥ 1 − o(1) while order holds with margin.
    pub min_scaled_gap: Vec<f64>,
    /// First time some adjacent ordered gap closes (linear interpolation
    /// between the bracketing samples), if any.
    pub first_collision_time: Option<f64>,
}

/// Track adjacent sorted gaps along a 1D trajectory against the
/// exponential lower bound (x_i − x_j)e^{−κφ(0)t}. A collision is an order
/// inversion — some gap reaching zero — not a small gap: subcritical gaps
/// may contract exponentially forever without ever crossing.
pub fn order_preservation_monitor(
    traj: &Trajectory,
    ensemble: &AtomEnsemble,
    kernel: &Kernel,
    kappa: f64,
) -> Result<OrderReport> {
    if traj.dim != 1 || ensemble.dim() != 1 {
        return Err(Error::unsupported(
            "order preservation monitoring is one-dimensional",
        ));
    }
    kernel.validate()?;
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::arg(format!(
            "coupling strength must be finite and non-negative, got {kappa}"
        )));
    }
    if traj.samples.is_empty() {
        return Err(Error::arg("trajectory holds no samples"));
    }
    let n = ensemble.n();
    if traj.samples[0].state.n() != n {
        return Err(Error::arg("trajectory does not match ensemble"));
    }
    let x = ensemble.positions();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    for win in order.windows(2) {
        if x[win[0]] == x[win[1]] {
            return Err(Error::arg(
                "order monitoring requires distinct initial positions",
            ));
        }
    }
    let phi0 = kernel.peak();

    let mut times = Vec::with_capacity(traj.samples.len());
    let mut min_scaled = Vec::with_capacity(traj.samples.len());
    let mut first_collision = None;
    let mut prev_min_gap = f64::INFINITY;
    let mut prev_t = 0.0;
    for sample in &traj.samples {
        let st = &sample.state;
        let decay = (-kappa * phi0 * st.t).exp();
        let mut worst = f64::INFINITY;
        let mut min_gap = f64::INFINITY;
        for win in order.windows(2) {
            let (a, b) = (win[0], win[1]);
            let gap = st.eta[b] - st.eta[a];
            let scaled = gap / ((x[b] - x[a]) * decay);
            worst = worst.min(scaled);
            min_gap = min_gap.min(gap);
        }
        times.push(st.t);
        min_scaled.push(worst);
        if first_collision.is_none() && min_gap <= 0.0 {
            // interpolate the zero crossing linearly over the bracketing samples
            let t = if prev_min_gap.is_finite() && prev_min_gap > min_gap {
                prev_t + (st.t - prev_t) * prev_min_gap / (prev_min_gap - min_gap)
            } else {
                st.t
            };
            first_collision = Some(t);
        }
        prev_min_gap = min_gap;
        prev_t = st.t;
    }
    Ok(OrderReport {
        times,
        min_scaled_gap: min_scaled,
        first_collision_time: first_collision,
    })
}

/// Count collisions of one pair: sign changes of η_i − η_j across the
/// samples, with hysteresis gap_tol = 1e−9·d_η(0) so that grazing the
/// origin is not double-counted.
pub fn single_collision_check(traj: &Trajectory, pair: (usize, usize)) -> Result<usize> {
    if traj.dim != 1 {
        return Err(Error::unsupported("collision counting is one-dimensional"));
    }
    if traj.samples.is_empty() {
        return Err(Error::arg("trajectory holds no samples"));
    }
    let n = traj.samples[0].state.n();
    let (i, j) = pair;
    if i >= n || j >= n || i == j {
        return Err(Error::arg(format!(
            "pair ({i}, {j}) is not valid for {n} atoms"
        )));
    }
    let first = &traj.samples[0].state;
    let (d_eta0, _) = phase_diameters(1, &first.eta, &first.eta);
    let gap_tol = GAP_COLLAPSE_REL * d_eta0.max(f64::MIN_POSITIVE);
    let mut count = 0usize;
    let mut side: Option<bool> = None; // true ⇔ η_i > η_j beyond tolerance
    for sample in &traj.samples {
        let g = sample.state.eta[i] - sample.state.eta[j];
        if g.abs() <= gap_tol {
            continue;
        }
        let now = g > 0.0;
        if let Some(prev) = side {
            if prev != now {
                count += 1;
            }
        }
        side = Some(now);
    }
    Ok(count)
}

/// The large-coupling condition for p = 2 and the gradient bound it buys.
#[derive(Clone, Debug)]
pub struct LargeKappaReport {
    /// (φ(d_η^∞)·‖∇u₀‖ + 2‖∇φ‖·d_v(0)) / φ²(d_η^∞).
    pub threshold: f64,
    /// d_v(0)/∫_{d_η(0)}^∞ φ, present for integrable kernels; the coupling
    /// must also clear this to confine the positions.
    pub integrable_variant_threshold: Option<f64>,
    /// κ > max(threshold, integrable variant).
    pub satisfied: bool,
    /// (φ(D)·‖∇u₀‖ + ‖∇φ‖·d_v(0)) / (κφ²(D) − ‖∇φ‖·d_v(0)) — the a-priori
    /// bound on ∫‖∇v‖ dt; absent when the damping hypothesis
    /// κφ²(D) > ‖∇φ‖·d_v(0) fails.
    pub predicted_gradient_integral: Option<f64>,
    /// Why no prediction / satisfaction is available, when applicable.
    pub failure_reason: Option<String>,
    /// The asymptotic diameter D = d_η^∞ underlying the report.
    pub d_eta_infty: f64,
    /// φ(D), the uniform kernel floor.
    pub phi_at_infty: f64,
}

pub fn large_kappa_condition(
    kernel: &Kernel,
    cp: &CouplingParams,
    grad_u0_sup: f64,
    d_v0: f64,
    d_eta0: f64,
) -> Result<LargeKappaReport> {
    cp.validate()?;
    kernel.validate()?;
    if cp.p != 2.0 {
        return Err(Error::unsupported(format!(
            "the large-coupling condition is stated for p = 2, got p = {}",
            cp.p
        )));
    }
    if !grad_u0_sup.is_finite() || grad_u0_sup < 0.0 {
        return Err(Error::arg(format!(
            "velocity-field gradient bound must be finite and non-negative, got {grad_u0_sup}"
        )));
    }
    let report = solve_deta_infty(cp, kernel, d_v0, d_eta0)?;
    if !report.conditional_ok {
        return Err(Error::arg(
            "the conditional-flocking inequality fails: no asymptotic diameter exists for these data",
        ));
    }
    let d_infty = report.d_eta_infty.expect("present when conditional_ok");
    let phi_d = report.phi_at_infty;
    let grad_phi_sup = kernel.lipschitz_constant();
    let threshold = (phi_d * grad_u0_sup + 2.0 * grad_phi_sup * d_v0) / (phi_d * phi_d);
    let integrable_variant_threshold = if kernel.is_heavy_tailed() {
        None
    } else {
        Some(d_v0 / kernel.tail_integral(d_eta0, f64::INFINITY)?)
    };
    let effective = integrable_variant_threshold
        .map_or(threshold, |v| threshold.max(v));
    let damping = cp.kappa * phi_d * phi_d - grad_phi_sup * d_v0;
    let (predicted, reason) = if damping > 0.0 {
        (
            Some((phi_d * grad_u0_sup + grad_phi_sup * d_v0) / damping),
            None,
        )
    } else {
        (
            None,
            Some(format!(
                "no uniform gradient damping: κφ²(d_η^∞) = {:.3e} does not exceed ‖∇φ‖·d_v(0) = {:.3e}",
                cp.kappa * phi_d * phi_d,
                grad_phi_sup * d_v0
            )),
        )
    };
    let satisfied = predicted.is_some() && cp.kappa > effective;
    Ok(LargeKappaReport {
        threshold,
        integrable_variant_threshold,
        satisfied,
        predicted_gradient_integral: predicted,
        failure_reason: reason,
        d_eta_infty: d_infty,
        phi_at_infty: phi_d,
    })
}

/// Measured ∫‖J^v‖ against the a-priori prediction.
#[derive(Clone, Copy, Debug)]
pub struct CertificateComparison {
    pub measured: f64,
    pub bound: f64,
    /// measured ≤ bound·(1 + 1e−3), and measured < 1 whenever the
    /// large-coupling condition held.
    pub ok: bool,
}

pub fn gronwall_certificate_compare(
    report: &LargeKappaReport,
    traj: &Trajectory,
) -> Result<CertificateComparison> {
    let jac = traj.final_jacobian().ok_or_else(|| {
        Error::arg("certificate comparison requires a trajectory with Jacobians")
    })?;
    let bound = report.predicted_gradient_integral.ok_or_else(|| {
        Error::arg("the report predicts no gradient bound (damping hypothesis failed)")
    })?;
    let measured = jac.accumulated_jv_norm;
    let mut ok = measured <= bound * (1.0 + CERT_COMPARE_SLACK);
    if report.satisfied {
        ok = ok && measured < 1.0;
    }
    Ok(CertificateComparison {
        measured,
        bound,
        ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, PhaseState, SimOptions, TrajectorySample};

    fn pm_one_ensemble() -> AtomEnsemble {
        AtomEnsemble::new(1, vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn effective_velocity_hand_examples() {
        let ens = pm_one_ensemble();
        let kernel = Kernel::Constant { c: 1.0 };

        // u₀(x) = −x neutralizes the drift exactly: v̂ ≡ 0
        let ev = effective_velocity(&ens, &[1.0, -1.0], &kernel, 1.0).unwrap();
        assert!(ev.v_hat.iter().all(|v| v.abs() <= 1e-15), "{:?}", ev.v_hat);
        assert_eq!(ev.classification, Criticality::Subcritical);
        assert!(ev.violating_pair.is_none());

        // u₀(x) = −2x leaves v̂(x) = −x: decreasing
        let ev = effective_velocity(&ens, &[2.0, -2.0], &kernel, 1.0).unwrap();
        assert!((ev.v_hat[0] - 1.0).abs() <= 1e-15 && (ev.v_hat[1] + 1.0).abs() <= 1e-15);
        assert_eq!(ev.classification, Criticality::Supercritical);
        assert_eq!(ev.violating_pair, Some((0, 1)));

        // κ = 0: classification is the monotonicity of u₀ itself
        let ev = effective_velocity(&ens, &[-0.3, 0.8], &kernel, 0.0).unwrap();
        assert_eq!(ev.v_hat, vec![-0.3, 0.8]);
        assert_eq!(ev.classification, Criticality::Subcritical);
        let ev = effective_velocity(&ens, &[0.8, -0.3], &kernel, 0.0).unwrap();
        assert_eq!(ev.classification, Criticality::Supercritical);
    }

    #[test]
    fn effective_velocity_position_ties() {
        let ens = AtomEnsemble::new(1, vec![0.0, 0.0, 1.0], vec![0.25, 0.25, 0.5]).unwrap();
        let kernel = Kernel::Constant { c: 1.0 };
        // co-located atoms with equal u₀ share v̂: still subcritical
        let ev = effective_velocity(&ens, &[0.0, 0.0, 1.0], &kernel, 0.0).unwrap();
        assert_eq!(ev.classification, Criticality::Subcritical);
        // distinct velocities at the same point are already supercritical
        let ev = effective_velocity(&ens, &[0.0, 0.5, 1.0], &kernel, 0.0).unwrap();
        assert_eq!(ev.classification, Criticality::Supercritical);
    }

    #[test]
    fn collision_bound_examples() {
        assert_eq!(collision_bound(1.0, -1.0, -1.0, 1.0).unwrap(), 1.0);
        assert_eq!(collision_bound(1.0, -1.0, 1.0, -1.0).unwrap(), f64::INFINITY);
        assert_eq!(collision_bound(3.0, -1.0, -1.0, 1.0).unwrap(), 2.0);
        assert!(matches!(
            collision_bound(-1.0, 1.0, 0.0, 0.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn subcritical_run_preserves_order_with_sharp_gap() {
        // v̂ ≡ 0: the adjacent gap is exactly 2e^{−t}, the monitor's bound
        let ens = pm_one_ensemble();
        let kernel = Kernel::Constant { c: 1.0 };
        let cp = CouplingParams::new(2.0, 1.0).unwrap();
        let opts = SimOptions {
            dt: 1e-3,
            horizon: 2.0,
            sample_stride: 10,
            grad_u0: None,
            track_diameters: false,
        };
        let traj = simulate(&ens, &[1.0, -1.0], &kernel, &cp, &opts).unwrap();
        let report = order_preservation_monitor(&traj, &ens, &kernel, 1.0).unwrap();
        assert!(report.first_collision_time.is_none());
        for (t, r) in report.times.iter().zip(&report.min_scaled_gap) {
            assert!(
                *r >= 1.0 - 1e-6 && *r <= 1.0 + 1e-6,
                "t={t}: scaled gap {r} drifted from 1"
            );
        }
        assert_eq!(single_collision_check(&traj, (0, 1)).unwrap(), 0);
    }

    #[test]
    fn supercritical_run_collides_once_before_the_bound() {
        // v̂(x) = −x: gap d(t) = 4e^{−t} − 2 crosses zero at t = ln 2
        let ens = pm_one_ensemble();
        let kernel = Kernel::Constant { c: 1.0 };
        let cp = CouplingParams::new(2.0, 1.0).unwrap();
        let opts = SimOptions {
            dt: 1e-3,
            horizon: 2.0,
            sample_stride: 1,
            grad_u0: None,
            track_diameters: false,
        };
        let traj = simulate(&ens, &[2.0, -2.0], &kernel, &cp, &opts).unwrap();

        let ev = effective_velocity(&ens, &[2.0, -2.0], &kernel, 1.0).unwrap();
        let (a, b) = ev.violating_pair.unwrap();
        let bound = collision_bound(
            ens.positions()[b],
            ens.positions()[a],
            ev.v_hat[b],
            ev.v_hat[a],
        )
        .unwrap();
        assert!((bound - 1.0).abs() <= 1e-15);

        let report = order_preservation_monitor(&traj, &ens, &kernel, 1.0).unwrap();
        let t_c = report.first_collision_time.expect("collision expected");
        let ln2 = std::f64::consts::LN_2;
        assert!((t_c - ln2).abs() <= 1e-4, "t_c = {t_c} vs ln 2 = {ln2}");
        assert!(t_c <= bound * (1.0 + 1e-6));

        // exactly one crossing, and the gap never recovers afterwards
        assert_eq!(single_collision_check(&traj, (0, 1)).unwrap(), 1);
        for sample in &traj.samples {
            if sample.state.t > ln2 + 1e-2 {
                assert!(sample.state.eta[1] - sample.state.eta[0] < 0.0);
            }
        }
    }

    #[test]
    fn free_streaming_collision_at_kinematic_crossing() {
        // hand-built straight-line trajectory: x = ∓1 ± t (crossing at t=1)
        let ens = pm_one_ensemble();
        let dt = 1e-2;
        let samples: Vec<TrajectorySample> = (0..=200)
            .map(|k| {
                let t = k as f64 * dt;
                TrajectorySample {
                    state: PhaseState::new(t, 1, vec![-1.0 + t, 1.0 - t], vec![1.0, -1.0])
                        .unwrap(),
                    jacobian: None,
                }
            })
            .collect();
        let traj = Trajectory {
            dim: 1,
            dt,
            sample_stride: 1,
            samples,
            steps: Default::default(),
            kink_crossings: 0,
        };
        let report =
            order_preservation_monitor(&traj, &ens, &Kernel::Constant { c: 1.0 }, 0.0).unwrap();
        let t_c = report.first_collision_time.expect("crossing expected");
        assert!((t_c - 1.0).abs() <= 1e-9, "t_c = {t_c}");
        assert_eq!(single_collision_check(&traj, (0, 1)).unwrap(), 1);
    }

    #[test]
    fn large_kappa_condition_examples() {
        let cp = CouplingParams::new(2.0, 2.0).unwrap();
        // constant kernel: ‖∇φ‖ = 0 collapses everything
        let report =
            large_kappa_condition(&Kernel::Constant { c: 1.0 }, &cp, 1.0, 1.0, 0.5).unwrap();
        assert_eq!(report.threshold, 1.0);
        assert!(report.integrable_variant_threshold.is_none());
        assert!(report.satisfied);
        assert_eq!(report.predicted_gradient_integral, Some(0.5));
        assert_eq!(report.phi_at_infty, 1.0);

        // zero gradients: always satisfied with zero budget
        let report =
            large_kappa_condition(&Kernel::Constant { c: 1.0 }, &cp, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(report.threshold, 0.0);
        assert!(report.satisfied);
        assert_eq!(report.predicted_gradient_integral, Some(0.0));

        // heavy-tail power law: compose the asymptotic diameter with the formula
        let cp1 = CouplingParams::new(2.0, 1.0).unwrap();
        let kernel = Kernel::PowerLaw { beta: 1.0 };
        let report = large_kappa_condition(&kernel, &cp1, 1.0, 1.0, 0.0).unwrap();
        let d = std::f64::consts::E - 1.0;
        assert!((report.d_eta_infty - d).abs() <= 1e-9);
        let phi_d = 1.0 / std::f64::consts::E;
        let expected = (phi_d * 1.0 + 2.0 * 1.0 * 1.0) / (phi_d * phi_d);
        assert!(
            (report.threshold - expected).abs() <= 1e-8 * expected,
            "threshold {} vs {expected}",
            report.threshold
        );
        assert!(!report.satisfied, "κ = 1 cannot clear {expected}");

        // satisfied ⇒ predicted < 1 across a κ sweep
        for kappa in [0.5, 1.0, 3.0, 10.0, 40.0] {
            let cpk = CouplingParams::new(2.0, kappa).unwrap();
            let report = large_kappa_condition(&kernel, &cpk, 0.7, 0.8, 0.2).unwrap();
            if report.satisfied {
                let g = report.predicted_gradient_integral.unwrap();
                assert!(g < 1.0, "κ={kappa}: satisfied but predicted {g} ≥ 1");
            }
        }
    }

    #[test]
    fn large_kappa_integrable_variant_and_damping_failure() {
        let kernel = Kernel::PowerLaw { beta: 2.0 };
        let cp = CouplingParams::new(2.0, 1.0).unwrap();
        // ∫_0^D (1+r)^{−2} = 0.5 → D = 1, φ(D) = ¼, tail total 1
        let report = large_kappa_condition(&kernel, &cp, 0.2, 0.5, 0.0).unwrap();
        assert!((report.d_eta_infty - 1.0).abs() <= 1e-9);
        assert_eq!(report.integrable_variant_threshold, Some(0.5));
        // κφ² = 1/16 ≤ ‖∇φ‖d_v0 = 1: the damping hypothesis fails
        assert!(report.predicted_gradient_integral.is_none());
        assert!(!report.satisfied);
        assert!(report.failure_reason.is_some());

        // thin-tail data violating the conditional inequality are an error
        assert!(matches!(
            large_kappa_condition(&kernel, &cp, 0.2, 3.0, 0.0),
            Err(Error::Argument(_))
        ));

        // p ≠ 2 unsupported
        let cp3 = CouplingParams::new(2.5, 1.0).unwrap();
        assert!(matches!(
            large_kappa_condition(&Kernel::Constant { c: 1.0 }, &cp3, 0.1, 0.1, 0.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn certificate_comparison_constant_kernel_equality() {
        // eight atoms, u₀(x) = x/2: J^v decays as e^{−κt} exactly, so the
        // measured integral approaches the predicted g₀/κ from below
        let n = 8;
        let positions: Vec<f64> = (0..n).map(|i| i as f64 * 0.3 - 1.0).collect();
        let ens = AtomEnsemble::equal_weights(1, positions.clone()).unwrap();
        let u0: Vec<f64> = positions.iter().map(|x| 0.5 * x).collect();
        let kernel = Kernel::Constant { c: 1.0 };
        let cp = CouplingParams::new(2.0, 2.0).unwrap();
        let (d_eta0, d_v0) = {
            let state = PhaseState::new(0.0, 1, positions.clone(), u0.clone()).unwrap();
            phase_diameters(1, &state.eta, &state.vel)
        };
        let report = large_kappa_condition(&kernel, &cp, 0.5, d_v0, d_eta0).unwrap();
        assert!(report.satisfied);
        assert_eq!(report.predicted_gradient_integral, Some(0.25));

        let opts = SimOptions {
            dt: 1e-2,
            horizon: 12.0,
            sample_stride: 100,
            grad_u0: Some(vec![0.5; n]),
            track_diameters: false,
        };
        let traj = simulate(&ens, &u0, &kernel, &cp, &opts).unwrap();
        let cmp = gronwall_certificate_compare(&report, &traj).unwrap();
        assert!(cmp.ok, "measured {} vs bound {}", cmp.measured, cmp.bound);
        assert!(cmp.measured < 1.0);
        // g₀(1−e^{−κT})/κ with κT = 24: equality up to quadrature error
        assert!(
            (cmp.measured - cmp.bound).abs() <= 1e-6,
            "measured {} vs bound {}",
            cmp.measured,
            cmp.bound
        );
    }

    #[test]
    fn certificate_comparison_trivial_field() {
        let ens = pm_one_ensemble();
        let kernel = Kernel::Constant { c: 1.0 };
        let cp = CouplingParams::new(2.0, 1.0).unwrap();
        let report = large_kappa_condition(&kernel, &cp, 0.0, 0.5, 1.0).unwrap();
        let opts = SimOptions {
            dt: 1e-2,
            horizon: 1.0,
            sample_stride: 10,
            grad_u0: Some(vec![0.0, 0.0]),
            track_diameters: false,
        };
        let traj = simulate(&ens, &[0.25, -0.25], &kernel, &cp, &opts).unwrap();
        let cmp = gronwall_certificate_compare(&report, &traj).unwrap();
        assert_eq!(cmp.measured, 0.0);
        assert!(cmp.ok);
    }
}
