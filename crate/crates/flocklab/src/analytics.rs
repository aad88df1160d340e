//! Diameter dynamics, decay envelopes and energy ledgers over trajectories.
//!
//! The velocity diameter of a solution obeys
//!
//! ```text
//!   d/dt d_v ≤ −2^{2−p} κ φ(d_η) d_v^{p−1},
//! ```
//!
//! whose integrated form gives a computable upper envelope along any
//! trajectory. When the initial data satisfy the conditional-flocking
//! inequality (for 2 ≤ p < 3), the positions stay within an explicit
//! diameter `d_eta_infty` and the envelope specializes to a closed-form
//! decay bound. This module evaluates all of those quantities, plus the
//! velocity-fluctuation functional δE and the kinetic-energy ledger.

use serde::Serialize;

use crate::coupling::CouplingParams;
use crate::ensemble::AtomEnsemble;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::sim::{phase_diameters, PhaseState, Trajectory};
use crate::tolerances::BISECTION_RESIDUAL_TOL;

/// Position and velocity diameters sampled along a trajectory.
#[derive(Clone, Debug)]
pub struct DiameterSeries {
    pub times: Vec<f64>,
    pub d_eta: Vec<f64>,
    pub d_v: Vec<f64>,
}

impl DiameterSeries {
    /// Extract diameters from a trajectory: per-step values when the run
    /// tracked them, otherwise an O(N²) scan of each retained sample.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        if !traj.steps.d_eta.is_empty() {
            return Ok(DiameterSeries {
                times: traj.steps.t.clone(),
                d_eta: traj.steps.d_eta.clone(),
                d_v: traj.steps.d_v.clone(),
            });
        }
        if traj.samples.is_empty() {
            return Err(Error::arg("trajectory holds no samples"));
        }
        let mut times = Vec::with_capacity(traj.samples.len());
        let mut d_eta = Vec::with_capacity(traj.samples.len());
        let mut d_v = Vec::with_capacity(traj.samples.len());
        for sample in &traj.samples {
            let st = &sample.state;
            let (de, dv) = phase_diameters(st.dim, &st.eta, &st.vel);
            times.push(st.t);
            d_eta.push(de);
            d_v.push(dv);
        }
        Ok(DiameterSeries { times, d_eta, d_v })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Outcome of the conditional-flocking threshold check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ThresholdReport {
    /// Whether d_v(0)^{3−p}/(3−p) < 2^{2−p} κ ∫_{d_η(0)}^∞ φ holds.
    pub conditional_ok: bool,
    /// The asymptotic position-diameter bound, defined by spending the
    /// left-hand side of the condition on the kernel tail; absent when the
    /// condition fails.
    pub d_eta_infty: Option<f64>,
    /// φ evaluated at `d_eta_infty` (0 when the condition fails), the
    /// uniform kernel lower bound entering the explicit decay rate.
    pub phi_at_infty: f64,
}

/// Exact max-over-pairs position and velocity diameters; a single atom has
/// diameters (0, 0).
pub fn diameters(state: &PhaseState) -> (f64, f64) {
    phase_diameters(state.dim, &state.eta, &state.vel)
}

/// Upper envelope for the velocity diameter along a trajectory, integrating
/// φ(d_η) by the trapezoid rule on the series' own grid:
/// p = 2: d_v(0)·exp(−κ∫φ(d_η)); p > 2: (d_v(0)^{2−p} + (p−2)2^{2−p}κ∫φ(d_η))^{−1/(p−2)}.
pub fn decay_envelope(
    series: &DiameterSeries,
    kernel: &Kernel,
    cp: &CouplingParams,
) -> Result<Vec<f64>> {
    kernel.validate()?;
    cp.validate()?;
    if series.is_empty() {
        return Err(Error::arg("diameter series is empty"));
    }
    if series.d_eta.len() != series.len() || series.d_v.len() != series.len() {
        return Err(Error::arg("diameter series columns have mismatched lengths"));
    }
    let d_v0 = series.d_v[0];
    let p = cp.p;
    if d_v0 == 0.0 && p > 2.0 {
        return Ok(vec![0.0; series.len()]);
    }
    let mut env = Vec::with_capacity(series.len());
    let mut integral = 0.0;
    let mut prev_phi = kernel.eval(series.d_eta[0])?;
    let mut prev_t = series.times[0];
    for k in 0..series.len() {
        if k > 0 {
            let phi = kernel.eval(series.d_eta[k])?;
            integral += 0.5 * (series.times[k] - prev_t) * (prev_phi + phi);
            prev_phi = phi;
            prev_t = series.times[k];
        }
        let bound = if p == 2.0 {
            d_v0 * (-cp.kappa * integral).exp()
        } else {
            let base = d_v0.powf(2.0 - p)
                + (p - 2.0) * (2.0f64).powf(2.0 - p) * cp.kappa * integral;
            base.powf(-1.0 / (p - 2.0))
        };
        env.push(bound);
    }
    Ok(env)
}

/// Decide the conditional-flocking inequality for 2 ≤ p < 3 and, when it
/// holds, solve for the asymptotic position diameter `d_eta_infty` by
/// bisection on the monotone map D ↦ 2^{2−p}κ∫_{d_η(0)}^D φ − d_v(0)^{3−p}/(3−p)
/// (bracket grown geometrically, residual ≤ 1e−12).
pub fn solve_deta_infty(
    cp: &CouplingParams,
    kernel: &Kernel,
    d_v0: f64,
    d_eta0: f64,
) -> Result<ThresholdReport> {
    cp.validate()?;
    kernel.validate()?;
    let p = cp.p;
    if !(2.0..3.0).contains(&p) {
        return Err(Error::unsupported(format!(
            "the conditional-flocking threshold is defined for 2 ≤ p < 3, got p = {p}"
        )));
    }
    if !d_v0.is_finite() || d_v0 < 0.0 || !d_eta0.is_finite() || d_eta0 < 0.0 {
        return Err(Error::arg(format!(
            "initial diameters must be finite and non-negative, got d_v0 = {d_v0}, d_eta0 = {d_eta0}"
        )));
    }
    let coeff = (2.0f64).powf(2.0 - p) * cp.kappa;
    let lhs = d_v0.powf(3.0 - p) / (3.0 - p);
    let budget = coeff * kernel.tail_integral(d_eta0, f64::INFINITY)?;
    // Written as a negated `<` so a NaN budget lands in the conservative branch.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(lhs < budget) {
        return Ok(ThresholdReport {
            conditional_ok: false,
            d_eta_infty: None,
            phi_at_infty: 0.0,
        });
    }
    if d_v0 == 0.0 {
        // nothing to spend on the tail: the positions never spread
        return Ok(ThresholdReport {
            conditional_ok: true,
            d_eta_infty: Some(d_eta0),
            phi_at_infty: kernel.eval(d_eta0)?,
        });
    }
    let f = |d: f64| -> Result<f64> { Ok(coeff * kernel.tail_integral(d_eta0, d)? - lhs) };
    let mut lo = d_eta0;
    let mut hi = d_eta0 + 1.0;
    let mut grow = 0;
    while f(hi)? < 0.0 {
        hi = d_eta0 + 2.0 * (hi - d_eta0);
        grow += 1;
        if grow > 200 {
            return Err(Error::arg(
                "failed to bracket the asymptotic diameter (tail integral grows too slowly)",
            ));
        }
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..500 {
        mid = 0.5 * (lo + hi);
        let val = f(mid)?;
        if val.abs() <= BISECTION_RESIDUAL_TOL {
            break;
        }
        if val < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= f64::EPSILON * mid.max(1.0) {
            break;
        }
    }
    Ok(ThresholdReport {
        conditional_ok: true,
        d_eta_infty: Some(mid),
        phi_at_infty: kernel.eval(mid)?,
    })
}

/// Closed-form decay bound once a uniform kernel floor φ(d_η^∞) is known:
/// p = 2: d_v(0)e^{−κφ_min t}; p ∈ (2,3): (d_v(0)^{2−p} + (p−2)2^{2−p}κφ_min t)^{−1/(p−2)}.
pub fn explicit_decay_bound(
    cp: &CouplingParams,
    phi_min: f64,
    d_v0: f64,
    t: f64,
) -> Result<f64> {
    cp.validate()?;
    let p = cp.p;
    if !(2.0..3.0).contains(&p) {
        return Err(Error::unsupported(format!(
            "the explicit decay bound is stated for 2 ≤ p < 3, got p = {p}"
        )));
    }
    if !phi_min.is_finite() || phi_min <= 0.0 {
        return Err(Error::arg(format!(
            "kernel floor must be positive, got {phi_min}"
        )));
    }
    if !d_v0.is_finite() || d_v0 < 0.0 || !t.is_finite() || t < 0.0 {
        return Err(Error::arg(format!(
            "diameter and time must be finite and non-negative, got d_v0 = {d_v0}, t = {t}"
        )));
    }
    if p == 2.0 {
        Ok(d_v0 * (-cp.kappa * phi_min * t).exp())
    } else if d_v0 == 0.0 {
        Ok(0.0)
    } else {
        let base = d_v0.powf(2.0 - p)
            + (p - 2.0) * (2.0f64).powf(2.0 - p) * cp.kappa * phi_min * t;
        Ok(base.powf(-1.0 / (p - 2.0)))
    }
}

/// Least-squares slope of log d_v against log(1+t) over the window
/// [t1, t2]; an algebraically decaying diameter d_v ∼ (1+t)^{−γ} fits
/// slope −γ.
pub fn algebraic_rate_fit(series: &DiameterSeries, t1: f64, t2: f64) -> Result<f64> {
    if !(t1.is_finite() && t2.is_finite()) || t2 <= t1 {
        return Err(Error::arg(format!(
            "fit window must satisfy t1 < t2, got [{t1}, {t2}]"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..series.len() {
        let t = series.times[k];
        if t < t1 || t > t2 {
            continue;
        }
        let dv = series.d_v[k];
        if dv <= 0.0 {
            return Err(Error::arg(format!(
                "velocity diameter must be positive on the fit window, got {dv} at t = {t}"
            )));
        }
        xs.push((1.0 + t).ln());
        ys.push(dv.ln());
    }
    if xs.len() < 3 {
        return Err(Error::arg(format!(
            "fit window [{t1}, {t2}] contains only {} samples (need at least 3)",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::arg("fit window has no spread in time"));
    }
    Ok(sxy / sxx)
}

/// Velocity-fluctuation functional δE = ΣΣ w_i w_j |v_i − v_j|², evaluated
/// through the O(N) identity 2(Σw_i|v_i|² − |Σw_i v_i|²) and clamped at
/// zero against rounding.
pub fn velocity_fluctuation(state: &PhaseState, ensemble: &AtomEnsemble) -> Result<f64> {
    if state.dim != ensemble.dim() || state.n() != ensemble.n() {
        return Err(Error::arg(format!(
            "state ({} atoms, dim {}) is not aligned with ensemble ({} atoms, dim {})",
            state.n(),
            state.dim,
            ensemble.n(),
            ensemble.dim()
        )));
    }
    let d = state.dim;
    let w = ensemble.weights();
    let mut second = 0.0;
    let mut mean = vec![0.0; d];
    for i in 0..ensemble.n() {
        let vi = state.vel_of(i);
        let mut v2 = 0.0;
        for k in 0..d {
            v2 += vi[k] * vi[k];
            mean[k] += w[i] * vi[k];
        }
        second += w[i] * v2;
    }
    let mean2: f64 = mean.iter().map(|m| m * m).sum();
    Ok((2.0 * (second - mean2)).max(0.0))
}

/// Kinetic-energy ledger along a trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyLedger {
    pub times: Vec<f64>,
    /// ½ Σ w_i |v_i|² per step.
    pub kinetic: Vec<f64>,
    /// RK4 quadrature of the dissipation rate over [0, t].
    pub dissipated: Vec<f64>,
    /// kinetic(t) + dissipated(t) − kinetic(0); fourth-order small for an
    /// exact solution.
    pub residual: Vec<f64>,
}

pub fn energy_report(traj: &Trajectory) -> Result<EnergyLedger> {
    let steps = &traj.steps;
    if steps.t.is_empty() {
        return Err(Error::arg("trajectory has no recorded steps"));
    }
    let k0 = steps.kinetic[0];
    let residual: Vec<f64> = steps
        .kinetic
        .iter()
        .zip(&steps.dissipated)
        .map(|(k, d)| k + d - k0)
        .collect();
    Ok(EnergyLedger {
        times: steps.t.clone(),
        kinetic: steps.kinetic.clone(),
        dissipated: steps.dissipated.clone(),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, SimOptions};

    fn run_two_body(
        p: f64,
        kappa: f64,
        kernel: Kernel,
        d0: f64,
        w0: f64,
        horizon: f64,
        dt: f64,
    ) -> Trajectory {
        let ens =
            AtomEnsemble::new(1, vec![-d0 / 2.0, d0 / 2.0], vec![0.5, 0.5]).unwrap();
        let vel = vec![-w0 / 2.0, w0 / 2.0];
        let cp = CouplingParams::new(p, kappa).unwrap();
        let opts = SimOptions {
            dt,
            horizon,
            sample_stride: 1,
            grad_u0: None,
            track_diameters: true,
        };
        simulate(&ens, &vel, &kernel, &cp, &opts).unwrap()
    }

    #[test]
    fn diameters_pinned_values() {
        let one = PhaseState::new(0.0, 2, vec![3.0, -1.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(diameters(&one), (0.0, 0.0));

        let pair = PhaseState::new(0.0, 1, vec![0.0, 1.0], vec![-1.0, 1.0]).unwrap();
        assert_eq!(diameters(&pair), (1.0, 2.0));

        // equilateral triangle of side 2 with rotated unit velocities
        let h = 3.0f64.sqrt();
        let tri = PhaseState::new(
            0.0,
            2,
            vec![-1.0, 0.0, 1.0, 0.0, 0.0, h],
            vec![1.0, 0.0, -0.5, 0.5 * h, -0.5, -0.5 * h],
        )
        .unwrap();
        let (de, dv) = diameters(&tri);
        assert!((de - 2.0).abs() < 1e-15);
        assert!((dv - h).abs() < 1e-15);
    }

    #[test]
    fn envelope_closed_forms_for_constant_kernel() {
        // p = 2: φ∘d_η ≡ 1 so env(t) = d_v(0)e^{−t}
        let traj = run_two_body(2.0, 1.0, Kernel::Constant { c: 1.0 }, 1.0, -1.0, 1.0, 1e-3);
        let series = DiameterSeries::from_trajectory(&traj).unwrap();
        let cp = CouplingParams::new(2.0, 1.0).unwrap();
        let env = decay_envelope(&series, &Kernel::Constant { c: 1.0 }, &cp).unwrap();
        for (t, e) in series.times.iter().zip(&env) {
            let expected = (-t).exp();
            assert!((e - expected).abs() < 1e-12, "t={t}: {e} vs {expected}");
        }

        // p = 3, d_v(0) = 2: env(t) = (1/2 + t/2)^{−1}
        let traj = run_two_body(3.0, 1.0, Kernel::Constant { c: 1.0 }, 1.0, -2.0, 1.0, 1e-3);
        let series = DiameterSeries::from_trajectory(&traj).unwrap();
        let cp = CouplingParams::new(3.0, 1.0).unwrap();
        let env = decay_envelope(&series, &Kernel::Constant { c: 1.0 }, &cp).unwrap();
        for (t, e) in series.times.iter().zip(&env) {
            let expected = 1.0 / (0.5 + 0.5 * t);
            assert!((e - expected).abs() < 1e-12, "t={t}: {e} vs {expected}");
        }
    }

    #[test]
    fn envelope_zero_initial_spread_stays_zero_for_p_gt_2() {
        let series = DiameterSeries {
            times: vec![0.0, 0.5, 1.0],
            d_eta: vec![1.0, 1.0, 1.0],
            d_v: vec![0.0, 0.0, 0.0],
        };
        let cp = CouplingParams::new(2.5, 1.0).unwrap();
        let env = decay_envelope(&series, &Kernel::Constant { c: 1.0 }, &cp).unwrap();
        assert_eq!(env, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn envelope_dominates_measured_diameter() {
        let traj = run_two_body(
            2.5,
            1.3,
            Kernel::PowerLaw { beta: 0.5 },
            2.0,
            -1.5,
            4.0,
            2e-3,
        );
        let series = DiameterSeries::from_trajectory(&traj).unwrap();
        let cp = CouplingParams::new(2.5, 1.3).unwrap();
        let env = decay_envelope(&series, &Kernel::PowerLaw { beta: 0.5 }, &cp).unwrap();
        for k in 0..series.len() {
            assert!(
                series.d_v[k] <= env[k] * (1.0 + 1e-6),
                "t={}: d_v {} exceeds envelope {}",
                series.times[k],
                series.d_v[k],
                env[k]
            );
        }
    }

    #[test]
    fn discrete_diameter_increments_bounded_by_velocity() {
        let traj = run_two_body(
            2.0,
            0.7,
            Kernel::PowerLaw { beta: 1.0 },
            1.0,
            2.0, // spreading pair
            2.0,
            1e-2,
        );
        let series = DiameterSeries::from_trajectory(&traj).unwrap();
        for k in 1..series.len() {
            let dt = series.times[k] - series.times[k - 1];
            let dv_max = series.d_v[k].max(series.d_v[k - 1]);
            let inc = (series.d_eta[k] - series.d_eta[k - 1]).abs();
            assert!(
                inc <= dv_max * dt * (1.0 + 1e-6),
                "step {k}: |Δd_η| = {inc} exceeds {dv_max}·{dt}"
            );
        }
    }

    #[test]
    fn threshold_solver_pinned_roots() {
        let cp = CouplingParams::new(2.0, 1.0).unwrap();

        // ln(1 + D) = 1 → D = e − 1
        let report =
            solve_deta_infty(&cp, &Kernel::PowerLaw { beta: 1.0 }, 1.0, 0.0).unwrap();
        assert!(report.conditional_ok);
        let d = report.d_eta_infty.unwrap();
        assert!(
            (d - (std::f64::consts::E - 1.0)).abs() < 1e-10,
            "d_eta_infty = {d}"
        );
        assert!((report.phi_at_infty - 1.0 / std::f64::consts::E).abs() < 1e-10);

        // ∫_1^D 1 = 3 → D = 4
        let report = solve_deta_infty(&cp, &Kernel::Constant { c: 1.0 }, 3.0, 1.0).unwrap();
        assert!(report.conditional_ok);
        assert!((report.d_eta_infty.unwrap() - 4.0).abs() < 1e-10);
        assert_eq!(report.phi_at_infty, 1.0);

        // thin tail: ∫_0^∞ (1+r)^{−2} = 1 < 2 = d_v0
        let report = solve_deta_infty(&cp, &Kernel::PowerLaw { beta: 2.0 }, 2.0, 0.0).unwrap();
        assert!(!report.conditional_ok);
        assert!(report.d_eta_infty.is_none());
        assert_eq!(report.phi_at_infty, 0.0);
    }

    #[test]
    fn threshold_solver_edge_cases() {
        let cp = CouplingParams::new(2.5, 2.0).unwrap();
        // d_v0 = 0: already flocked, diameter never grows
        let report = solve_deta_infty(&cp, &Kernel::PowerLaw { beta: 1.0 }, 0.0, 3.0).unwrap();
        assert!(report.conditional_ok);
        assert_eq!(report.d_eta_infty, Some(3.0));

        // p out of range
        let cp3 = CouplingParams::new(3.0, 1.0).unwrap();
        assert!(matches!(
            solve_deta_infty(&cp3, &Kernel::Constant { c: 1.0 }, 1.0, 0.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn threshold_certifies_a_simulated_run() {
        // two atoms, p = 2, PowerLaw(1), κ = 2: condition holds and the
        // position diameter never exceeds d_eta_infty
        let kernel = Kernel::PowerLaw { beta: 1.0 };
        let cp = CouplingParams::new(2.0, 2.0).unwrap();
        let traj = run_two_body(2.0, 2.0, kernel, 1.0, -1.0, 8.0, 2e-3);
        let series = DiameterSeries::from_trajectory(&traj).unwrap();
        let report = solve_deta_infty(&cp, &kernel, series.d_v[0], series.d_eta[0]).unwrap();
        assert!(report.conditional_ok);
        let d_infty = report.d_eta_infty.unwrap();
        assert!(d_infty >= series.d_eta[0]);
        let max_deta = series.d_eta.iter().cloned().fold(0.0f64, f64::max);
        assert!(
            max_deta <= d_infty * (1.0 + 1e-6),
            "max d_eta {max_deta} exceeds d_eta_infty {d_infty}"
        );
        // explicit decay bound dominates the measured velocity diameter
        for k in 0..series.len() {
            let bound =
                explicit_decay_bound(&cp, report.phi_at_infty, series.d_v[0], series.times[k])
                    .unwrap();
            assert!(
                series.d_v[k] <= bound * (1.0 + 1e-6),
                "t={}: d_v {} exceeds explicit bound {}",
                series.times[k],
                series.d_v[k],
                bound
            );
        }
    }

    #[test]
    fn explicit_decay_bound_pinned_values() {
        let cp = CouplingParams::new(2.0, 1.0).unwrap();
        let b = explicit_decay_bound(&cp, 0.5, 1.0, 2.0).unwrap();
        assert!((b - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(explicit_decay_bound(&cp, 0.5, 1.0, 0.0).unwrap(), 1.0);

        let cp = CouplingParams::new(2.5, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for t in [0.0, 1.0, 10.0, 100.0, 1e4] {
            let b = explicit_decay_bound(&cp, 1.0, 1.0, t).unwrap();
            assert!(b <= prev);
            prev = b;
        }
        assert!(prev < 1e-3, "algebraic decay too slow: {prev}");

        assert!(matches!(
            explicit_decay_bound(&cp, 0.0, 1.0, 1.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn rate_fit_recovers_synthetic_exponents() {
        let times: Vec<f64> = (0..200).map(|k| 0.5 * k as f64).collect();
        let mk = |gamma: f64, scale: f64| DiameterSeries {
            times: times.clone(),
            d_eta: vec![1.0; times.len()],
            d_v: times.iter().map(|t| scale * (1.0 + t).powf(-gamma)).collect(),
        };
        let slope = algebraic_rate_fit(&mk(1.0, 1.0), 1.0, 90.0).unwrap();
        assert!((slope + 1.0).abs() < 1e-6, "slope {slope}");
        let slope = algebraic_rate_fit(&mk(0.5, 3.0), 1.0, 90.0).unwrap();
        assert!((slope + 0.5).abs() < 1e-6, "slope {slope}");

        // too few samples
        assert!(matches!(
            algebraic_rate_fit(&mk(1.0, 1.0), 0.0, 0.6),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn fluctuation_identity_and_homogeneity() {
        let ens = AtomEnsemble::new(1, vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let state = PhaseState::new(0.0, 1, vec![0.0, 1.0], vec![-1.0, 1.0]).unwrap();
        let de = velocity_fluctuation(&state, &ens).unwrap();
        assert!((de - 2.0).abs() < 1e-15, "δE = {de}");

        // equal velocities
        let flat = PhaseState::new(0.0, 1, vec![0.0, 1.0], vec![0.7, 0.7]).unwrap();
        assert_eq!(velocity_fluctuation(&flat, &ens).unwrap(), 0.0);

        // dual route: O(N²) double sum on an uneven ensemble
        let w = vec![0.2, 0.3, 0.5];
        let ens = AtomEnsemble::new(2, vec![0.0; 6], w.clone()).unwrap();
        let vel = vec![0.3, -0.2, -0.8, 0.5, 0.4, 0.9];
        let state = PhaseState::new(0.0, 2, vec![0.0; 6], vel.clone()).unwrap();
        let fast = velocity_fluctuation(&state, &ens).unwrap();
        let mut brute = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dx = vel[i * 2] - vel[j * 2];
                let dy = vel[i * 2 + 1] - vel[j * 2 + 1];
                brute += w[i] * w[j] * (dx * dx + dy * dy);
            }
        }
        assert!((fast - brute).abs() <= 1e-10 * brute, "{fast} vs {brute}");

        // λ-scaling multiplies δE by λ²
        let scaled = PhaseState::new(0.0, 2, vec![0.0; 6], vel.iter().map(|v| 3.0 * v).collect())
            .unwrap();
        let big = velocity_fluctuation(&scaled, &ens).unwrap();
        assert!((big - 9.0 * fast).abs() <= 1e-10 * big);
    }

    #[test]
    fn fluctuation_non_increasing_along_trajectory() {
        let traj = run_two_body(2.5, 1.0, Kernel::PowerLaw { beta: 0.5 }, 1.5, -1.0, 3.0, 2e-3);
        let ens = AtomEnsemble::new(1, vec![-0.75, 0.75], vec![0.5, 0.5]).unwrap();
        let mut prev = f64::INFINITY;
        for sample in &traj.samples {
            let de = velocity_fluctuation(&sample.state, &ens).unwrap();
            assert!(de <= prev + 1e-9, "δE rose from {prev} to {de}");
            prev = de;
        }
    }

    #[test]
    fn energy_report_matches_two_body_closed_form() {
        // v̄ = 0, |w₀| = 1: kinetic(t) = e^{−2t}/8, rate = w²/4
        let traj = run_two_body(2.0, 1.0, Kernel::Constant { c: 1.0 }, 1.0, -1.0, 2.0, 1e-3);
        let ledger = energy_report(&traj).unwrap();
        for (k, t) in ledger.times.iter().enumerate() {
            let expect_kin = (-2.0 * t).exp() / 8.0;
            assert!(
                (ledger.kinetic[k] - expect_kin).abs() < 1e-10,
                "t={t}: kinetic {} vs {expect_kin}",
                ledger.kinetic[k]
            );
            let expect_diss = (1.0 - (-2.0 * t).exp()) / 8.0;
            assert!(
                (ledger.dissipated[k] - expect_diss).abs() < 1e-10,
                "t={t}: dissipated {} vs {expect_diss}",
                ledger.dissipated[k]
            );
            assert!(ledger.residual[k].abs() < 1e-12);
        }
        // the instantaneous rate column matches w²/4 as well
        for (k, t) in traj.steps.t.iter().enumerate() {
            let expect_rate = (-2.0 * t).exp() / 4.0;
            assert!(
                (traj.steps.dissipation_rate[k] - expect_rate).abs() < 1e-10,
                "t={t}: rate {} vs {expect_rate}",
                traj.steps.dissipation_rate[k]
            );
        }
    }

    #[test]
    fn energy_report_zero_velocities() {
        let ens = AtomEnsemble::new(1, vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let cp = CouplingParams::new(2.0, 1.0).unwrap();
        let opts = SimOptions {
            dt: 1e-2,
            horizon: 0.5,
            sample_stride: 10,
            grad_u0: None,
            track_diameters: false,
        };
        let traj = simulate(&ens, &[0.0, 0.0], &Kernel::Constant { c: 1.0 }, &cp, &opts).unwrap();
        let ledger = energy_report(&traj).unwrap();
        assert!(ledger.kinetic.iter().all(|k| *k == 0.0));
        assert!(ledger.dissipated.iter().all(|d| *d == 0.0));
        assert!(ledger.residual.iter().all(|r| *r == 0.0));
    }
}
