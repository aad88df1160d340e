//! The built-in verification suite: fourteen numbered checks covering the
//! integrator against closed forms, conservation laws, decay envelopes,
//! the one-dimensional dichotomy, Eulerian reconstruction identities,
//! coupling-strength certificates, the comparison-lemma certificates, the
//! transport stack, mean-field stability, and bitwise determinism.
//!
//! Each check runs independently and reports pass/fail with a short
//! numeric summary; heavy simulations shared between checks run once and
//! are cached for the lifetime of the process. The whole suite is
//! deterministic: fixed seeds, fixed summation order.

use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analytics::{
    algebraic_rate_fit, decay_envelope, energy_report, explicit_decay_bound, solve_deta_infty,
    DiameterSeries,
};
use crate::config::{MeanfieldSweep, SimConfig};
use crate::coupling::CouplingParams;
use crate::ensemble::AtomEnsemble;
use crate::error::Result;
use crate::euler::{
    defect_kernel, disintegrate, eulerian_snapshot, fluctuation_from_cells, reynolds_norm,
    trace_identity_residual, velocity_marginal_stats,
};
use crate::fields::VelocityField;
use crate::gronwall::{integrable_forcing_certificate, lyapunov_certificate};
use crate::kernel::Kernel;
use crate::meanfield::{
    phase_space_product_bound, stability_experiment, wasserstein_1d, wasserstein_exact,
    wasserstein_infty, EmpiricalMeasure, StabilityScenario,
};
use crate::runner::{min_theta_eigenvalue, run_with_threads, RunMode};
use crate::sampler::{sample_ensemble, EnsembleSpec};
use crate::sim::{
    injectivity_certificate, simulate, two_body_oracle, SimOptions, Trajectory, TwoBodyOracle,
};
use crate::thresholds::{
    collision_bound, effective_velocity, gronwall_certificate_compare, large_kappa_condition,
    order_preservation_monitor, single_collision_check, Criticality,
};

/// Verdict of one numbered check.
#[derive(Clone, Debug)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    /// Key measured numbers on success; the list of violated conditions on
    /// failure.
    pub detail: String,
}

/// Collects violations and headline numbers while a check runs.
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks {
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn outcome(self, id: usize, name: &'static str) -> CriterionOutcome {
        let passed = self.failures.is_empty();
        let detail = if passed {
            self.notes.join("; ")
        } else {
            self.failures.join("; ")
        };
        CriterionOutcome {
            id,
            name,
            passed,
            detail,
        }
    }
}

type Criterion = fn(&mut Checks) -> Result<()>;

const CRITERIA: [(&str, Criterion); 14] = [
    ("two-body closed form, p=2", criterion_01),
    ("two-body closed form, p=3", criterion_02),
    ("maximum principle and momentum", criterion_03),
    ("energy ledger convergence", criterion_04),
    ("decay envelopes and algebraic rate", criterion_05),
    ("conditional flocking budget", criterion_06),
    ("one-dimensional dichotomy", criterion_07),
    ("eulerian reconstruction identities", criterion_08),
    ("asymptotic mono-kinetic closure", criterion_09),
    ("strong-coupling certificate", criterion_10),
    ("comparison-lemma certificates", criterion_11),
    ("transport distances and product bound", criterion_12),
    ("mean-field stability sweep", criterion_13),
    ("bitwise determinism across threads", criterion_14),
];

/// Number of checks in the suite.
pub fn criterion_count() -> usize {
    CRITERIA.len()
}

/// Name of one check (1-based; panics out of range).
pub fn criterion_name(id: usize) -> &'static str {
    CRITERIA[id - 1].0
}

/// Runs all checks in order.
pub fn run_all() -> Vec<CriterionOutcome> {
    (1..=CRITERIA.len()).map(run_criterion).collect()
}

/// Runs one check by number (1-based; panics out of range).
pub fn run_criterion(id: usize) -> CriterionOutcome {
    let (name, body) = CRITERIA[id - 1];
    let mut cx = Checks::new();
    if let Err(e) = body(&mut cx) {
        cx.failures.push(format!("error: {e}"));
    }
    cx.outcome(id, name)
}

// ---------------------------------------------------------------------------
// shared scenarios

/// The 2D velocity profile of the randomized ensembles.
fn wave_field() -> VelocityField {
    VelocityField::Sinusoid {
        amplitude: vec![0.4, 0.3],
        frequency: vec![2.0, 3.0],
        phase: vec![0.5, 1.2],
    }
}

fn heavy_kernel() -> Kernel {
    Kernel::PowerLaw { beta: 0.5 }
}

/// Samples the 200-atom ball ensemble with its wave profile.
fn ball_system(seed: u64) -> Result<(AtomEnsemble, Vec<f64>)> {
    let spec = EnsembleSpec::UniformBall {
        radius: 1.0,
        n: 200,
    };
    let ens = sample_ensemble(&spec, 2, seed)?;
    let u0 = wave_field().eval_all(ens.positions(), 2);
    Ok((ens, u0))
}

struct BallRun {
    p: f64,
    seed: u64,
    ensemble: AtomEnsemble,
    traj: Trajectory,
}

const BALL_SEEDS: [u64; 5] = [11, 12, 13, 14, 15];
const BALL_PS: [f64; 3] = [2.0, 2.5, 3.0];

/// The fifteen randomized 2D runs shared by several checks (5 seeds × 3
/// alignment exponents, T = 20, derived step size).
fn ball_runs() -> Result<&'static [BallRun]> {
    static CACHE: OnceLock<std::result::Result<Vec<BallRun>, String>> = OnceLock::new();
    let cached = CACHE.get_or_init(|| {
        let mut runs = Vec::with_capacity(15);
        for &p in &BALL_PS {
            let cp = CouplingParams::new(p, 1.0).map_err(|e| e.to_string())?;
            for &seed in &BALL_SEEDS {
                let (ens, u0) = ball_system(seed).map_err(|e| e.to_string())?;
                let sup = u0
                    .chunks_exact(2)
                    .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
                    .fold(0.0f64, f64::max);
                let opts = SimOptions {
                    dt: crate::sim::default_timestep(&heavy_kernel(), &cp, sup),
                    horizon: 20.0,
                    sample_stride: 20,
                    grad_u0: None,
                    track_diameters: true,
                };
                let traj = simulate(&ens, &u0, &heavy_kernel(), &cp, &opts)
                    .map_err(|e| e.to_string())?;
                runs.push(BallRun {
                    p,
                    seed,
                    ensemble: ens,
                    traj,
                });
            }
        }
        Ok(runs)
    });
    match cached {
        Ok(runs) => Ok(runs),
        Err(msg) => Err(crate::Error::arg(msg.clone())),
    }
}

/// The symmetric two-atom line: positions ∓½ (gap 1), weights ½.
fn two_atoms() -> AtomEnsemble {
    AtomEnsemble::new(1, vec![-0.5, 0.5], vec![0.5, 0.5]).expect("static data")
}

fn two_body_error(p: f64, w0: f64, dt: f64, horizon: f64) -> Result<(Trajectory, f64)> {
    let ens = two_atoms();
    let u0 = vec![-0.5 * w0, 0.5 * w0];
    let cp = CouplingParams::new(p, 1.0)?;
    let kernel = Kernel::Constant { c: 1.0 };
    let opts = SimOptions {
        dt,
        horizon,
        sample_stride: 1,
        grad_u0: None,
        track_diameters: false,
    };
    let traj = simulate(&ens, &u0, &kernel, &cp, &opts)?;
    let mut worst = 0.0f64;
    for sample in &traj.samples {
        let s = &sample.state;
        let d_sim = s.eta[1] - s.eta[0];
        let w_sim = s.vel[1] - s.vel[0];
        match two_body_oracle(&cp, 1.0, &[w0], &[1.0], s.t)? {
            TwoBodyOracle::Full { d, w } => {
                let rd = (d_sim - d[0]).abs() / d[0].abs().max(1e-300);
                let rw = (w_sim - w[0]).abs() / w[0].abs().max(1e-300);
                worst = worst.max(rd).max(rw);
            }
            TwoBodyOracle::SpeedOnly { w_norm } => {
                let rw = (w_sim.abs() - w_norm).abs() / w_norm.max(1e-300);
                worst = worst.max(rw);
            }
        }
    }
    Ok((traj, worst))
}

// ---------------------------------------------------------------------------
// criteria

fn criterion_01(cx: &mut Checks) -> Result<()> {
    let (traj, err_fine) = two_body_error(2.0, -0.5, 1e-3, 10.0)?;
    cx.require(
        err_fine <= 1e-6,
        format!("max relative error {err_fine:.3e} exceeds 1e-6"),
    );

    // The halving that lands at the pinned step: below 1e-3 the error sits
    // at the double-precision accumulation floor and the ratio saturates.
    let (_, err_coarse) = two_body_error(2.0, -0.5, 2e-3, 10.0)?;
    let ratio = err_coarse / err_fine;
    cx.require(
        ratio >= 12.0,
        format!("halving ratio {ratio:.2} below 12"),
    );

    let idx = (1.0f64 / 1e-3).round() as usize;
    let s = &traj.samples[idx].state;
    cx.require(
        (s.t - 1.0).abs() < 1e-12,
        format!("sample at t=1 landed at t={}", s.t),
    );
    let d1 = s.eta[1] - s.eta[0];
    let w1 = s.vel[1] - s.vel[0];
    cx.require(
        (d1 - 0.683940).abs() <= 1e-6,
        format!("d(1) = {d1:.8} vs 0.683940"),
    );
    cx.require(
        (w1 + 0.183940).abs() <= 1e-6,
        format!("w(1) = {w1:.8} vs -0.183940"),
    );
    cx.note(format!("max rel err {err_fine:.2e}, halving ratio {ratio:.1}"));
    Ok(())
}

fn criterion_02(cx: &mut Checks) -> Result<()> {
    let (traj, err) = two_body_error(3.0, -1.0, 1e-3, 1.0)?;
    let s = traj.final_state();
    let w1 = (s.vel[1] - s.vel[0]).abs();
    cx.require(
        (w1 - 0.5).abs() <= 1e-6,
        format!("|w(1)| = {w1:.8} vs 0.5"),
    );
    cx.require(err <= 1e-6, format!("closed-form deviation {err:.3e}"));
    cx.note(format!("|w(1)| = {w1:.7}, deviation {err:.2e}"));
    Ok(())
}

fn criterion_03(cx: &mut Checks) -> Result<()> {
    let mut worst_growth = 0.0f64;
    let mut worst_drift = 0.0f64;
    for run in ball_runs()? {
        let steps = &run.traj.steps;
        let d = run.traj.dim;
        let vinf0 = (0..d).map(|a| steps.vmax_axis[a]).fold(0.0f64, f64::max);
        let mom_scale = (0..d)
            .map(|a| steps.momentum[a].abs())
            .fold(0.0f64, f64::max)
            .max(1.0);
        let mut growth = 0.0f64;
        let mut drift = 0.0f64;
        for k in 0..steps.t.len() {
            let vinf = (0..d)
                .map(|a| steps.vmax_axis[k * d + a])
                .fold(0.0f64, f64::max);
            growth = growth.max(vinf / vinf0 - 1.0);
            for a in 0..d {
                let delta = (steps.momentum[k * d + a] - steps.momentum[a]).abs();
                drift = drift.max(delta / mom_scale);
            }
        }
        cx.require(
            growth <= 1e-9,
            format!("p={} seed={}: sup-norm growth {growth:.3e}", run.p, run.seed),
        );
        cx.require(
            drift <= 1e-10,
            format!("p={} seed={}: momentum drift {drift:.3e}", run.p, run.seed),
        );
        worst_growth = worst_growth.max(growth);
        worst_drift = worst_drift.max(drift);
    }
    cx.note(format!(
        "15 runs: worst sup-norm growth {worst_growth:.1e}, worst momentum drift {worst_drift:.1e}"
    ));
    Ok(())
}

fn criterion_04(cx: &mut Checks) -> Result<()> {
    // Every cached run keeps its ledger closed at its own derived step.
    for run in ball_runs()? {
        let ledger = energy_report(&run.traj)?;
        let res = ledger.residual.iter().fold(0.0f64, |m, &r| m.max(r.abs()));
        cx.require(
            res <= 1e-6,
            format!("p={} seed={}: ledger residual {res:.3e}", run.p, run.seed),
        );
    }

    // Step-size study on one seed per exponent (T = 2 keeps it quick; the
    // balance is per-step, so the closure order is the same as at T = 20).
    let ledger_residual = |p: f64, dt: f64| -> Result<f64> {
        let (ens, u0) = ball_system(11)?;
        let cp = CouplingParams::new(p, 1.0)?;
        let opts = SimOptions {
            dt,
            horizon: 2.0,
            sample_stride: 100,
            grad_u0: None,
            track_diameters: false,
        };
        let traj = simulate(&ens, &u0, &heavy_kernel(), &cp, &opts)?;
        let ledger = energy_report(&traj)?;
        Ok(ledger.residual.iter().fold(0.0f64, |m, &r| m.max(r.abs())))
    };
    let mut ratios = Vec::new();
    for &p in &BALL_PS {
        let fine = ledger_residual(p, 1e-3)?;
        cx.require(
            fine <= 1e-6,
            format!("p={p}: residual {fine:.3e} at dt=1e-3"),
        );
        // Halving landing at the pinned step; below it the residual is at
        // the rounding floor (~2e-16) and ratios are noise.
        let coarse = ledger_residual(p, 2e-3)?;
        let ratio = coarse / fine;
        cx.require(
            ratio >= 8.0,
            format!("p={p}: halving ratio {ratio:.2} below 8"),
        );
        ratios.push(format!("p={p}: {ratio:.1}"));
    }
    cx.note(format!("halving ratios {}", ratios.join(", ")));
    Ok(())
}

fn criterion_05(cx: &mut Checks) -> Result<()> {
    let mut worst_excess = f64::NEG_INFINITY;
    for run in ball_runs()? {
        let series = DiameterSeries::from_trajectory(&run.traj)?;
        let cp = CouplingParams::new(run.p, 1.0)?;
        let env = decay_envelope(&series, &heavy_kernel(), &cp)?;
        let mut excess = f64::NEG_INFINITY;
        for k in 0..series.len() {
            excess = excess.max(series.d_v[k] / env[k].max(1e-300) - 1.0);
        }
        cx.require(
            excess <= 1e-6,
            format!(
                "p={} seed={}: envelope exceeded by {excess:.3e}",
                run.p, run.seed
            ),
        );
        worst_excess = worst_excess.max(excess);
    }

    // Algebraic decay on the expanding line at p = 2.5.
    let config = SimConfig::from_preset("p25-algebraic")?;
    let (ens, u0) = config.load_system()?;
    let opts = config.sim_options(&ens, &u0)?;
    let traj = simulate(&ens, &u0, &config.kernel, &config.coupling()?, &opts)?;
    let series = DiameterSeries::from_trajectory(&traj)?;
    let slope = algebraic_rate_fit(&series, 10.0, 100.0)?;
    cx.require(
        slope <= -0.8,
        format!("log-log velocity-diameter slope {slope:.3} above -0.8"),
    );
    cx.note(format!(
        "worst envelope excess {worst_excess:.1e}, p=2.5 slope {slope:.2}"
    ));
    Ok(())
}

fn criterion_06(cx: &mut Checks) -> Result<()> {
    let kernel = Kernel::PowerLaw { beta: 1.0 };
    let cp = CouplingParams::new(2.0, 1.0)?;
    let report = solve_deta_infty(&cp, &kernel, 1.0, 0.0)?;
    let d_infty = report
        .d_eta_infty
        .ok_or_else(|| crate::Error::arg("budget solver returned no diameter limit"))?;
    let target = std::f64::consts::E - 1.0;
    cx.require(
        (d_infty - target).abs() <= 1e-10,
        format!("d_eta_infty = {d_infty:.12} vs e-1"),
    );

    // The realizing run: two coincident atoms with unit velocity gap.
    let ens = AtomEnsemble::new(1, vec![0.0, 0.0], vec![0.5, 0.5])?;
    let u0 = vec![0.5, -0.5];
    let opts = SimOptions {
        dt: 1e-3,
        horizon: 20.0,
        sample_stride: 10,
        grad_u0: None,
        track_diameters: true,
    };
    let traj = simulate(&ens, &u0, &kernel, &cp, &opts)?;
    let series = DiameterSeries::from_trajectory(&traj)?;
    let max_d_eta = series.d_eta.iter().fold(0.0f64, |m, &x| m.max(x));
    cx.require(
        max_d_eta <= target * (1.0 + 1e-6),
        format!("max d_eta {max_d_eta:.9} exceeds (e-1)(1+1e-6)"),
    );
    let mut worst = 0.0f64;
    for k in 0..series.len() {
        let bound = explicit_decay_bound(&cp, report.phi_at_infty, 1.0, series.times[k])?;
        worst = worst.max(series.d_v[k] / bound.max(1e-300) - 1.0);
    }
    cx.require(
        worst <= 1e-6,
        format!("explicit decay bound exceeded by {worst:.3e}"),
    );
    cx.note(format!(
        "d_eta_infty - (e-1) = {:+.1e}, max d_eta {max_d_eta:.6}",
        d_infty - target
    ));
    Ok(())
}

fn criterion_07(cx: &mut Checks) -> Result<()> {
    // Marginal profile: v̂ ≡ 0, order preserved with the sharp gap law.
    let sub = SimConfig::from_preset("subcritical-1d")?;
    let (ens, u0) = sub.load_system()?;
    let eff = effective_velocity(&ens, &u0, &sub.kernel, sub.kappa)?;
    cx.require(
        eff.classification == Criticality::Subcritical,
        "marginal profile classified supercritical".to_string(),
    );
    let opts = sub.sim_options(&ens, &u0)?;
    let traj = simulate(&ens, &u0, &sub.kernel, &sub.coupling()?, &opts)?;
    let monitor = order_preservation_monitor(&traj, &ens, &sub.kernel, sub.kappa)?;
    let min_gap = monitor
        .min_scaled_gap
        .iter()
        .fold(f64::INFINITY, |m, &g| m.min(g));
    cx.require(
        min_gap >= 1.0 - 1e-6,
        format!("scaled gap ratio dropped to {min_gap:.9}"),
    );
    cx.require(
        monitor.first_collision_time.is_none(),
        "subcritical run reported a collision".to_string(),
    );

    // Overshooting profile: simultaneous collapse at ln 2, one crossing
    // per pair, within the effective-velocity bound.
    let sup = SimConfig::from_preset("supercritical-1d")?;
    let (ens, u0) = sup.load_system()?;
    let eff = effective_velocity(&ens, &u0, &sup.kernel, sup.kappa)?;
    cx.require(
        eff.classification == Criticality::Supercritical,
        "overshooting profile classified subcritical".to_string(),
    );
    let (i, j) = eff
        .violating_pair
        .ok_or_else(|| crate::Error::arg("no violating pair on the overshooting profile"))?;
    let bound = collision_bound(
        ens.positions()[j],
        ens.positions()[i],
        eff.v_hat[j],
        eff.v_hat[i],
    )?;
    cx.require(
        (bound - 1.0).abs() <= 1e-12,
        format!("collision bound {bound:.12} vs exact 1"),
    );
    let opts = SimOptions {
        dt: 1e-3,
        horizon: 2.0,
        sample_stride: 1,
        grad_u0: None,
        track_diameters: true,
    };
    let traj = simulate(&ens, &u0, &sup.kernel, &sup.coupling()?, &opts)?;
    let monitor = order_preservation_monitor(&traj, &ens, &sup.kernel, sup.kappa)?;
    let t_c = monitor
        .first_collision_time
        .ok_or_else(|| crate::Error::arg("overshooting run reported no collision"))?;
    let ln2 = std::f64::consts::LN_2;
    cx.require(
        (t_c - ln2).abs() <= 1e-3,
        format!("collision at {t_c:.6} vs ln 2 = {ln2:.6}"),
    );
    cx.require(t_c <= bound, format!("collision at {t_c:.6} after bound {bound}"));
    let n = ens.n();
    let mut max_crossings = 0;
    for a in 0..n {
        for b in (a + 1)..n {
            let crossings = single_collision_check(&traj, (a, b))?;
            max_crossings = max_crossings.max(crossings);
        }
    }
    cx.require(
        max_crossings <= 1,
        format!("some pair crossed {max_crossings} times"),
    );
    cx.note(format!(
        "min gap ratio {min_gap:.8}, collision at {t_c:.5} (ln 2 = {ln2:.5}), max crossings {max_crossings}"
    ));
    Ok(())
}

fn criterion_08(cx: &mut Checks) -> Result<()> {
    // Mono-kinetic data under singleton binning: the stress vanishes
    // exactly.
    let grid = sample_ensemble(
        &EnsembleSpec::Grid {
            per_axis: 8,
            extent: 1.0,
        },
        1,
        0,
    )?;
    let u0 = VelocityField::Linear { matrix: vec![-1.0] }.eval_all(grid.positions(), 1);
    let state = crate::sim::PhaseState::new(0.0, 1, grid.positions().to_vec(), u0)?;
    let dis = disintegrate(&state, &grid, 0.01)?;
    let snap = eulerian_snapshot(&state, &grid, &dis)?;
    cx.require(
        reynolds_norm(&snap) == 0.0,
        format!("initial stress {:.3e} not exactly 0", reynolds_norm(&snap)),
    );

    // Coarse binning along a randomized 2D run: PSD moments, the trace
    // identity, the p=2 defect, and the fluctuation identity.
    let run = ball_runs()?
        .iter()
        .find(|r| r.p == 2.0 && r.seed == 11)
        .expect("cached run exists");
    let cp = CouplingParams::new(2.0, 1.0)?;
    let mut min_eig = f64::INFINITY;
    let mut max_trace_res = 0.0f64;
    let mut max_de_res = 0.0f64;
    let mut max_defect = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0add_ce11);
    for sample in &run.traj.samples {
        let state = &sample.state;
        let dis = disintegrate(state, &run.ensemble, 0.25)?;
        let snap = eulerian_snapshot(state, &run.ensemble, &dis)?;
        min_eig = min_eig.min(min_theta_eigenvalue(&snap));
        max_trace_res = max_trace_res.max(trace_identity_residual(&snap, state, &run.ensemble)?);
        // Normalize against the velocity second moment — the scale of the
        // sums whose cancellation produces δE — not against δE itself,
        // which decays to rounding noise once the flock aligns.
        let atoms = crate::analytics::velocity_fluctuation(state, &run.ensemble)?;
        let cells = fluctuation_from_cells(&snap);
        let m2: f64 = run
            .ensemble
            .weights()
            .iter()
            .zip(state.vel.chunks_exact(state.dim))
            .map(|(w, v)| w * v.iter().map(|c| c * c).sum::<f64>())
            .sum();
        max_de_res = max_de_res.max((atoms - cells).abs() / m2.max(1e-300));
        for _ in 0..10 {
            let a = rng.random_range(0..snap.cells.len());
            let b = rng.random_range(0..snap.cells.len());
            let k = defect_kernel(&snap, state, &dis, &snap.cells[a].index, &snap.cells[b].index, &cp)?;
            let knorm = k.iter().map(|x| x * x).sum::<f64>().sqrt();
            max_defect = max_defect.max(knorm);
        }
    }
    cx.require(
        min_eig >= -1e-12,
        format!("stress moment eigenvalue {min_eig:.3e} below -1e-12"),
    );
    cx.require(
        max_trace_res <= 1e-10,
        format!("trace identity residual {max_trace_res:.3e}"),
    );
    cx.require(
        max_defect <= 1e-12,
        format!("p=2 defect kernel reached {max_defect:.3e}"),
    );
    cx.require(
        max_de_res <= 1e-10,
        format!("fluctuation identity residual {max_de_res:.3e}"),
    );
    cx.note(format!(
        "min eig {min_eig:.1e}, trace res {max_trace_res:.1e}, defect {max_defect:.1e}, δE res {max_de_res:.1e}"
    ));
    Ok(())
}

fn criterion_09(cx: &mut Checks) -> Result<()> {
    let mut config = SimConfig::from_preset("supercritical-1d")?;
    config.horizon = 50.0;
    // Sample densely enough to land inside the collapse transient near
    // t = ln 2, where atoms share cells and the stress actually peaks;
    // coarser sampling would pass the decay check with peak 0.
    config.dt = Some(0.01);
    config.sample_stride = 5;
    let (ens, u0) = config.load_system()?;
    let h = ens.position_diameter() / 32.0;
    let opts = config.sim_options(&ens, &u0)?;
    let traj = simulate(&ens, &u0, &config.kernel, &config.coupling()?, &opts)?;

    let stride = traj.sample_stride;
    let mut peak_stress = 0.0f64;
    let mut final_stress = 0.0;
    let mut ubar0 = Vec::new();
    let mut max_ubar_drift = 0.0f64;
    let mut support_excess = 0.0f64;
    let mut final_support = 0.0;
    for (k, sample) in traj.samples.iter().enumerate() {
        let state = &sample.state;
        let dis = disintegrate(state, &ens, h)?;
        let snap = eulerian_snapshot(state, &ens, &dis)?;
        let stress = reynolds_norm(&snap);
        peak_stress = peak_stress.max(stress);
        final_stress = stress;
        let (ubar, support) = velocity_marginal_stats(state, &ens)?;
        if k == 0 {
            ubar0 = ubar.clone();
        }
        for a in 0..traj.dim {
            max_ubar_drift = max_ubar_drift.max((ubar[a] - ubar0[a]).abs());
        }
        let d_v = traj.steps.d_v[(k * stride).min(traj.steps.d_v.len() - 1)];
        support_excess = support_excess.max(support - d_v * (1.0 + 1e-12));
        final_support = support;
    }
    cx.require(
        peak_stress > 0.0,
        "no sample caught the collision transient; the decay check is vacuous".to_string(),
    );
    cx.require(
        final_stress <= 1e-2 * peak_stress,
        format!("terminal stress {final_stress:.3e} vs peak {peak_stress:.3e}"),
    );
    cx.require(
        support_excess <= 0.0,
        format!("velocity support exceeded the diameter by {support_excess:.3e}"),
    );
    let d_v0 = traj.steps.d_v[0];
    cx.require(
        final_support <= 1e-3 * d_v0,
        format!("terminal velocity support {final_support:.3e} vs 1e-3 d_v(0) = {:.3e}", 1e-3 * d_v0),
    );
    cx.require(
        max_ubar_drift <= 1e-10,
        format!("barycentric velocity drifted {max_ubar_drift:.3e}"),
    );
    cx.note(format!(
        "stress peak {peak_stress:.2e} -> terminal {final_stress:.2e}, ubar drift {max_ubar_drift:.1e}"
    ));
    Ok(())
}

fn criterion_10(cx: &mut Checks) -> Result<()> {
    let config = SimConfig::from_preset("large-kappa-euler")?;
    let (ens, u0) = config.load_system()?;
    let cp = config.coupling()?;
    let opts = config.sim_options(&ens, &u0)?;
    let traj = simulate(&ens, &u0, &config.kernel, &cp, &opts)?;

    let report = large_kappa_condition(
        &config.kernel,
        &cp,
        config.u0.grad_sup(1),
        traj.steps.d_v[0],
        ens.position_diameter(),
    )?;
    cx.require(report.satisfied, "damping condition not satisfied".to_string());
    let measured = traj
        .final_jacobian()
        .ok_or_else(|| crate::Error::arg("run tracked no Jacobians"))?
        .accumulated_jv_norm;
    cx.require(
        (measured - 0.5).abs() <= 1e-3,
        format!("gradient integral {measured:.6} vs 0.5"),
    );
    let cert = gronwall_certificate_compare(&report, &traj)?;
    cx.require(
        cert.ok,
        format!("measured {:.6} outside bound {:.6}", cert.measured, cert.bound),
    );
    let inj = injectivity_certificate(&traj)?;
    cx.require(
        inj.certified,
        format!("injectivity certificate value {:.6} not below 1", inj.value),
    );
    cx.note(format!(
        "gradient integral {measured:.5} (bound {:.3}), injectivity value {:.5}",
        cert.bound, inj.value
    ));
    Ok(())
}

fn criterion_11(cx: &mut Checks) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e011);
    for trial in 0..10 {
        let b: f64 = rng.random_range(0.25..4.0);
        let ratio: f64 = rng.random_range(1.1..3.0);
        let a = ratio * b.sqrt();
        let f0: f64 = rng.random_range(0.0..2.0);
        let g0: f64 = rng.random_range(0.1..2.0);
        let cert = integrable_forcing_certificate(a, b, f0, g0)?;
        cx.require(
            cert.ok,
            format!(
                "trial {trial}: integral {:.6e} above bound {:.6e} (a={a:.3}, b={b:.3})",
                cert.numeric_integral, cert.bound
            ),
        );
    }
    for trial in 0..10 {
        let c0: f64 = rng.random_range(0.8..2.0);
        let lambda: f64 = rng.random_range(0.8..2.0);
        let amp: f64 = rng.random_range(0.1..1.0);
        let f0: f64 = rng.random_range(0.0..2.0);
        let g0: f64 = rng.random_range(0.5..2.0);
        let horizon = 25.0;
        let grid = 501;
        let h: Vec<f64> = (0..grid)
            .map(|k| amp * (-lambda * horizon * k as f64 / (grid - 1) as f64).exp())
            .collect();
        let report = lyapunov_certificate(c0, &h, f0, g0, horizon)?;
        cx.require(
            report.bounded,
            format!("trial {trial}: trajectory left the Lyapunov bound (c0={c0:.3})"),
        );
        cx.require(
            report.g_decays,
            format!("trial {trial}: g(T) above 1e-3 g0 (c0={c0:.3}, lambda={lambda:.3})"),
        );
    }
    cx.note("10 damped-forcing certificates, 10 integrable-forcing Lyapunov runs".to_string());
    Ok(())
}

fn criterion_12(cx: &mut Checks) -> Result<()> {
    // Assignment and bottleneck solvers against the line formulas.
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a55);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..48);
        let mu_pts: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let nu_pts: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mu = EmpiricalMeasure::equal(1, mu_pts)?;
        let nu = EmpiricalMeasure::equal(1, nu_pts)?;
        for q in [1.0, 2.0, 3.5] {
            let solver = wasserstein_exact(&mu, &nu, q)?;
            let line = wasserstein_1d(&mu, &nu, q)?;
            worst = worst.max((solver - line).abs() / line.max(1.0));
        }
        let solver = wasserstein_infty(&mu, &nu)?;
        let line = wasserstein_1d(&mu, &nu, f64::INFINITY)?;
        worst = worst.max((solver - line).abs() / line.max(1.0));
    }
    cx.require(
        worst <= 1e-10,
        format!("solver vs line formula deviation {worst:.3e}"),
    );

    // Product bound along two mono-kinetic 64-particle runs.
    let spec = EnsembleSpec::UniformBall {
        radius: 1.0,
        n: 64,
    };
    let cp = CouplingParams::new(2.0, 1.0)?;
    let mut runs = Vec::new();
    let mut reference_ens = None;
    for seed in [31u64, 32] {
        let ens = sample_ensemble(&spec, 2, seed)?;
        let u0 = wave_field().eval_all(ens.positions(), 2);
        let opts = SimOptions {
            dt: 0.05,
            horizon: 5.0,
            sample_stride: 10,
            grad_u0: None,
            track_diameters: false,
        };
        let traj = simulate(&ens, &u0, &heavy_kernel(), &cp, &opts)?;
        if seed == 32 {
            reference_ens = Some(ens);
        }
        runs.push(traj);
    }
    let reference_ens = reference_ens.expect("second run is the reference");
    let mut worst_gap = f64::NEG_INFINITY;
    for (pa, pb) in runs[0].samples.iter().zip(&runs[1].samples) {
        for q in [2.0, f64::INFINITY] {
            let report =
                phase_space_product_bound(&pa.state, &pb.state, &reference_ens, None, q)?;
            let exact = report
                .exact
                .ok_or_else(|| crate::Error::arg("exact distance unavailable"))?;
            worst_gap = worst_gap.max(exact - report.bound * (1.0 + 1e-9));
            cx.require(
                exact <= report.bound * (1.0 + 1e-9),
                format!("q={q}: exact {exact:.6e} above product bound {:.6e}", report.bound),
            );
        }
    }
    cx.note(format!(
        "line-formula deviation {worst:.1e}, worst bound margin {worst_gap:.1e}"
    ));
    Ok(())
}

fn criterion_13(cx: &mut Checks) -> Result<()> {
    let scenario = |p: f64| -> Result<StabilityScenario> {
        Ok(StabilityScenario {
            reference: EnsembleSpec::UniformBall {
                radius: 1.0,
                n: 128,
            },
            reference_seed: 11,
            particle_law: EnsembleSpec::UniformBall {
                radius: 1.0,
                n: 128,
            },
            dim: 2,
            u0: VelocityField::Sinusoid {
                amplitude: vec![0.3, 0.3],
                frequency: vec![1.0, 1.0],
                phase: vec![],
            },
            kernel: heavy_kernel(),
            coupling: CouplingParams::new(p, 1.0)?,
            dt: Some(0.1),
            sample_stride: 20,
        })
    };
    let n_grid = [32usize, 64, 128, 256, 512, 1024];
    let seeds = [21u64, 22, 23];

    let rows = stability_experiment(&scenario(2.0)?, &n_grid, &seeds, 2.0, 50.0)?;
    let mut mean_ratio = vec![0.0f64; n_grid.len()];
    for (ni, &n) in n_grid.iter().enumerate() {
        let per_n: Vec<f64> = rows
            .iter()
            .filter(|r| r.n == n)
            .map(|r| r.ratio)
            .collect();
        mean_ratio[ni] = per_n.iter().sum::<f64>() / per_n.len() as f64;
    }
    let hi = mean_ratio.iter().fold(0.0f64, |m, &x| m.max(x));
    let lo = mean_ratio.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    cx.require(
        hi / lo <= 1.5,
        format!("stability ratio spread {:.3} across N exceeds 1.5", hi / lo),
    );
    let worst_terminal = rows
        .iter()
        .fold(0.0f64, |m, r| m.max(r.terminal_velocity_ratio));
    cx.require(
        worst_terminal <= 0.1,
        format!("terminal velocity energy ratio {worst_terminal:.3e} above 0.1"),
    );

    // p = 3 over a short horizon against the comparison-lemma growth
    // constant, computed from the worst-case initial velocity diameter.
    let sc3 = scenario(3.0)?;
    let rows3 = stability_experiment(&sc3, &n_grid, &seeds, 2.0, 5.0)?;
    let d_v0_max = 2.0 * (2.0f64 * 0.09).sqrt();
    let rate = (2.0 * sc3.coupling.kappa * sc3.kernel.lipschitz_constant()
        * d_v0_max.powf(sc3.coupling.p - 1.0))
    .max(1.0);
    let limit = (rate * 5.0).exp() * 1.1;
    let worst3 = rows3.iter().fold(0.0f64, |m, r| m.max(r.ratio));
    cx.require(
        worst3 <= limit,
        format!("p=3 ratio {worst3:.3} above the growth constant {limit:.3}"),
    );
    cx.note(format!(
        "p=2 ratio spread {:.3} (ratios {:.3}..{:.3}), worst terminal {worst_terminal:.1e}; p=3 worst ratio {worst3:.3} (limit {limit:.0})",
        hi / lo,
        lo,
        hi
    ));
    Ok(())
}

fn criterion_14(cx: &mut Checks) -> Result<()> {
    use std::collections::BTreeMap;

    let scratch = std::env::temp_dir().join(format!("flocklab-accept-{}", std::process::id()));
    std::fs::create_dir_all(&scratch)?;
    let result = (|| -> Result<()> {
        for name in crate::config::PRESET_NAMES {
            let mut base = SimConfig::from_preset(name)?;
            let mode = if base.meanfield.is_some() {
                // The sweep shrinks to a smoke grid: determinism does not
                // depend on scale, and the full grid runs elsewhere.
                base.meanfield = Some(MeanfieldSweep {
                    n_grid: vec![32, 64],
                    seeds: vec![1],
                });
                base.horizon = 2.0;
                RunMode::Meanfield
            } else {
                RunMode::Simulate
            };
            let mut snapshots: Vec<BTreeMap<String, Vec<u8>>> = Vec::new();
            for threads in [1usize, 2, 8] {
                let mut config = base.clone();
                let dir = scratch.join(format!("{name}-{threads}"));
                config.out_dir = dir.to_string_lossy().into_owned();
                run_with_threads(&config, mode, Some(threads))?;
                let mut tree = BTreeMap::new();
                for entry in std::fs::read_dir(&dir)? {
                    let entry = entry?;
                    let file = entry.file_name().to_string_lossy().into_owned();
                    if file == "manifest.json" {
                        continue; // echoes the per-thread output path
                    }
                    let mut bytes = std::fs::read(entry.path())?;
                    if file == "meanfield.csv" {
                        bytes = mask_last_column(&bytes); // wall_time_s
                    }
                    tree.insert(file, bytes);
                }
                snapshots.push(tree);
            }
            for other in &snapshots[1..] {
                cx.require(
                    *other == snapshots[0],
                    format!("preset {name}: artifacts differ across thread counts"),
                );
            }
            cx.require(
                !snapshots[0].is_empty(),
                format!("preset {name}: produced no artifacts"),
            );
        }
        Ok(())
    })();
    let _ = std::fs::remove_dir_all(&scratch);
    result?;
    cx.note("8 presets byte-identical across 1, 2, and 8 worker threads".to_string());
    Ok(())
}

/// Blanks the final CSV column (after the last comma) of every record.
fn mask_last_column(bytes: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(bytes);
    let mut out = String::with_capacity(text.len());
    for line in text.split_inclusive("\r\n") {
        let (body, terminator) = match line.strip_suffix("\r\n") {
            Some(body) => (body, "\r\n"),
            None => (line, ""),
        };
        match body.rsplit_once(',') {
            Some((head, _)) => {
                out.push_str(head);
                out.push_str(",*");
            }
            None => out.push_str(body),
        }
        out.push_str(terminator);
    }
    out.into_bytes()
}
