//! Run orchestration: realizes a configuration, integrates, and writes the
//! artifact set for the requested mode.
//!
//! Every mode writes a `manifest.json` naming the library version, the
//! expanded configuration, and the artifacts produced. Output is
//! deterministic: the same configuration and seed produce byte-identical
//! CSV files regardless of worker-thread count. A blow-up (non-finite
//! state) still writes whatever was computed, plus a `FAILED` marker, and
//! then surfaces as an error.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::analytics::{
    algebraic_rate_fit, decay_envelope, energy_report, explicit_decay_bound, solve_deta_infty,
    DiameterSeries,
};
use crate::config::SimConfig;
use crate::ensemble::{write_atoms_text, AtomEnsemble};
use crate::error::{Error, Result};
use crate::euler::{
    defect_force, disintegrate, dissipation_split, energy_inequality_check, eulerian_snapshot,
    fluctuation_from_cells, reynolds_norm, trace_identity_residual, velocity_marginal_stats,
};
use crate::kernel::Kernel;
use crate::meanfield::{stability_experiment, StabilityScenario};
use crate::report::{fmt_float, fmt_int, write_manifest, CsvSink};
use crate::sampler::EnsembleSpec;
use crate::sim::{
    injectivity_certificate, simulate_partial, two_body_oracle, Trajectory, TwoBodyOracle,
};
use crate::thresholds::{
    collision_bound, effective_velocity, gronwall_certificate_compare, large_kappa_condition,
    order_preservation_monitor, single_collision_check, Criticality,
};

/// The artifact-producing run modes, one per CLI subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Simulate,
    Diagnose,
    Reconstruct,
    Threshold,
    Meanfield,
}

/// What a run produced: where, which files, and the headline quantities
/// (one `key=value` string per line, ready to print).
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub artifacts: Vec<String>,
    pub lines: Vec<String>,
}

/// The expanded configuration as pretty JSON, for `--dry-run` output.
pub fn dry_run_text(config: &SimConfig) -> String {
    let mut text = serde_json::to_string_pretty(&config.to_value())
        .expect("configurations serialize infallibly");
    text.push('\n');
    text
}

/// Executes `config` in the given mode, writing artifacts under
/// `config.out_dir`.
///
/// # Errors
///
/// [`Error::Io`] if artifacts cannot be written; [`Error::BlowUp`] if the
/// state left the finite range (partial artifacts and a `FAILED` marker are
/// still written); any validation error surfaced by the underlying
/// analysis.
pub fn run(config: &SimConfig, mode: RunMode) -> Result<RunSummary> {
    config.validate()?;
    let dir = PathBuf::from(&config.out_dir);
    std::fs::create_dir_all(&dir)?;
    match mode {
        RunMode::Simulate => run_simulate(config, &dir),
        RunMode::Diagnose => run_diagnose(config, &dir),
        RunMode::Reconstruct => run_reconstruct(config, &dir),
        RunMode::Threshold => run_threshold(config, &dir),
        RunMode::Meanfield => run_meanfield(config, &dir),
    }
}

/// Like [`run`], but inside a dedicated rayon pool of `threads` workers
/// when given. Results are identical for every thread count; the pool only
/// bounds parallelism.
///
/// # Errors
///
/// As [`run`]; additionally [`Error::Argument`] if the pool cannot be
/// built.
pub fn run_with_threads(
    config: &SimConfig,
    mode: RunMode,
    threads: Option<usize>,
) -> Result<RunSummary> {
    match threads {
        None => run(config, mode),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::arg(format!("cannot build a {t}-thread pool: {e}")))?;
            pool.install(|| run(config, mode))
        }
    }
}

/// Integrates the configured system, tolerating blow-up (returned as the
/// blow-up time alongside the partial trajectory).
fn integrate(config: &SimConfig) -> Result<(AtomEnsemble, Vec<f64>, Trajectory, Option<f64>)> {
    let (ensemble, u0) = config.load_system()?;
    let cp = config.coupling()?;
    let opts = config.sim_options(&ensemble, &u0)?;
    let (traj, blow_up) = simulate_partial(&ensemble, &u0, &config.kernel, &cp, &opts)?;
    Ok((ensemble, u0, traj, blow_up))
}

/// Finishes a mode that integrated: writes the manifest and either returns
/// the summary or, after a blow-up, writes the `FAILED` marker and errors.
fn seal(
    config: &SimConfig,
    dir: &Path,
    mode: &str,
    mut artifacts: Vec<String>,
    lines: Vec<String>,
    blow_up: Option<f64>,
) -> Result<RunSummary> {
    if let Some(t) = blow_up {
        std::fs::write(
            dir.join("FAILED"),
            format!("state left the finite range near t = {t}\n"),
        )?;
        artifacts.push("FAILED".to_string());
    }
    let names: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    write_manifest(dir, mode, &config.to_value(), &names)?;
    match blow_up {
        Some(t) => Err(Error::BlowUp { t }),
        None => Ok(RunSummary {
            out_dir: dir.to_path_buf(),
            artifacts,
            lines,
        }),
    }
}

/// Writes `series.csv`: the per-step diagnostics of a trajectory.
fn write_series(dir: &Path, traj: &Trajectory) -> Result<()> {
    let d = traj.dim;
    let mut headers = vec![
        "t".to_string(),
        "d_eta".to_string(),
        "d_v".to_string(),
        "kinetic".to_string(),
        "dissipation_rate".to_string(),
        "dissipated".to_string(),
    ];
    for k in 0..d {
        headers.push(format!("momentum_{k}"));
    }
    for k in 0..d {
        headers.push(format!("vmax_{k}"));
    }
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut sink = CsvSink::create(dir.join("series.csv"), &header_refs)?;
    let steps = &traj.steps;
    for k in 0..steps.t.len() {
        let mut row = vec![
            fmt_float(steps.t[k]),
            fmt_float(steps.d_eta[k]),
            fmt_float(steps.d_v[k]),
            fmt_float(steps.kinetic[k]),
            fmt_float(steps.dissipation_rate[k]),
            fmt_float(steps.dissipated[k]),
        ];
        for a in 0..d {
            row.push(fmt_float(steps.momentum[k * d + a]));
        }
        for a in 0..d {
            row.push(fmt_float(steps.vmax_axis[k * d + a]));
        }
        sink.row(&row)?;
    }
    sink.finish()
}

/// Writes `oracle.csv` comparing a two-atom constant-kernel run against its
/// closed form, with a running `max_rel_error` column. Returns false when
/// the closed form does not apply to this run.
fn write_oracle(
    dir: &Path,
    config: &SimConfig,
    u0: &[f64],
    ensemble: &AtomEnsemble,
    traj: &Trajectory,
) -> Result<bool> {
    let Kernel::Constant { c } = config.kernel else {
        return Ok(false);
    };
    if ensemble.n() != 2 {
        return Ok(false);
    }
    let d = traj.dim;
    let cp = config.coupling()?;
    let w0: Vec<f64> = (0..d).map(|k| u0[d + k] - u0[k]).collect();
    let d0: Vec<f64> = (0..d)
        .map(|k| ensemble.positions()[d + k] - ensemble.positions()[k])
        .collect();
    // Classify once; the variant depends only on (p, data), not on t.
    let probe_t = traj.dt.max(1e-6);
    let Ok(variant) = two_body_oracle(&cp, c, &w0, &d0, probe_t) else {
        return Ok(false);
    };
    let full = matches!(variant, TwoBodyOracle::Full { .. });
    let headers: &[&str] = if full {
        &[
            "t",
            "d_norm",
            "d_norm_exact",
            "w_norm",
            "w_norm_exact",
            "rel_error",
            "max_rel_error",
        ]
    } else {
        &["t", "w_norm", "w_norm_exact", "rel_error", "max_rel_error"]
    };
    let mut sink = CsvSink::create(dir.join("oracle.csv"), headers)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut max_rel = 0.0f64;
    for sample in &traj.samples {
        let state = &sample.state;
        let d_sim: Vec<f64> = (0..d).map(|k| state.eta[d + k] - state.eta[k]).collect();
        let w_sim: Vec<f64> = (0..d).map(|k| state.vel[d + k] - state.vel[k]).collect();
        match two_body_oracle(&cp, c, &w0, &d0, state.t)? {
            TwoBodyOracle::Full { d: d_ex, w: w_ex } => {
                let d_err: f64 = (0..d).map(|k| (d_sim[k] - d_ex[k]).powi(2)).sum::<f64>().sqrt();
                let w_err: f64 = (0..d).map(|k| (w_sim[k] - w_ex[k]).powi(2)).sum::<f64>().sqrt();
                let rel = (d_err / norm(&d_ex).max(1e-300))
                    .max(w_err / norm(&w_ex).max(1e-300));
                max_rel = max_rel.max(rel);
                sink.row(&[
                    fmt_float(state.t),
                    fmt_float(norm(&d_sim)),
                    fmt_float(norm(&d_ex)),
                    fmt_float(norm(&w_sim)),
                    fmt_float(norm(&w_ex)),
                    fmt_float(rel),
                    fmt_float(max_rel),
                ])?;
            }
            TwoBodyOracle::SpeedOnly { w_norm } => {
                let rel = (norm(&w_sim) - w_norm).abs() / w_norm.max(1e-300);
                max_rel = max_rel.max(rel);
                sink.row(&[
                    fmt_float(state.t),
                    fmt_float(norm(&w_sim)),
                    fmt_float(w_norm),
                    fmt_float(rel),
                    fmt_float(max_rel),
                ])?;
            }
        }
    }
    sink.finish()?;
    Ok(true)
}

fn run_simulate(config: &SimConfig, dir: &Path) -> Result<RunSummary> {
    let (ensemble, u0, traj, blow_up) = integrate(config)?;
    let mut artifacts = vec!["series.csv".to_string()];
    write_series(dir, &traj)?;

    let final_state = traj.final_state();
    let moved = AtomEnsemble::new(
        traj.dim,
        final_state.eta.clone(),
        ensemble.weights().to_vec(),
    )?;
    std::fs::write(
        dir.join("atoms_final.txt"),
        write_atoms_text(&moved, &final_state.vel)?,
    )?;
    artifacts.push("atoms_final.txt".to_string());

    if write_oracle(dir, config, &u0, &ensemble, &traj)? {
        artifacts.push("oracle.csv".to_string());
    }

    let steps = &traj.steps;
    let last = steps.t.len() - 1;
    let lines = vec![
        format!("steps={}", traj.n_steps()),
        format!("final_t={}", fmt_float(steps.t[last])),
        format!("d_eta_final={}", fmt_float(steps.d_eta[last])),
        format!("d_v_final={}", fmt_float(steps.d_v[last])),
    ];
    seal(config, dir, "simulate", artifacts, lines, blow_up)
}

fn run_diagnose(config: &SimConfig, dir: &Path) -> Result<RunSummary> {
    let (_ensemble, _u0, traj, blow_up) = integrate(config)?;
    let cp = config.coupling()?;
    let series = DiameterSeries::from_trajectory(&traj)?;
    let envelope = decay_envelope(&series, &config.kernel, &cp)?;

    let mut sink = CsvSink::create(
        dir.join("envelope.csv"),
        &["t", "d_eta", "d_v", "envelope", "ratio"],
    )?;
    let mut envelope_ok = true;
    for k in 0..series.len() {
        let ratio = if envelope[k] > 0.0 {
            series.d_v[k] / envelope[k]
        } else if series.d_v[k] == 0.0 {
            1.0
        } else {
            f64::INFINITY
        };
        envelope_ok &= series.d_v[k] <= envelope[k] * (1.0 + crate::tolerances::ENVELOPE_SLACK_REL);
        sink.row(&[
            fmt_float(series.times[k]),
            fmt_float(series.d_eta[k]),
            fmt_float(series.d_v[k]),
            fmt_float(envelope[k]),
            fmt_float(ratio),
        ])?;
    }
    sink.finish()?;

    let ledger = energy_report(&traj)?;
    let mut sink = CsvSink::create(
        dir.join("energy.csv"),
        &["t", "kinetic", "dissipated", "residual"],
    )?;
    for k in 0..ledger.times.len() {
        sink.row(&[
            fmt_float(ledger.times[k]),
            fmt_float(ledger.kinetic[k]),
            fmt_float(ledger.dissipated[k]),
            fmt_float(ledger.residual[k]),
        ])?;
    }
    sink.finish()?;

    // Headline checks: momentum conservation, the velocity maximum
    // principle, and the diameter envelope.
    let d = traj.dim;
    let steps = &traj.steps;
    let mom_scale = (0..d)
        .map(|a| steps.momentum[a].abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut mom_drift = 0.0f64;
    let mut max_principle_ok = true;
    for k in 0..steps.t.len() {
        for a in 0..d {
            mom_drift = mom_drift.max((steps.momentum[k * d + a] - steps.momentum[a]).abs());
            max_principle_ok &= steps.vmax_axis[k * d + a]
                <= steps.vmax_axis[a] * (1.0 + crate::tolerances::MAX_PRINCIPLE_SLACK) + 1e-30;
        }
    }
    let ledger_max_residual = ledger.residual.iter().fold(0.0f64, |m, &r| m.max(r.abs()));

    let mut report = json!({
        "max_momentum_drift_rel": mom_drift / mom_scale,
        "max_principle_ok": max_principle_ok,
        "envelope_ok": envelope_ok,
        "ledger_max_residual": ledger_max_residual,
        "kink_crossings": traj.kink_crossings,
    });

    // Conditional-flocking budget, where the theory applies.
    if (2.0..3.0).contains(&cp.p) {
        if let Ok(threshold) = solve_deta_infty(&cp, &config.kernel, series.d_v[0], series.d_eta[0])
        {
            let max_d_eta = series.d_eta.iter().fold(0.0f64, |m, &x| m.max(x));
            let within = threshold
                .d_eta_infty
                .map(|lim| max_d_eta <= lim * (1.0 + crate::tolerances::ENVELOPE_SLACK_REL));
            let mut explicit_ok = None;
            if threshold.conditional_ok && threshold.phi_at_infty > 0.0 {
                let mut all = true;
                for k in 0..series.len() {
                    let bound = explicit_decay_bound(
                        &cp,
                        threshold.phi_at_infty,
                        series.d_v[0],
                        series.times[k],
                    )?;
                    all &= series.d_v[k]
                        <= bound * (1.0 + crate::tolerances::ENVELOPE_SLACK_REL);
                }
                explicit_ok = Some(all);
            }
            report["conditional"] = json!({
                "ok": threshold.conditional_ok,
                "d_eta_infty": threshold.d_eta_infty,
                "phi_at_infty": threshold.phi_at_infty,
                "max_d_eta_within": within,
                "explicit_decay_ok": explicit_ok,
            });
        }
    }

    // Algebraic decay rate over the window the run actually covers.
    let t_last = *series.times.last().unwrap();
    if t_last >= 20.0 {
        let t2 = t_last.min(100.0);
        if let Ok(slope) = algebraic_rate_fit(&series, t2 / 10.0, t2) {
            report["algebraic_slope"] = json!(slope);
        }
    }

    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(dir.join("diagnose.json"), text)?;

    let artifacts = vec![
        "envelope.csv".to_string(),
        "energy.csv".to_string(),
        "diagnose.json".to_string(),
    ];
    let lines = vec![
        format!("envelope_ok={envelope_ok}"),
        format!("max_principle_ok={max_principle_ok}"),
        format!("ledger_max_residual={}", fmt_float(ledger_max_residual)),
    ];
    seal(config, dir, "diagnose", artifacts, lines, blow_up)
}

/// Smallest eigenvalue among the second-moment matrices of a snapshot's
/// cells (0 for an empty snapshot).
pub(crate) fn min_theta_eigenvalue(snapshot: &crate::euler::EulerianSnapshot) -> f64 {
    let d = snapshot.dim;
    let mut min_eig = f64::INFINITY;
    for cell in &snapshot.cells {
        let m = nalgebra::DMatrix::from_row_slice(d, d, &cell.theta);
        for &lambda in m.symmetric_eigen().eigenvalues.iter() {
            min_eig = min_eig.min(lambda);
        }
    }
    if min_eig.is_finite() {
        min_eig
    } else {
        0.0
    }
}

fn run_reconstruct(config: &SimConfig, dir: &Path) -> Result<RunSummary> {
    let (ensemble, _u0, traj, blow_up) = integrate(config)?;
    let cp = config.coupling()?;
    let d = traj.dim;
    let h = config.h;

    let mut headers = vec![
        "t".to_string(),
        "n_cells".to_string(),
        "reynolds_norm".to_string(),
        "trace_residual".to_string(),
        "min_theta_eig".to_string(),
        "vel_support_diameter".to_string(),
        "delta_e_atoms".to_string(),
        "delta_e_cells".to_string(),
    ];
    for k in 0..d {
        headers.push(format!("ubar_{k}"));
    }
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut sink = CsvSink::create(dir.join("reynolds.csv"), &header_refs)?;
    let mut final_snapshot = None;
    for sample in &traj.samples {
        let state = &sample.state;
        let dis = disintegrate(state, &ensemble, h)?;
        let snapshot = eulerian_snapshot(state, &ensemble, &dis)?;
        let (ubar, support) = velocity_marginal_stats(state, &ensemble)?;
        let mut row = vec![
            fmt_float(state.t),
            fmt_int(snapshot.cells.len()),
            fmt_float(reynolds_norm(&snapshot)),
            fmt_float(trace_identity_residual(&snapshot, state, &ensemble)?),
            fmt_float(min_theta_eigenvalue(&snapshot)),
            fmt_float(support),
            fmt_float(crate::analytics::velocity_fluctuation(state, &ensemble)?),
            fmt_float(fluctuation_from_cells(&snapshot)),
        ];
        for a in 0..d {
            row.push(fmt_float(ubar[a]));
        }
        sink.row(&row)?;
        final_snapshot = Some((dis, snapshot));
    }
    sink.finish()?;

    let (final_dis, final_snap) = final_snapshot.expect("trajectory has samples");
    let mut headers = Vec::new();
    for k in 0..d {
        headers.push(format!("index_{k}"));
    }
    for k in 0..d {
        headers.push(format!("center_{k}"));
    }
    headers.push("rho".to_string());
    for k in 0..d {
        headers.push(format!("u_{k}"));
    }
    for a in 0..d {
        for b in 0..d {
            headers.push(format!("theta_{a}{b}"));
        }
    }
    headers.push("trace_theta".to_string());
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut sink = CsvSink::create(dir.join("cells.csv"), &header_refs)?;
    for cell in &final_snap.cells {
        let mut row = Vec::with_capacity(header_refs.len());
        for k in 0..d {
            row.push(fmt_int(cell.index[k]));
        }
        for k in 0..d {
            row.push(fmt_float(cell.center[k]));
        }
        row.push(fmt_float(cell.rho));
        for k in 0..d {
            row.push(fmt_float(cell.u[k]));
        }
        for e in &cell.theta {
            row.push(fmt_float(*e));
        }
        row.push(fmt_float(cell.trace_theta()));
        sink.row(&row)?;
    }
    sink.finish()?;

    let era = energy_inequality_check(&traj, &ensemble, &config.kernel, &cp, h)?;
    let mut sink = CsvSink::create(dir.join("era.csv"), &["t", "energy", "dissipated", "lhs"])?;
    for k in 0..era.times.len() {
        sink.row(&[
            fmt_float(era.times[k]),
            fmt_float(era.energy[k]),
            fmt_float(era.dissipated[k]),
            fmt_float(era.lhs[k]),
        ])?;
    }
    sink.finish()?;
    // The inequality holds up to the freezing error (∝ L_φ h) and the
    // trapezoid error of the dissipation quadrature over the retained
    // sample spacing.
    let dt_s = traj.dt * traj.sample_stride as f64;
    let rate_curvature = (1.0 + 2.0 * cp.kappa * config.kernel.peak()).powi(2);
    let era_budget = |t: f64| {
        2.0 * config.kernel.lipschitz_constant() * h * era.rhs * t
            + dt_s * dt_s * rate_curvature * era.rhs * t
            + 1e-12
    };
    let era_max_lhs = era.lhs.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let era_ok = era
        .times
        .iter()
        .zip(&era.lhs)
        .all(|(&t, &lhs)| lhs <= era.rhs + era_budget(t));

    let final_state = traj.final_state();
    let mut report = json!({
        "era_rhs": era.rhs,
        "era_max_lhs": era_max_lhs,
        "era_ok": era_ok,
        "cells_final": final_snap.cells.len(),
    });
    if cp.p == 2.0 {
        let defect = defect_force(&final_snap, final_state, &final_dis, &config.kernel, &cp)?;
        report["defect_total_norm"] = json!(defect.total_norm);
        let split = dissipation_split(
            &final_snap,
            final_state,
            &ensemble,
            &final_dis,
            &config.kernel,
            &cp,
        )?;
        report["dissipation_split"] = json!({
            "d_ea": split.d_ea,
            "d_rey": split.d_rey,
            "d_total": split.d_total,
            "residual": split.residual,
        });
    }
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(dir.join("euler.json"), text)?;

    let artifacts = vec![
        "reynolds.csv".to_string(),
        "cells.csv".to_string(),
        "era.csv".to_string(),
        "euler.json".to_string(),
    ];
    let lines = vec![
        format!("cells_final={}", final_snap.cells.len()),
        format!("era_ok={era_ok}"),
    ];
    seal(config, dir, "reconstruct", artifacts, lines, blow_up)
}

fn run_threshold(config: &SimConfig, dir: &Path) -> Result<RunSummary> {
    if config.dim != 1 {
        return Err(Error::unsupported(
            "threshold analysis is one-dimensional; set dim = 1",
        ));
    }
    let (ensemble, u0) = config.load_system()?;
    let cp = config.coupling()?;
    let eff = effective_velocity(&ensemble, &u0, &config.kernel, config.kappa)?;

    let mut lines = Vec::new();
    lines.push(format!(
        "classification={}",
        match eff.classification {
            Criticality::Subcritical => "subcritical",
            Criticality::Supercritical => "supercritical",
        }
    ));
    match eff.violating_pair {
        Some((i, j)) => {
            lines.push(format!("violating_pair={i},{j}"));
            // (i, j) is (left, right) by position; the bound wants the
            // right atom first.
            let bound = collision_bound(
                ensemble.positions()[j],
                ensemble.positions()[i],
                eff.v_hat[j],
                eff.v_hat[i],
            )?;
            lines.push(format!("t_c_bound={}", fmt_float(bound)));
        }
        None => lines.push("violating_pair=none".to_string()),
    }

    let opts = config.sim_options(&ensemble, &u0)?;
    let (traj, blow_up) = simulate_partial(&ensemble, &u0, &config.kernel, &cp, &opts)?;
    let monitor = order_preservation_monitor(&traj, &ensemble, &config.kernel, config.kappa)?;
    let min_gap = monitor
        .min_scaled_gap
        .iter()
        .fold(f64::INFINITY, |m, &g| m.min(g));
    lines.push(format!("min_scaled_gap={}", fmt_float(min_gap)));
    match monitor.first_collision_time {
        Some(t) => lines.push(format!("first_collision_time={}", fmt_float(t))),
        None => lines.push("first_collision_time=none".to_string()),
    }
    if let Some(pair) = eff.violating_pair {
        let crossings = single_collision_check(&traj, pair)?;
        lines.push(format!("crossings={crossings}"));
    }

    // The strong-coupling certificate needs p = 2 and a closed-form
    // velocity profile (file ensembles carry no gradient).
    if cp.p == 2.0 && !matches!(config.ensemble, EnsembleSpec::File { .. }) {
        let d_eta0 = ensemble.position_diameter();
        let d_v0 = traj.steps.d_v[0];
        let grad_sup = config.u0.grad_sup(1);
        let large = large_kappa_condition(&config.kernel, &cp, grad_sup, d_v0, d_eta0)?;
        lines.push(format!("kappa_threshold={}", fmt_float(large.threshold)));
        lines.push(format!("satisfied={}", large.satisfied));
        match large.predicted_gradient_integral {
            Some(b) => lines.push(format!("predicted_gradient_integral={}", fmt_float(b))),
            None => lines.push("predicted_gradient_integral=none".to_string()),
        }
        if traj.final_jacobian().is_some() {
            let cert = gronwall_certificate_compare(&large, &traj)?;
            lines.push(format!("gradient_integral_measured={}", fmt_float(cert.measured)));
            lines.push(format!("certificate_ok={}", cert.ok));
            let inj = injectivity_certificate(&traj)?;
            lines.push(format!("injectivity_value={}", fmt_float(inj.value)));
            lines.push(format!("injectivity_certified={}", inj.certified));
        }
    }

    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(dir.join("threshold.txt"), text)?;
    let artifacts = vec!["threshold.txt".to_string()];
    seal(config, dir, "threshold", artifacts, lines, blow_up)
}

fn run_meanfield(config: &SimConfig, dir: &Path) -> Result<RunSummary> {
    let sweep = config.meanfield.as_ref().ok_or_else(|| {
        Error::arg("mean-field mode needs a `meanfield` section (n_grid, seeds)")
    })?;
    let cp = config.coupling()?;
    let scenario = StabilityScenario {
        reference: config.ensemble.clone(),
        reference_seed: config.seed,
        particle_law: config.ensemble.clone(),
        dim: config.dim,
        u0: config.u0.clone(),
        kernel: config.kernel,
        coupling: cp,
        dt: config.dt,
        sample_stride: config.sample_stride,
    };

    let mut sink = CsvSink::create(
        dir.join("meanfield.csv"),
        &[
            "N",
            "seed",
            "q",
            "sup_ratio",
            "terminal_velocity_ratio",
            "wall_time_s",
        ],
    )?;
    let mut lines = Vec::new();
    for q in &config.q {
        let rows = stability_experiment(&scenario, &sweep.n_grid, &sweep.seeds, q.0, config.horizon)?;
        let worst = rows.iter().fold(0.0f64, |m, r| m.max(r.ratio));
        lines.push(format!("q={q} max_sup_ratio={}", fmt_float(worst)));
        for row in rows {
            sink.row(&[
                fmt_int(row.n),
                fmt_int(row.seed),
                q.to_string(),
                fmt_float(row.ratio),
                fmt_float(row.terminal_velocity_ratio),
                fmt_float(row.wall_time_s),
            ])?;
        }
    }
    sink.finish()?;

    let artifacts = vec!["meanfield.csv".to_string()];
    seal(config, dir, "meanfield", artifacts, lines, None)
}
