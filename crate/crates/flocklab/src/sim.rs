//! Time integration of the weighted alignment system
//!
//! ```text
//!   η̇_i = v_i,
//!   v̇_i = κ Σ_j w_j φ(|η_i − η_j|) G_p(v_j − v_i),
//! ```
//!
//! by classical fixed-step RK4, with a step-synchronous energy ledger,
//! optional co-integration of the per-atom label Jacobians (J^η, J^v), and
//! exact two-body oracles for the constant kernel.
//!
//! The atomic ensemble represents the initial measure exactly, so the
//! nonlocal term is an exact weighted sum — the only discretization error is
//! time stepping. Fixed steps (no adaptivity) keep runs bit-reproducible;
//! within a right-hand-side evaluation the inner sum always runs in
//! ascending atom order and parallelism is only over the target atom, so
//! results are independent of thread count.

use rayon::prelude::*;

use crate::coupling::{add_scaled_grad_g_p, CouplingParams, GpFactor};
use crate::ensemble::AtomEnsemble;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::{matmul, spectral_norm, transpose_apply};

/// Positions and velocities of every atom at a single time.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub t: f64,
    pub dim: usize,
    /// Flat positions, stride `dim`.
    pub eta: Vec<f64>,
    /// Flat velocities, stride `dim`.
    pub vel: Vec<f64>,
}

impl PhaseState {
    pub fn new(t: f64, dim: usize, eta: Vec<f64>, vel: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("phase state dimension must be at least 1"));
        }
        if eta.len() != vel.len() || eta.is_empty() || eta.len() % dim != 0 {
            return Err(Error::arg(format!(
                "phase state buffers must hold the same positive multiple of dim={dim} entries, got {} positions and {} velocities",
                eta.len(),
                vel.len()
            )));
        }
        Ok(PhaseState { t, dim, eta, vel })
    }

    pub fn n(&self) -> usize {
        self.eta.len() / self.dim
    }

    pub fn eta_of(&self, i: usize) -> &[f64] {
        &self.eta[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vel_of(&self, i: usize) -> &[f64] {
        &self.vel[i * self.dim..(i + 1) * self.dim]
    }
}

/// Per-atom label Jacobians J^η_i = ∇η_t and J^v_i = ∇v_t (d×d row-major
/// blocks), together with the running certificate integral
/// ∫₀ᵗ max_i ‖J^v_i(s)‖₂ ds, accumulated by the same RK4 quadrature as the
/// state itself.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianState {
    pub jeta: Vec<f64>,
    pub jvel: Vec<f64>,
    pub accumulated_jv_norm: f64,
}

impl JacobianState {
    /// Initial data J^η = I, J^v = ∇u₀ (one d×d block per atom).
    pub fn initial(n: usize, dim: usize, grad_u0: &[f64]) -> Result<Self> {
        if grad_u0.len() != n * dim * dim {
            return Err(Error::arg(format!(
                "grad_u0 must hold {} entries ({n} blocks of {dim}×{dim}), got {}",
                n * dim * dim,
                grad_u0.len()
            )));
        }
        let mut jeta = vec![0.0; n * dim * dim];
        for i in 0..n {
            for a in 0..dim {
                jeta[i * dim * dim + a * dim + a] = 1.0;
            }
        }
        Ok(JacobianState {
            jeta,
            jvel: grad_u0.to_vec(),
            accumulated_jv_norm: 0.0,
        })
    }

    /// max over atoms of the operator 2-norm of J^v_i.
    pub fn max_jv_norm(&self, dim: usize) -> f64 {
        max_block_norm(&self.jvel, dim)
    }
}

fn max_block_norm(blocks: &[f64], dim: usize) -> f64 {
    blocks
        .chunks_exact(dim * dim)
        .map(|b| spectral_norm(b, dim))
        .fold(0.0, f64::max)
}

/// Scalar diagnostics recorded at every integration step (index 0 is the
/// initial state). `momentum` and `vmax_axis` are flat with stride `dim`.
#[derive(Clone, Debug, Default)]
pub struct StepDiagnostics {
    pub t: Vec<f64>,
    pub momentum: Vec<f64>,
    pub vmax_axis: Vec<f64>,
    pub kinetic: Vec<f64>,
    /// Instantaneous dissipation (κ/2) ΣΣ w_i w_j φ(|η_i−η_j|) |v_i−v_j|^p.
    pub dissipation_rate: Vec<f64>,
    /// RK4 quadrature of the dissipation rate over [0, t].
    pub dissipated: Vec<f64>,
    /// Position diameter per step (empty unless tracked).
    pub d_eta: Vec<f64>,
    /// Velocity diameter per step (empty unless tracked).
    pub d_v: Vec<f64>,
    /// Whether a step moved some pair across the bump-kernel kink (empty for
    /// kernels without a kink).
    pub kink: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct TrajectorySample {
    pub state: PhaseState,
    pub jacobian: Option<JacobianState>,
}

/// Output of [`simulate`]: states stored every `sample_stride` steps (always
/// including the initial and final state) plus per-step diagnostics.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dim: usize,
    pub dt: f64,
    pub sample_stride: usize,
    pub samples: Vec<TrajectorySample>,
    pub steps: StepDiagnostics,
    /// Number of steps on which some atom pair crossed the bump-kernel kink.
    pub kink_crossings: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &PhaseState {
        &self.samples.last().expect("trajectory has samples").state
    }

    pub fn final_jacobian(&self) -> Option<&JacobianState> {
        self.samples.last().and_then(|s| s.jacobian.as_ref())
    }

    pub fn n_steps(&self) -> usize {
        self.steps.t.len().saturating_sub(1)
    }
}

/// Integration options for [`simulate`].
#[derive(Clone, Debug)]
pub struct SimOptions {
    pub dt: f64,
    pub horizon: f64,
    pub sample_stride: usize,
    /// Per-atom ∇u₀ blocks (n·d·d entries); present iff label Jacobians are
    /// co-integrated.
    pub grad_u0: Option<Vec<f64>>,
    /// Record position/velocity diameters every step (O(N²) per step).
    pub track_diameters: bool,
}

impl SimOptions {
    fn validate(&self, n: usize, dim: usize) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::arg(format!(
                "time step must be positive and finite, got {}",
                self.dt
            )));
        }
        if !self.horizon.is_finite() || self.horizon < 0.0 {
            return Err(Error::arg(format!(
                "horizon must be non-negative and finite, got {}",
                self.horizon
            )));
        }
        if self.sample_stride == 0 {
            return Err(Error::arg("sample stride must be at least 1"));
        }
        if let Some(g) = &self.grad_u0 {
            if g.len() != n * dim * dim {
                return Err(Error::arg(format!(
                    "grad_u0 must hold {} entries ({n} blocks of {dim}×{dim}), got {}",
                    n * dim * dim,
                    g.len()
                )));
            }
        }
        Ok(())
    }
}

/// Kernel evaluation specialized once per run; every branch is a fixed
/// closed form, so a run's arithmetic never depends on scheduling.
#[derive(Clone, Copy)]
enum PhiEval {
    Const(f64),
    /// (1+r)^(−1/2)
    PowHalf,
    /// (1+r)^(−1)
    PowOne,
    /// (1+r)^(−2)
    PowTwo,
    Pow(f64),
    Bump { inv_radius: f64 },
}

impl PhiEval {
    fn new(kernel: &Kernel) -> Self {
        match *kernel {
            Kernel::Constant { c } => PhiEval::Const(c),
            Kernel::PowerLaw { beta } => {
                if beta == 0.5 {
                    PhiEval::PowHalf
                } else if beta == 1.0 {
                    PhiEval::PowOne
                } else if beta == 2.0 {
                    PhiEval::PowTwo
                } else {
                    PhiEval::Pow(beta)
                }
            }
            Kernel::CompactBump { radius } => PhiEval::Bump {
                inv_radius: 1.0 / radius,
            },
        }
    }

    #[inline(always)]
    fn eval(self, r: f64) -> f64 {
        match self {
            PhiEval::Const(c) => c,
            PhiEval::PowHalf => 1.0 / (1.0 + r).sqrt(),
            PhiEval::PowOne => 1.0 / (1.0 + r),
            PhiEval::PowTwo => {
                let q = 1.0 + r;
                1.0 / (q * q)
            }
            PhiEval::Pow(beta) => (1.0 + r).powf(-beta),
            PhiEval::Bump { inv_radius } => {
                let t = 1.0 - r * inv_radius;
                if t > 0.0 {
                    t
                } else {
                    0.0
                }
            }
        }
    }
}

/// Everything the per-atom force accumulation needs, borrowed immutably so
/// the per-target loop can run in parallel.
struct ForceCtx<'a> {
    eta: &'a [f64],
    vel: &'a [f64],
    w: &'a [f64],
    phi: PhiEval,
    gp: GpFactor,
    kappa: f64,
}

impl ForceCtx<'_> {
    /// Acceleration of atom i into `out` (length D); returns the atom's
    /// dissipation share Σ_j w_i w_j φ |Δv|^p. Inner sum ascending in j.
    #[inline(always)]
    fn accumulate<const D: usize>(&self, i: usize, out: &mut [f64]) -> f64 {
        let xi: &[f64; D] = self.eta[i * D..(i + 1) * D].try_into().unwrap();
        let vi: &[f64; D] = self.vel[i * D..(i + 1) * D].try_into().unwrap();
        let mut acc = [0.0f64; D];
        let mut rate = 0.0f64;
        for ((xj, vj), &wj) in self
            .eta
            .chunks_exact(D)
            .zip(self.vel.chunks_exact(D))
            .zip(self.w.iter())
        {
            let mut r2 = 0.0;
            let mut dv = [0.0f64; D];
            let mut s2 = 0.0;
            for k in 0..D {
                let dx = xi[k] - xj[k];
                r2 += dx * dx;
                dv[k] = vj[k] - vi[k];
                s2 += dv[k] * dv[k];
            }
            let phi = self.phi.eval(r2.sqrt());
            let g = self.gp.eval(s2);
            let c = wj * phi * g;
            for k in 0..D {
                acc[k] += c * dv[k];
            }
            rate += c * s2;
        }
        for k in 0..D {
            out[k] = self.kappa * acc[k];
        }
        self.w[i] * rate
    }

    fn accumulate_dyn(&self, d: usize, i: usize, out: &mut [f64]) -> f64 {
        let xi = &self.eta[i * d..(i + 1) * d];
        let vi = &self.vel[i * d..(i + 1) * d];
        out.fill(0.0);
        let mut rate = 0.0f64;
        let mut dv = vec![0.0f64; d];
        for ((xj, vj), &wj) in self
            .eta
            .chunks_exact(d)
            .zip(self.vel.chunks_exact(d))
            .zip(self.w.iter())
        {
            let mut r2 = 0.0;
            let mut s2 = 0.0;
            for k in 0..d {
                let dx = xi[k] - xj[k];
                r2 += dx * dx;
                dv[k] = vj[k] - vi[k];
                s2 += dv[k] * dv[k];
            }
            let phi = self.phi.eval(r2.sqrt());
            let g = self.gp.eval(s2);
            let c = wj * phi * g;
            for k in 0..d {
                out[k] += c * dv[k];
            }
            rate += c * s2;
        }
        for k in 0..d {
            out[k] *= self.kappa;
        }
        self.w[i] * rate
    }
}

/// Parallelize over target atoms only above this count; below it the rayon
/// dispatch overhead dominates. Both paths compute identical bits.
const PAR_THRESHOLD: usize = 64;

fn force_pass(
    dim: usize,
    ctx: &ForceCtx<'_>,
    acc: &mut [f64],
    rates: &mut [f64],
) {
    let n = rates.len();
    macro_rules! run {
        ($D:literal) => {{
            if n >= PAR_THRESHOLD {
                acc.par_chunks_mut($D)
                    .zip(rates.par_iter_mut())
                    .enumerate()
                    .for_each(|(i, (out, rate))| *rate = ctx.accumulate::<$D>(i, out));
            } else {
                for (i, (out, rate)) in acc.chunks_exact_mut($D).zip(rates.iter_mut()).enumerate()
                {
                    *rate = ctx.accumulate::<$D>(i, out);
                }
            }
        }};
    }
    match dim {
        1 => run!(1),
        2 => run!(2),
        3 => run!(3),
        d => {
            if n >= PAR_THRESHOLD {
                acc.par_chunks_mut(d)
                    .zip(rates.par_iter_mut())
                    .enumerate()
                    .for_each(|(i, (out, rate))| *rate = ctx.accumulate_dyn(d, i, out));
            } else {
                for (i, (out, rate)) in acc.chunks_exact_mut(d).zip(rates.iter_mut()).enumerate() {
                    *rate = ctx.accumulate_dyn(d, i, out);
                }
            }
        }
    }
}

/// Max pairwise position and velocity distances (exact O(N²) scan).
pub(crate) fn phase_diameters(dim: usize, eta: &[f64], vel: &[f64]) -> (f64, f64) {
    let n = eta.len() / dim;
    let body = |i: usize| -> (f64, f64) {
        let xi = &eta[i * dim..(i + 1) * dim];
        let vi = &vel[i * dim..(i + 1) * dim];
        let mut best_x = 0.0f64;
        let mut best_v = 0.0f64;
        for j in (i + 1)..n {
            let xj = &eta[j * dim..(j + 1) * dim];
            let vj = &vel[j * dim..(j + 1) * dim];
            let mut dx2 = 0.0;
            let mut dv2 = 0.0;
            for k in 0..dim {
                let dx = xi[k] - xj[k];
                let dv = vi[k] - vj[k];
                dx2 += dx * dx;
                dv2 += dv * dv;
            }
            best_x = best_x.max(dx2);
            best_v = best_v.max(dv2);
        }
        (best_x, best_v)
    };
    let (mx, mv) = if n >= PAR_THRESHOLD {
        (0..n)
            .into_par_iter()
            .map(body)
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)))
    } else {
        (0..n).map(body).fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)))
    };
    (mx.sqrt(), mv.sqrt())
}

/// Whether any pair's distance moved across the bump-kernel support radius
/// between two position snapshots.
fn kink_crossed(dim: usize, radius: f64, eta_before: &[f64], eta_after: &[f64]) -> bool {
    let n = eta_before.len() / dim;
    let r2 = radius * radius;
    let side = |eta: &[f64], i: usize, j: usize| -> bool {
        let mut acc = 0.0;
        for k in 0..dim {
            let dx = eta[i * dim + k] - eta[j * dim + k];
            acc += dx * dx;
        }
        acc < r2
    };
    for i in 0..n {
        for j in (i + 1)..n {
            if side(eta_before, i, j) != side(eta_after, i, j) {
                return true;
            }
        }
    }
    false
}

/// Accelerations a_i = κ Σ_j w_j φ(|η_i − η_j|) G_p(v_j − v_i). The self
/// term contributes exactly zero; the inner sum runs in ascending j.
pub fn alignment_rhs(
    state: &PhaseState,
    ensemble: &AtomEnsemble,
    kernel: &Kernel,
    cp: &CouplingParams,
) -> Result<Vec<f64>> {
    check_aligned(state, ensemble)?;
    kernel.validate()?;
    cp.validate()?;
    let ctx = ForceCtx {
        eta: &state.eta,
        vel: &state.vel,
        w: ensemble.weights(),
        phi: PhiEval::new(kernel),
        gp: GpFactor::new(cp.p),
        kappa: cp.kappa,
    };
    let mut acc = vec![0.0; state.eta.len()];
    let mut rates = vec![0.0; ensemble.n()];
    force_pass(state.dim, &ctx, &mut acc, &mut rates);
    Ok(acc)
}

fn check_aligned(state: &PhaseState, ensemble: &AtomEnsemble) -> Result<()> {
    if state.dim != ensemble.dim() || state.n() != ensemble.n() {
        return Err(Error::arg(format!(
            "phase state ({} atoms, dim {}) is not aligned with ensemble ({} atoms, dim {})",
            state.n(),
            state.dim,
            ensemble.n(),
            ensemble.dim()
        )));
    }
    Ok(())
}

/// Stability-scaled default step:
/// dt = 0.1 / (κ · (φ(0)(2·u0_sup)^{p−2} + L_φ·u0_sup + 1)), so dt scales
/// inversely with the coupling strength; u0_sup = 0 returns the fixed
/// default 1e−2 (the velocity field is then identically zero).
pub fn default_timestep(kernel: &Kernel, cp: &CouplingParams, u0_sup: f64) -> f64 {
    if u0_sup == 0.0 {
        return 1e-2;
    }
    let l = kernel.lipschitz_constant();
    let scale = kernel.peak() * (2.0 * u0_sup).powf(cp.p - 2.0) + l * u0_sup + 1.0;
    0.1 / (cp.kappa * scale)
}

/// Scratch and stage buffers reused across all steps of a run.
struct Stepper {
    dim: usize,
    phi: PhiEval,
    gp: GpFactor,
    kernel: Kernel,
    p: f64,
    kappa: f64,
    eta0: Vec<f64>,
    vel0: Vec<f64>,
    stage_eta: Vec<f64>,
    stage_vel: Vec<f64>,
    vels: [Vec<f64>; 4],
    accs: [Vec<f64>; 4],
    rates: [f64; 4],
    rate_buf: Vec<f64>,
    // Jacobian stage buffers (empty when Jacobians are off)
    jeta0: Vec<f64>,
    jvel0: Vec<f64>,
    stage_jeta: Vec<f64>,
    stage_jvel: Vec<f64>,
    jvels: [Vec<f64>; 4],
    jaccs: [Vec<f64>; 4],
    jnorms: [f64; 4],
}

impl Stepper {
    fn new(n: usize, dim: usize, kernel: &Kernel, cp: &CouplingParams, with_jac: bool) -> Self {
        let nd = n * dim;
        let jm = if with_jac { n * dim * dim } else { 0 };
        Stepper {
            dim,
            phi: PhiEval::new(kernel),
            gp: GpFactor::new(cp.p),
            kernel: *kernel,
            p: cp.p,
            kappa: cp.kappa,
            eta0: vec![0.0; nd],
            vel0: vec![0.0; nd],
            stage_eta: vec![0.0; nd],
            stage_vel: vec![0.0; nd],
            vels: std::array::from_fn(|_| vec![0.0; nd]),
            accs: std::array::from_fn(|_| vec![0.0; nd]),
            rates: [0.0; 4],
            rate_buf: vec![0.0; n],
            jeta0: vec![0.0; jm],
            jvel0: vec![0.0; jm],
            stage_jeta: vec![0.0; jm],
            stage_jvel: vec![0.0; jm],
            jvels: std::array::from_fn(|_| vec![0.0; jm]),
            jaccs: std::array::from_fn(|_| vec![0.0; jm]),
            jnorms: [0.0; 4],
        }
    }

    /// Dissipation rate of a state, on the same fixed summation order as the
    /// force pass.
    fn dissipation_rate(&mut self, w: &[f64], eta: &[f64], vel: &[f64]) -> f64 {
        let ctx = ForceCtx {
            eta,
            vel,
            w,
            phi: self.phi,
            gp: self.gp,
            kappa: self.kappa,
        };
        // the acceleration output is discarded; accs[0] is free scratch here
        force_pass(self.dim, &ctx, &mut self.accs[0], &mut self.rate_buf);
        0.5 * self.kappa * self.rate_buf.iter().sum::<f64>()
    }

    /// One RK4 step of the state (and Jacobians when present), in place.
    /// Returns (dissipated increment, jv-norm increment, kink flag).
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        w: &[f64],
        eta: &mut [f64],
        vel: &mut [f64],
        jac: Option<&mut JacobianState>,
        dt: f64,
    ) -> (f64, f64, bool) {
        let with_jac = jac.is_some();
        self.eta0.copy_from_slice(eta);
        self.vel0.copy_from_slice(vel);
        if let Some(j) = &jac {
            self.jeta0.copy_from_slice(&j.jeta);
            self.jvel0.copy_from_slice(&j.jvel);
        }
        let coeffs = [0.0, 0.5 * dt, 0.5 * dt, dt];
        for s in 0..4 {
            // stage state y_s = y0 + c_s · k_{s−1}
            if s == 0 {
                self.stage_eta.copy_from_slice(&self.eta0);
                self.stage_vel.copy_from_slice(&self.vel0);
            } else {
                let c = coeffs[s];
                for (dst, (y0, k)) in self
                    .stage_eta
                    .iter_mut()
                    .zip(self.eta0.iter().zip(self.vels[s - 1].iter()))
                {
                    *dst = y0 + c * k;
                }
                for (dst, (y0, k)) in self
                    .stage_vel
                    .iter_mut()
                    .zip(self.vel0.iter().zip(self.accs[s - 1].iter()))
                {
                    *dst = y0 + c * k;
                }
            }
            self.vels[s].copy_from_slice(&self.stage_vel);
            let ctx = ForceCtx {
                eta: &self.stage_eta,
                vel: &self.stage_vel,
                w,
                phi: self.phi,
                gp: self.gp,
                kappa: self.kappa,
            };
            force_pass(self.dim, &ctx, &mut self.accs[s], &mut self.rate_buf);
            self.rates[s] = 0.5 * self.kappa * self.rate_buf.iter().sum::<f64>();

            if with_jac {
                if s == 0 {
                    self.stage_jeta.copy_from_slice(&self.jeta0);
                    self.stage_jvel.copy_from_slice(&self.jvel0);
                } else {
                    let c = coeffs[s];
                    for (dst, (y0, k)) in self
                        .stage_jeta
                        .iter_mut()
                        .zip(self.jeta0.iter().zip(self.jvels[s - 1].iter()))
                    {
                        *dst = y0 + c * k;
                    }
                    for (dst, (y0, k)) in self
                        .stage_jvel
                        .iter_mut()
                        .zip(self.jvel0.iter().zip(self.jaccs[s - 1].iter()))
                    {
                        *dst = y0 + c * k;
                    }
                }
                self.jvels[s].copy_from_slice(&self.stage_jvel);
                self.jnorms[s] = max_block_norm(&self.stage_jvel, self.dim);
                let (jacc, stage_jeta, stage_jvel) =
                    (&mut self.jaccs[s], &self.stage_jeta, &self.stage_jvel);
                jacobian_force(
                    self.dim,
                    &self.kernel,
                    self.p,
                    self.kappa,
                    self.gp,
                    w,
                    &self.stage_eta,
                    &self.stage_vel,
                    stage_jeta,
                    stage_jvel,
                    jacc,
                );
            }
        }

        let sixth = dt / 6.0;
        for (idx, dst) in eta.iter_mut().enumerate() {
            *dst = self.eta0[idx]
                + sixth
                    * (self.vels[0][idx]
                        + 2.0 * self.vels[1][idx]
                        + 2.0 * self.vels[2][idx]
                        + self.vels[3][idx]);
        }
        for (idx, dst) in vel.iter_mut().enumerate() {
            *dst = self.vel0[idx]
                + sixth
                    * (self.accs[0][idx]
                        + 2.0 * self.accs[1][idx]
                        + 2.0 * self.accs[2][idx]
                        + self.accs[3][idx]);
        }
        let dissipated_inc =
            sixth * (self.rates[0] + 2.0 * self.rates[1] + 2.0 * self.rates[2] + self.rates[3]);
        let mut jv_inc = 0.0;
        if let Some(j) = jac {
            for (idx, dst) in j.jeta.iter_mut().enumerate() {
                *dst = self.jeta0[idx]
                    + sixth
                        * (self.jvels[0][idx]
                            + 2.0 * self.jvels[1][idx]
                            + 2.0 * self.jvels[2][idx]
                            + self.jvels[3][idx]);
            }
            for (idx, dst) in j.jvel.iter_mut().enumerate() {
                *dst = self.jvel0[idx]
                    + sixth
                        * (self.jaccs[0][idx]
                            + 2.0 * self.jaccs[1][idx]
                            + 2.0 * self.jaccs[2][idx]
                            + self.jaccs[3][idx]);
            }
            jv_inc = sixth
                * (self.jnorms[0] + 2.0 * self.jnorms[1] + 2.0 * self.jnorms[2] + self.jnorms[3]);
            j.accumulated_jv_norm += jv_inc;
        }
        let kink = match self.kernel {
            Kernel::CompactBump { radius } => kink_crossed(self.dim, radius, &self.eta0, eta),
            _ => false,
        };
        (dissipated_inc, jv_inc, kink)
    }
}

/// d(J^v_i)/dt = κ Σ_j w_j [ G_p(v_j−v_i) ⊗ ((J^η_i)ᵀ ∇φ(η_i−η_j)) ]
///             − κ [ Σ_j w_j φ(|η_i−η_j|) ∇G_p(v_j−v_i) ] · J^v_i,
/// with ∇φ(z) = φ'(|z|) z/|z| (zero at z = 0). The (a,b) entry of the outer
/// product is G_p(…)_a · ((J^η)ᵀ∇φ)_b, the layout consistent with the chain
/// rule for J^v_{ab} = ∂v_a/∂x_b; it is validated against finite differences.
#[allow(clippy::too_many_arguments)]
fn jacobian_force(
    dim: usize,
    kernel: &Kernel,
    p: f64,
    kappa: f64,
    gp: GpFactor,
    w: &[f64],
    eta: &[f64],
    vel: &[f64],
    jeta: &[f64],
    jvel: &[f64],
    out: &mut [f64],
) {
    let n = w.len();
    let dd = dim * dim;
    let mut z = vec![0.0; dim];
    let mut dv = vec![0.0; dim];
    let mut grad_phi = vec![0.0; dim];
    let mut b_vec = vec![0.0; dim];
    let mut s_mat = vec![0.0; dd];
    let mut outer = vec![0.0; dd];
    let mut damped = vec![0.0; dd];
    for i in 0..n {
        s_mat.fill(0.0);
        outer.fill(0.0);
        let ji_eta = &jeta[i * dd..(i + 1) * dd];
        let ji_vel = &jvel[i * dd..(i + 1) * dd];
        for j in 0..n {
            let mut r2 = 0.0;
            let mut s2 = 0.0;
            for k in 0..dim {
                z[k] = eta[i * dim + k] - eta[j * dim + k];
                dv[k] = vel[j * dim + k] - vel[i * dim + k];
                r2 += z[k] * z[k];
                s2 += dv[k] * dv[k];
            }
            let r = r2.sqrt();
            let phi = kernel.eval_unchecked(r);
            add_scaled_grad_g_p(&mut s_mat, &dv, p, w[j] * phi);
            if r > 0.0 {
                let slope = kernel.derivative_unchecked(r) / r;
                if slope != 0.0 {
                    for k in 0..dim {
                        grad_phi[k] = slope * z[k];
                    }
                    transpose_apply(&mut b_vec, ji_eta, &grad_phi, dim);
                    let g = gp.eval(s2);
                    for a in 0..dim {
                        let ga = w[j] * g * dv[a];
                        for bcol in 0..dim {
                            outer[a * dim + bcol] += ga * b_vec[bcol];
                        }
                    }
                }
            }
        }
        matmul(&mut damped, &s_mat, ji_vel, dim);
        let out_i = &mut out[i * dd..(i + 1) * dd];
        for idx in 0..dd {
            out_i[idx] = kappa * (outer[idx] - damped[idx]);
        }
    }
}

/// Time derivatives (dJ^η/dt, dJ^v/dt) of the label Jacobians at the given
/// state; dJ^η/dt is simply J^v. See [`jacobian_force`] for the formula.
pub fn jacobian_rhs(
    state: &PhaseState,
    jac: &JacobianState,
    ensemble: &AtomEnsemble,
    kernel: &Kernel,
    cp: &CouplingParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_aligned(state, ensemble)?;
    kernel.validate()?;
    cp.validate()?;
    let dd = state.dim * state.dim;
    if jac.jeta.len() != state.n() * dd || jac.jvel.len() != state.n() * dd {
        return Err(Error::arg(format!(
            "jacobian buffers must hold {} entries, got {} / {}",
            state.n() * dd,
            jac.jeta.len(),
            jac.jvel.len()
        )));
    }
    let mut out = vec![0.0; state.n() * dd];
    jacobian_force(
        state.dim,
        kernel,
        cp.p,
        cp.kappa,
        GpFactor::new(cp.p),
        ensemble.weights(),
        &state.eta,
        &state.vel,
        &jac.jeta,
        &jac.jvel,
        &mut out,
    );
    Ok((jac.jvel.clone(), out))
}

/// One classical RK4 step; returns the advanced state.
pub fn step_rk4(
    state: &PhaseState,
    ensemble: &AtomEnsemble,
    kernel: &Kernel,
    cp: &CouplingParams,
    dt: f64,
) -> Result<PhaseState> {
    check_aligned(state, ensemble)?;
    kernel.validate()?;
    cp.validate()?;
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::arg(format!(
            "time step must be positive and finite, got {dt}"
        )));
    }
    let mut stepper = Stepper::new(state.n(), state.dim, kernel, cp, false);
    let mut next = state.clone();
    stepper.step(ensemble.weights(), &mut next.eta, &mut next.vel, None, dt);
    next.t = state.t + dt;
    if next.eta.iter().chain(next.vel.iter()).any(|x| !x.is_finite()) {
        return Err(Error::BlowUp { t: next.t });
    }
    Ok(next)
}

fn step_count(horizon: f64, dt: f64) -> usize {
    if horizon == 0.0 {
        return 0;
    }
    let raw = horizon / dt;
    let rounded = raw.round();
    if (raw - rounded).abs() <= 1e-6 * raw.max(1.0) {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Integrate the system over [0, horizon]. States are retained every
/// `sample_stride` steps (plus the final step); diagnostics are recorded at
/// every step. On blow-up the partial trajectory is returned together with
/// the failure time.
pub fn simulate_partial(
    ensemble: &AtomEnsemble,
    u0: &[f64],
    kernel: &Kernel,
    cp: &CouplingParams,
    opts: &SimOptions,
) -> Result<(Trajectory, Option<f64>)> {
    kernel.validate()?;
    cp.validate()?;
    let n = ensemble.n();
    let dim = ensemble.dim();
    if u0.len() != n * dim {
        return Err(Error::arg(format!(
            "initial velocity buffer must hold {} entries, got {}",
            n * dim,
            u0.len()
        )));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("initial velocities must be finite"));
    }
    opts.validate(n, dim)?;

    let steps = step_count(opts.horizon, opts.dt);
    let mut eta = ensemble.positions().to_vec();
    let mut vel = u0.to_vec();
    let mut jac = match &opts.grad_u0 {
        Some(g) => Some(JacobianState::initial(n, dim, g)?),
        None => None,
    };
    let track_kink = matches!(kernel, Kernel::CompactBump { .. });
    let w = ensemble.weights();

    let mut stepper = Stepper::new(n, dim, kernel, cp, jac.is_some());
    let mut diag = StepDiagnostics::default();
    let mut samples = Vec::new();
    let mut dissipated = 0.0;
    let mut kink_crossings = 0usize;

    // Everything except the dissipation rate; that rate equals the first RK4
    // stage of the *following* step, so it is recorded lazily while
    // stepping (the final state gets one dedicated evaluation below).
    let record_diag = |diag: &mut StepDiagnostics,
                       t: f64,
                       eta: &[f64],
                       vel: &[f64],
                       dissipated: f64,
                       track_diameters: bool| {
        diag.t.push(t);
        let mut kin = 0.0;
        for i in 0..n {
            let mut v2 = 0.0;
            for k in 0..dim {
                v2 += vel[i * dim + k] * vel[i * dim + k];
            }
            kin += w[i] * v2;
        }
        diag.kinetic.push(0.5 * kin);
        for k in 0..dim {
            let mut mom = 0.0;
            let mut vmax = 0.0f64;
            for i in 0..n {
                mom += w[i] * vel[i * dim + k];
                vmax = vmax.max(vel[i * dim + k].abs());
            }
            diag.momentum.push(mom);
            diag.vmax_axis.push(vmax);
        }
        diag.dissipated.push(dissipated);
        if track_diameters {
            let (de, dv) = phase_diameters(dim, eta, vel);
            diag.d_eta.push(de);
            diag.d_v.push(dv);
        }
    };

    record_diag(&mut diag, 0.0, &eta, &vel, 0.0, opts.track_diameters);
    samples.push(TrajectorySample {
        state: PhaseState {
            t: 0.0,
            dim,
            eta: eta.clone(),
            vel: vel.clone(),
        },
        jacobian: jac.clone(),
    });
    if track_kink {
        diag.kink.push(false);
    }

    let mut blow_up = None;
    for step_idx in 1..=steps {
        let (diss_inc, _jv_inc, kink) =
            stepper.step(w, &mut eta, &mut vel, jac.as_mut(), opts.dt);
        // first stage of this step evaluated the departed state exactly
        diag.dissipation_rate.push(stepper.rates[0]);
        dissipated += diss_inc;
        let t = step_idx as f64 * opts.dt;
        let finite = eta.iter().chain(vel.iter()).all(|x| x.is_finite())
            && jac
                .as_ref()
                .map(|j| j.jvel.iter().chain(j.jeta.iter()).all(|x| x.is_finite()))
                .unwrap_or(true);
        if !finite {
            blow_up = Some(t);
            break;
        }
        if track_kink {
            diag.kink.push(kink);
            if kink {
                kink_crossings += 1;
            }
        }
        record_diag(&mut diag, t, &eta, &vel, dissipated, opts.track_diameters);
        if step_idx % opts.sample_stride == 0 || step_idx == steps {
            samples.push(TrajectorySample {
                state: PhaseState {
                    t,
                    dim,
                    eta: eta.clone(),
                    vel: vel.clone(),
                },
                jacobian: jac.clone(),
            });
        }
    }
    if blow_up.is_none() {
        let rate = stepper.dissipation_rate(w, &eta, &vel);
        diag.dissipation_rate.push(rate);
    }

    Ok((
        Trajectory {
            dim,
            dt: opts.dt,
            sample_stride: opts.sample_stride,
            samples,
            steps: diag,
            kink_crossings,
        },
        blow_up,
    ))
}

/// Like [`simulate_partial`] but a blow-up is an error.
pub fn simulate(
    ensemble: &AtomEnsemble,
    u0: &[f64],
    kernel: &Kernel,
    cp: &CouplingParams,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let (traj, blow_up) = simulate_partial(ensemble, u0, kernel, cp, opts)?;
    match blow_up {
        Some(t) => Err(Error::BlowUp { t }),
        None => Ok(traj),
    }
}

/// Closed-form two-body solution for the constant kernel and weights ½/½.
#[derive(Clone, Debug)]
pub enum TwoBodyOracle {
    /// Relative position d(t) and relative velocity w(t).
    Full { d: Vec<f64>, w: Vec<f64> },
    /// p > 2 with non-collinear data: only the relative speed is closed-form.
    SpeedOnly { w_norm: f64 },
}

/// Analytic relative motion of two atoms of weight ½ under Constant(c):
/// for p = 2, w(t) = w₀e^{−κct} and d(t) = d₀ + w₀(1−e^{−κct})/(κc); for
/// p > 2 the relative speed obeys |w|' = −κc|w|^{p−1} exactly, and d(t)
/// follows by quadrature when d₀ ∥ w₀ (the motion stays on that line).
pub fn two_body_oracle(
    cp: &CouplingParams,
    c: f64,
    w0: &[f64],
    d0: &[f64],
    t: f64,
) -> Result<TwoBodyOracle> {
    cp.validate()?;
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::arg(format!(
            "constant kernel level must be positive, got {c}"
        )));
    }
    if w0.len() != d0.len() || w0.is_empty() {
        return Err(Error::arg(
            "relative position and velocity must have the same positive length",
        ));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::arg(format!("time must be non-negative, got {t}")));
    }
    let kc = cp.kappa * c;
    if cp.p == 2.0 {
        let decay = (-kc * t).exp();
        let w: Vec<f64> = w0.iter().map(|w| w * decay).collect();
        let d: Vec<f64> = d0
            .iter()
            .zip(w0)
            .map(|(d, w)| d + w * (1.0 - decay) / kc)
            .collect();
        return Ok(TwoBodyOracle::Full { d, w });
    }

    let p = cp.p;
    let w0_norm = norm(w0);
    // |w(t)| = (|w₀|^{2−p} + (p−2)κc·t)^{−1/(p−2)}
    let speed = |s: f64| -> f64 {
        if w0_norm == 0.0 {
            0.0
        } else {
            (w0_norm.powf(2.0 - p) + (p - 2.0) * kc * s).powf(-1.0 / (p - 2.0))
        }
    };
    let w_norm_t = speed(t);
    if w0_norm == 0.0 {
        return Ok(TwoBodyOracle::Full {
            d: d0.to_vec(),
            w: vec![0.0; w0.len()],
        });
    }
    let collinear = {
        let d0_norm = norm(d0);
        if d0_norm == 0.0 {
            true
        } else {
            // component of d₀ orthogonal to w₀ must vanish
            let inner: f64 = d0.iter().zip(w0).map(|(a, b)| a * b).sum();
            let mut ortho2 = 0.0;
            for (dk, wk) in d0.iter().zip(w0) {
                let r = dk - inner / (w0_norm * w0_norm) * wk;
                ortho2 += r * r;
            }
            ortho2.sqrt() <= 1e-12 * d0_norm
        }
    };
    if !collinear {
        return Ok(TwoBodyOracle::SpeedOnly { w_norm: w_norm_t });
    }
    // 1-d reduction along ŵ₀: d(t) = d₀ + ŵ₀ ∫₀ᵗ |w(s)| ds (the relative
    // velocity keeps its direction; its magnitude decays algebraically).
    let travelled = simpson(&speed, 0.0, t, 4096);
    let w: Vec<f64> = w0.iter().map(|w| w / w0_norm * w_norm_t).collect();
    let d: Vec<f64> = d0
        .iter()
        .zip(w0)
        .map(|(d, w)| d + w / w0_norm * travelled)
        .collect();
    Ok(TwoBodyOracle::Full { d, w })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Composite Simpson quadrature with an even number of panels.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = panels.max(2) & !1usize;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Flow-map injectivity certificate from a Jacobian-carrying trajectory.
#[derive(Clone, Copy, Debug)]
pub struct InjectivityCertificate {
    /// ∫₀ᵀ max_i ‖J^v_i(s)‖₂ ds.
    pub value: f64,
    /// True iff value < 1, which forces min_x det-free injectivity of the
    /// label-to-position map (J^η stays within distance < 1 of the identity).
    pub certified: bool,
}

pub fn injectivity_certificate(trajectory: &Trajectory) -> Result<InjectivityCertificate> {
    let jac = trajectory.final_jacobian().ok_or_else(|| {
        Error::arg("injectivity certificate requires a trajectory with Jacobians")
    })?;
    let value = jac.accumulated_jv_norm;
    Ok(InjectivityCertificate {
        value,
        certified: value < 1.0,
    })
}
