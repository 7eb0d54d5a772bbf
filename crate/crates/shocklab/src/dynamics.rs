//! Time integration of the full nonlinear system, the perturbation form,
//! and the frozen-coefficient linearization, all with the same IMEX scheme:
//! conservative central differencing of fluxes, implicit treatment of the
//! parabolic block through block-tridiagonal sweeps, explicit transport
//! under a CFL bound. On top of the trajectories: the outgoing-characteristic
//! kernel e(y,t), the coupled Volterra system for the shock phase alpha(t),
//! decay-rate reports, and tube (conditional stability) runs.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::erf::erf;

use crate::error::{Result, ShockError};
use crate::fit::{self, LineFit};
use crate::grid::{self, DiscreteNorms, Grid1d};
use crate::interp;
use crate::linop::LinearOperator;
use crate::model::Endstates;
use crate::profile::ShockProfile;

// ---------------------------------------------------------------------------
// Step control and trajectories
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub cfl: f64,
    pub dt_max: f64,
    /// Approximate number of stored snapshots.
    pub snapshots: usize,
    /// Local Lax-Friedrichs stabilization of the convective flux.
    pub llf: bool,
    /// Truncate the run when the outer-10% perturbation amplitude exceeds
    /// this fraction of the global amplitude (0 disables the monitor).
    pub boundary_fraction: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            cfl: 0.4,
            dt_max: f64::INFINITY,
            snapshots: 201,
            llf: false,
            boundary_fraction: 0.0,
        }
    }
}

/// Time-indexed snapshots of a run plus norm and mass histories. For runs in
/// full-state form the norms are of U - U_profile (no phase shift applied).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid1d,
    pub n: usize,
    pub r: usize,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub norms: Vec<DiscreteNorms>,
    /// Componentwise integral of the evolved field per snapshot.
    pub mass: Vec<DVector<f64>>,
    pub dt: f64,
    pub steps: usize,
    /// Reference state subtracted for norm histories (the profile).
    pub reference: Option<DVector<f64>>,
    /// Time at which the boundary monitor tripped, if it did.
    pub truncated_at: Option<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("nonempty trajectory")
    }
}

// ---------------------------------------------------------------------------
// Block-tridiagonal implicit sweep
// ---------------------------------------------------------------------------

/// Factorization of (I - c D) where D has r-by-r block rows
/// [lower, diag, upper] acting on the parabolic subvector.
struct BlockTridiagSolver {
    c: f64,
    inv_denoms: Vec<DMatrix<f64>>,
    uppers: Vec<DMatrix<f64>>,
    lowers: Vec<DMatrix<f64>>,
    r: usize,
}

impl BlockTridiagSolver {
    fn factor(blocks: &[[DMatrix<f64>; 3]], c: f64) -> Result<Self> {
        let m = blocks.len();
        let r = blocks[0][1].nrows();
        let id = DMatrix::identity(r, r);
        let mut inv_denoms = Vec::with_capacity(m);
        let mut uppers = Vec::with_capacity(m);
        let mut lowers = Vec::with_capacity(m);
        let mut prev_c: Option<DMatrix<f64>> = None;
        for i in 0..m {
            let low = &blocks[i][0] * (-c);
            let diag = &id - &blocks[i][1] * c;
            let up = &blocks[i][2] * (-c);
            let denom = match &prev_c {
                Some(pc) => &diag - &low * pc,
                None => diag.clone(),
            };
            let inv = denom.try_inverse().ok_or_else(|| {
                ShockError::Stepping(format!("implicit block singular at node {i}"))
            })?;
            let cmat = &inv * &up;
            prev_c = Some(cmat.clone());
            inv_denoms.push(inv);
            uppers.push(cmat);
            lowers.push(low);
        }
        Ok(BlockTridiagSolver {
            c,
            inv_denoms,
            uppers,
            lowers,
            r,
        })
    }

    /// Solve (I - c D) x = rhs in place on the parabolic components of a
    /// full grid vector (n components per node, last r parabolic).
    fn solve(&self, n: usize, rhs: &DVector<f64>) -> DVector<f64> {
        let m = self.inv_denoms.len();
        let r = self.r;
        let mut x = rhs.clone();
        let mut ys: Vec<DVector<f64>> = Vec::with_capacity(m);
        let mut prev: Option<DVector<f64>> = None;
        for i in 0..m {
            let mut b = DVector::zeros(r);
            for c in 0..r {
                b[c] = rhs[i * n + (n - r) + c];
            }
            if let Some(p) = &prev {
                b -= &self.lowers[i] * p;
            }
            let y = &self.inv_denoms[i] * b;
            prev = Some(y.clone());
            ys.push(y);
        }
        let mut next: Option<DVector<f64>> = None;
        for i in (0..m).rev() {
            let mut y = ys[i].clone();
            if let Some(nx) = &next {
                y -= &self.uppers[i] * nx;
            }
            for c in 0..r {
                x[i * n + (n - r) + c] = y[c];
            }
            next = Some(y);
        }
        x
    }

    /// Apply c*D to the parabolic components (zero elsewhere).
    fn apply_scaled(&self, n: usize, blocks: &[[DMatrix<f64>; 3]], v: &DVector<f64>) -> DVector<f64> {
        let m = blocks.len();
        let r = self.r;
        let mut out = DVector::zeros(v.len());
        let get = |i: usize, c: usize| v[i * n + (n - r) + c];
        for i in 0..m {
            for row in 0..r {
                let mut s = 0.0;
                for col in 0..r {
                    if i > 0 {
                        s += blocks[i][0][(row, col)] * get(i - 1, col);
                    }
                    s += blocks[i][1][(row, col)] * get(i, col);
                    if i + 1 < m {
                        s += blocks[i][2][(row, col)] * get(i + 1, col);
                    }
                }
                out[i * n + (n - r) + row] = self.c * s;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// IMEX ARS(2,2,2) engine
// ---------------------------------------------------------------------------

const ARS_GAMMA: f64 = 0.292893218813452476; // 1 - 1/sqrt(2)

struct ImexRun {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    truncated_at: Option<f64>,
    dt: f64,
    steps: usize,
}

/// March w' = E(t, w) + D w with ARS(2,2,2); `refreeze` supplies the frozen
/// diffusion blocks at the start of each step (return None to reuse).
fn imex_march<E, R, M>(
    _grid: &Grid1d,
    n: usize,
    w0: &DVector<f64>,
    t_end: f64,
    dt_target: f64,
    snapshots: usize,
    mut explicit: E,
    mut refreeze: R,
    mut monitor: M,
) -> Result<ImexRun>
where
    E: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    R: FnMut(&DVector<f64>) -> Option<Vec<[DMatrix<f64>; 3]>>,
    M: FnMut(f64, &DVector<f64>) -> bool,
{
    let steps = (t_end / dt_target).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let gdt = ARS_GAMMA * dt;
    let delta = 1.0 - 1.0 / (2.0 * ARS_GAMMA);

    let mut blocks = refreeze(w0).ok_or_else(|| {
        ShockError::Stepping("initial diffusion blocks unavailable".into())
    })?;
    let mut solver = BlockTridiagSolver::factor(&blocks, gdt)?;

    let stride = (steps / snapshots.max(1).saturating_sub(1).max(1)).max(1);
    let mut times = vec![0.0];
    let mut states = vec![w0.clone()];
    let mut w = w0.clone();
    let mut truncated_at = None;

    for k in 0..steps {
        let t = k as f64 * dt;
        if let Some(newblocks) = refreeze(&w) {
            blocks = newblocks;
            solver = BlockTridiagSolver::factor(&blocks, gdt)?;
        }
        let e1 = explicit(t, &w);
        let rhs2 = &w + &e1 * (gdt);
        let u2 = solver.solve(n, &rhs2);
        let e2 = explicit(t + gdt, &u2);
        let du2 = solver.apply_scaled(n, &blocks, &u2) / ARS_GAMMA; // dt * D u2
        let rhs3 = &w + &e1 * (delta * dt) + &e2 * ((1.0 - delta) * dt) + &du2 * (1.0 - ARS_GAMMA);
        let u3 = solver.solve(n, &rhs3);
        w = u3;
        if !w.iter().all(|v| v.is_finite()) {
            return Err(ShockError::Stepping(format!(
                "state became non-finite at t = {:.4}",
                t + dt
            )));
        }
        let t_new = (k + 1) as f64 * dt;
        if !monitor(t_new, &w) {
            truncated_at = Some(t_new);
            times.push(t_new);
            states.push(w.clone());
            break;
        }
        if (k + 1) % stride == 0 || k + 1 == steps {
            times.push(t_new);
            states.push(w.clone());
        }
    }
    Ok(ImexRun {
        times,
        states,
        truncated_at,
        dt,
        steps,
    })
}

fn build_trajectory(
    grid: Grid1d,
    n: usize,
    r: usize,
    run: ImexRun,
    reference: Option<DVector<f64>>,
) -> Trajectory {
    let mut norms = Vec::with_capacity(run.states.len());
    let mut mass = Vec::with_capacity(run.states.len());
    for s in &run.states {
        let v = match &reference {
            Some(rf) => s - rf,
            None => s.clone(),
        };
        norms.push(grid::norms(&grid, n, r, &v));
        let mut m = DVector::zeros(n);
        for i in 0..grid.len {
            let w = grid.weight(i);
            for c in 0..n {
                m[c] += w * s[i * n + c];
            }
        }
        mass.push(m);
    }
    Trajectory {
        grid,
        n,
        r,
        times: run.times,
        states: run.states,
        norms,
        mass,
        dt: run.dt,
        steps: run.steps,
        reference,
        truncated_at: run.truncated_at,
    }
}

// ---------------------------------------------------------------------------
// Discrete right-hand sides
// ---------------------------------------------------------------------------

/// Conservative convective term -(F(U))_x with optional Lax-Friedrichs
/// interface dissipation; boundary rows are zero (pinned nodes).
fn hyperbolic_rhs(
    profile: &ShockProfile,
    state: &DVector<f64>,
    llf_speed: Option<&[f64]>,
) -> DVector<f64> {
    let g = profile.grid;
    let n = profile.n();
    let m = g.len;
    let h = g.h();
    let model = &profile.model;
    let mut fluxes: Vec<DVector<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let u: DVector<f64> = state.rows(i * n, n).into();
        fluxes.push(model.flux(&u));
    }
    let mut out = DVector::zeros(state.len());
    for i in 1..m - 1 {
        for c in 0..n {
            let mut fp = 0.5 * (fluxes[i][c] + fluxes[i + 1][c]);
            let mut fm = 0.5 * (fluxes[i - 1][c] + fluxes[i][c]);
            if let Some(speeds) = llf_speed {
                let ap = 0.5 * speeds[i].max(speeds[i + 1]);
                let am = 0.5 * speeds[i - 1].max(speeds[i]);
                fp -= ap * (state[(i + 1) * n + c] - state[i * n + c]);
                fm -= am * (state[i * n + c] - state[(i - 1) * n + c]);
            }
            out[i * n + c] = -(fp - fm) / h;
        }
    }
    out
}

/// Conservative diffusion (B(U) U_x)_x with matrix-averaged midpoint
/// coefficients; boundary rows zero.
fn diffusion_rhs(profile: &ShockProfile, state: &DVector<f64>) -> DVector<f64> {
    let g = profile.grid;
    let n = profile.n();
    let m = g.len;
    let h = g.h();
    let model = &profile.model;
    let mut bmats: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let u: DVector<f64> = state.rows(i * n, n).into();
        bmats.push(model.viscosity(&u));
    }
    let mut out = DVector::zeros(state.len());
    for i in 1..m - 1 {
        let bp = (&bmats[i] + &bmats[i + 1]) * 0.5;
        let bm = (&bmats[i - 1] + &bmats[i]) * 0.5;
        let up: DVector<f64> = state.rows((i + 1) * n, n).into();
        let uc: DVector<f64> = state.rows(i * n, n).into();
        let um: DVector<f64> = state.rows((i - 1) * n, n).into();
        let gp = bp * (up - &uc);
        let gm = bm * (uc - um);
        let val = (gp - gm) / (h * h);
        for c in 0..n {
            out[i * n + c] = val[c];
        }
    }
    out
}

/// Frozen-coefficient diffusion blocks (lower, diag, upper) of the parabolic
/// subblock, from the state's viscosity matrices.
fn frozen_diff_blocks(profile: &ShockProfile, state: &DVector<f64>) -> Vec<[DMatrix<f64>; 3]> {
    let g = profile.grid;
    let n = profile.n();
    let r = profile.r();
    let m = g.len;
    let h2 = g.h() * g.h();
    let model = &profile.model;
    let mut bsub: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let u: DVector<f64> = state.rows(i * n, n).into();
        bsub.push(model.visc_block(&u));
    }
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        if i == 0 || i + 1 == m {
            out.push([
                DMatrix::zeros(r, r),
                DMatrix::zeros(r, r),
                DMatrix::zeros(r, r),
            ]);
            continue;
        }
        let bm = (&bsub[i - 1] + &bsub[i]) * 0.5;
        let bp = (&bsub[i] + &bsub[i + 1]) * 0.5;
        let diag = -(&bm + &bp) / h2;
        out.push([bm / h2, diag, bp / h2]);
    }
    out
}

/// Apply the frozen diffusion blocks to a state (parabolic rows only).
fn apply_blocks(
    blocks: &[[DMatrix<f64>; 3]],
    n: usize,
    r: usize,
    v: &DVector<f64>,
) -> DVector<f64> {
    let m = blocks.len();
    let mut out = DVector::zeros(v.len());
    let get = |i: usize, c: usize| v[i * n + (n - r) + c];
    for i in 0..m {
        for row in 0..r {
            let mut s = 0.0;
            for col in 0..r {
                if i > 0 {
                    s += blocks[i][0][(row, col)] * get(i - 1, col);
                }
                s += blocks[i][1][(row, col)] * get(i, col);
                if i + 1 < m {
                    s += blocks[i][2][(row, col)] * get(i + 1, col);
                }
            }
            out[i * n + (n - r) + row] = s;
        }
    }
    out
}

fn char_speeds(profile: &ShockProfile, state: &DVector<f64>) -> Vec<f64> {
    let n = profile.n();
    (0..profile.grid.len)
        .map(|i| {
            let u: DVector<f64> = state.rows(i * n, n).into();
            profile
                .model
                .flux_jacobian(&u)
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0f64, f64::max)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Evolution entry points
// ---------------------------------------------------------------------------

/// Evolve the full nonlinear system U_t + F(U)_x = (B(U)U_x)_x from
/// U = profile + V0, boundary nodes pinned at the endstates.
pub fn evolve_nonlinear(
    profile: &ShockProfile,
    v0: &DVector<f64>,
    t_end: f64,
    ctrl: &StepControl,
) -> Result<Trajectory> {
    let g = profile.grid;
    let n = profile.n();
    let ubar = profile.state_flat();
    let u0 = &ubar + v0;
    for i in 0..g.len {
        let u: DVector<f64> = u0.rows(i * n, n).into();
        if !profile.model.is_physical(&u) {
            return Err(ShockError::Unphysical(format!(
                "initial state leaves the physical domain at node {i}"
            )));
        }
    }
    let speeds0 = char_speeds(profile, &u0);
    let max_speed = speeds0.iter().cloned().fold(0.0f64, f64::max);
    if max_speed <= 0.0 {
        return Err(ShockError::Stepping("vanishing characteristic speeds".into()));
    }
    let dt = (ctrl.cfl * g.h() / max_speed).min(ctrl.dt_max);
    let llf = if ctrl.llf { Some(speeds0) } else { None };
    let boundary_fraction = ctrl.boundary_fraction;

    // Splitting: E*(U) = Hyp(U) + Diff(U) - D_frozen U, with D_frozen the
    // block-tridiagonal diffusion at the step's start state. E* absorbs the
    // coefficient lag, so the scheme solves the exact semi-discrete system.
    let blocks_cell: std::cell::RefCell<Option<Vec<[DMatrix<f64>; 3]>>> =
        std::cell::RefCell::new(None);
    let r = profile.r();
    let ubar_m = ubar.clone();
    let run = imex_march(
        &g,
        n,
        &u0,
        t_end,
        dt,
        ctrl.snapshots,
        |_t, u| {
            let mut e = hyperbolic_rhs(profile, u, llf.as_deref());
            e += diffusion_rhs(profile, u);
            if let Some(b) = blocks_cell.borrow().as_ref() {
                e -= apply_blocks(b, n, r, u);
            }
            e
        },
        |u: &DVector<f64>| {
            let b = frozen_diff_blocks(profile, u);
            *blocks_cell.borrow_mut() = Some(b.clone());
            Some(b)
        },
        move |_t, u| {
            if boundary_fraction <= 0.0 {
                return true;
            }
            let v = u - &ubar_m;
            let mut outer = 0.0f64;
            let mut global = 0.0f64;
            for i in 0..g.len {
                let mut a = 0.0;
                for c in 0..n {
                    a += v[i * n + c] * v[i * n + c];
                }
                let a = a.sqrt();
                global = global.max(a);
                if g.x(i).abs() > 0.9 * g.half_width {
                    outer = outer.max(a);
                }
            }
            !(global > 0.0 && outer > boundary_fraction * global)
        },
    )?;
    Ok(build_trajectory(g, n, profile.r(), run, Some(ubar)))
}

/// Evolve the frozen-coefficient linearization w_t = L w (+ forcing) using
/// the operator's own advection/diffusion split.
pub fn evolve_linear(
    lop: &LinearOperator,
    w0: &DVector<f64>,
    forcing: Option<&dyn Fn(f64) -> DVector<f64>>,
    t_end: f64,
    ctrl: &StepControl,
) -> Result<Trajectory> {
    evolve_semilinear(lop, w0, |t, _w| forcing.map(|f| f(t)), t_end, ctrl)
}

/// Evolve w_t = L w + G(t, w) with G explicit (used by the center flow).
pub fn evolve_semilinear<G>(
    lop: &LinearOperator,
    w0: &DVector<f64>,
    mut extra: G,
    t_end: f64,
    ctrl: &StepControl,
) -> Result<Trajectory>
where
    G: FnMut(f64, &DVector<f64>) -> Option<DVector<f64>>,
{
    let g = lop.grid;
    let n = lop.n;
    if w0.len() != lop.dim() {
        return Err(ShockError::Dimension(format!(
            "initial datum length {} != operator dimension {}",
            w0.len(),
            lop.dim()
        )));
    }
    let dt = (ctrl.cfl * g.h() / lop.max_char_speed).min(ctrl.dt_max);
    let blocks = lop.diff_tridiag_blocks()?;
    let mut first = true;
    let run = imex_march(
        &g,
        n,
        w0,
        t_end,
        dt,
        ctrl.snapshots,
        |t, w| {
            let mut e = lop.apply_adv(w);
            if let Some(f) = extra(t, w) {
                e += f;
            }
            e
        },
        move |_w| {
            if first {
                first = false;
                Some(blocks.clone())
            } else {
                None
            }
        },
        |_t, _w| true,
    )?;
    Ok(build_trajectory(g, n, lop.r, run, None))
}

/// Evolve the perturbation form V_t = [R(U_profile + V) - R(U_profile)]
/// (+ the operator's rank-one term), where R is the full discrete
/// right-hand side. Exact for the nonlinear dynamics while keeping the
/// profile an exact equilibrium of the scheme.
pub fn evolve_perturbation(
    lop: &LinearOperator,
    v0: &DVector<f64>,
    t_end: f64,
    ctrl: &StepControl,
) -> Result<Trajectory> {
    let profile = lop.profile.clone();
    let g = profile.grid;
    let n = profile.n();
    let r = profile.r();
    let ubar = profile.state_flat();
    let base_rhs = hyperbolic_rhs(&profile, &ubar, None) + diffusion_rhs(&profile, &ubar);
    let speeds0 = char_speeds(&profile, &ubar);
    let max_speed = speeds0.iter().cloned().fold(0.0f64, f64::max);
    let dt = (ctrl.cfl * g.h() / max_speed).min(ctrl.dt_max);
    let llf = if ctrl.llf { Some(speeds0) } else { None };

    let blocks_cell: std::cell::RefCell<Option<Vec<[DMatrix<f64>; 3]>>> =
        std::cell::RefCell::new(None);
    let boundary_fraction = ctrl.boundary_fraction;
    let run = imex_march(
        &g,
        n,
        v0,
        t_end,
        dt,
        ctrl.snapshots,
        |_t, v| {
            let u = &ubar + v;
            let mut e = hyperbolic_rhs(&profile, &u, llf.as_deref()) + diffusion_rhs(&profile, &u)
                - &base_rhs;
            if let Some(b) = blocks_cell.borrow().as_ref() {
                e -= apply_blocks(b, n, r, v);
            }
            if let Some(bump) = &lop.rank_one {
                e += bump.apply(&g, n, v);
            }
            e
        },
        |v: &DVector<f64>| {
            let u = &ubar + v;
            let b = frozen_diff_blocks(&profile, &u);
            *blocks_cell.borrow_mut() = Some(b.clone());
            Some(b)
        },
        move |_t, v| {
            if boundary_fraction <= 0.0 {
                return true;
            }
            let mut outer = 0.0f64;
            let mut global = 0.0f64;
            for i in 0..g.len {
                let mut a = 0.0;
                for c in 0..n {
                    a += v[i * n + c] * v[i * n + c];
                }
                let a = a.sqrt();
                global = global.max(a);
                if g.x(i).abs() > 0.9 * g.half_width {
                    outer = outer.max(a);
                }
            }
            !(global > 0.0 && outer > boundary_fraction * global)
        },
    )?;
    Ok(build_trajectory(g, n, r, run, None))
}

// ---------------------------------------------------------------------------
// Nonlinear residual (the undifferentiated quadratic remainder)
// ---------------------------------------------------------------------------

/// Pointwise quadratic residual of the flux/viscosity expansion about the
/// profile: [B(U+V)(U+V)_x - B(U)U_x - B(U)V_x - (dB(U)V)U_x]
/// - [F(U+V) - F(U) - dF(U)V], evaluated exactly from the system functions.
pub fn nonlinear_residual(profile: &ShockProfile, v: &DVector<f64>) -> Result<DVector<f64>> {
    let g = profile.grid;
    let n = profile.n();
    let model = &profile.model;
    let vx = grid::d1(&g, n, v);
    let mut out = DVector::zeros(v.len());
    for i in 0..g.len {
        let ubar: DVector<f64> = profile.states.column(i).into();
        let ubx: DVector<f64> = profile.derivs.column(i).into();
        let vi: DVector<f64> = v.rows(i * n, n).into();
        let vxi: DVector<f64> = vx.rows(i * n, n).into();
        let upv = &ubar + &vi;
        if !model.is_physical(&upv) {
            return Err(ShockError::Unphysical(format!(
                "perturbed state leaves the physical domain at node {i}"
            )));
        }
        let visc_terms = model.viscosity(&upv) * (&ubx + &vxi)
            - model.viscosity(&ubar) * &ubx
            - model.viscosity(&ubar) * &vxi
            - model.visc_dir_deriv(&ubar, &vi) * &ubx;
        let flux_terms = model.flux(&upv) - model.flux(&ubar) - model.flux_jacobian(&ubar) * &vi;
        let val = visc_terms - flux_terms;
        for c in 0..n {
            out[i * n + c] = val[c];
        }
    }
    Ok(out)
}

/// Conservative x-derivative of a node field (half-sum flux differencing,
/// matching the operator's divergence form). Boundary rows zero.
pub fn conservative_dx(g: &Grid1d, n: usize, f: &DVector<f64>) -> DVector<f64> {
    let m = g.len;
    let h = g.h();
    let mut out = DVector::zeros(f.len());
    for i in 1..m - 1 {
        for c in 0..n {
            out[i * n + c] = (f[(i + 1) * n + c] - f[(i - 1) * n + c]) / (2.0 * h);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// The outgoing-characteristic kernel e(y, t)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub enum EDeriv {
    None,
    Y,
    T,
    TY,
}

/// Low-frequency phase-response kernel: for y <= 0 a sum over incoming
/// left-side families a_k > 0 of scaled error-function differences
/// errfn((y + a t)/sqrt(4t)) - errfn((y - a t)/sqrt(4t)) times a constant
/// coefficient vector, mirrored for y >= 0. The coefficients weight each
/// incoming family by how much of its carried mass the standing shock must
/// absorb as a phase shift: l_k = (ell0 . r_k) lhat_k with ell0 the dual of
/// the jump in the outgoing-characteristic basis.
#[derive(Debug, Clone)]
pub struct EKernel {
    /// (speed, coefficient vector), speeds positive, for y <= 0.
    pub left_modes: Vec<(f64, DVector<f64>)>,
    /// Mirrored data for y >= 0: stored speed is -a_k^+ > 0.
    pub right_modes: Vec<(f64, DVector<f64>)>,
    pub n: usize,
}

fn errfn(z: f64) -> f64 {
    0.5 * (1.0 + erf(z))
}

fn gauss(z: f64) -> f64 {
    (-z * z).exp() / std::f64::consts::PI.sqrt()
}

impl EKernel {
    pub fn from_endstates(es: &Endstates) -> Result<EKernel> {
        let lm = es.liu_majda()?;
        let n = es.u_minus.len();
        let mut left_modes = Vec::new();
        for (k, &a) in es.basis_minus.speeds.iter().enumerate() {
            if a > 0.0 {
                let r: DVector<f64> = es.basis_minus.right.column(k).into();
                let lhat: DVector<f64> = es.basis_minus.left.row(k).transpose();
                let c = lm.ell0.dot(&r);
                left_modes.push((a, lhat * c));
            }
        }
        let mut right_modes = Vec::new();
        for (k, &a) in es.basis_plus.speeds.iter().enumerate() {
            if a < 0.0 {
                let r: DVector<f64> = es.basis_plus.right.column(k).into();
                let lhat: DVector<f64> = es.basis_plus.left.row(k).transpose();
                let c = lm.ell0.dot(&r);
                right_modes.push((-a, lhat * c));
            }
        }
        Ok(EKernel {
            left_modes,
            right_modes,
            n,
        })
    }

    /// Evaluate e or one of its derivatives at (y, t), t > 0.
    pub fn eval(&self, y: f64, t: f64, deriv: EDeriv) -> Result<DVector<f64>> {
        if t <= 0.0 {
            return Err(ShockError::InvalidParameter(
                "e-kernel requires t > 0".into(),
            ));
        }
        let (modes, yy, ysign) = if y <= 0.0 {
            (&self.left_modes, y, 1.0)
        } else {
            (&self.right_modes, -y, -1.0)
        };
        let mut out = DVector::zeros(self.n);
        let st = t.sqrt();
        for (a, l) in modes {
            let zp = (yy + a * t) / (2.0 * st);
            let zm = (yy - a * t) / (2.0 * st);
            let dzy = 1.0 / (2.0 * st);
            let dzp_t = a / (2.0 * st) - (yy + a * t) / (4.0 * t * st);
            let dzm_t = -a / (2.0 * st) - (yy - a * t) / (4.0 * t * st);
            let dz_yt = -1.0 / (4.0 * t * st);
            let scalar = match deriv {
                EDeriv::None => errfn(zp) - errfn(zm),
                EDeriv::Y => ysign * dzy * (gauss(zp) - gauss(zm)),
                EDeriv::T => gauss(zp) * dzp_t - gauss(zm) * dzm_t,
                EDeriv::TY => {
                    let gp = -2.0 * zp * gauss(zp);
                    let gm = -2.0 * zm * gauss(zm);
                    ysign * (gp * dzp_t * dzy + gauss(zp) * dz_yt
                        - gm * dzm_t * dzy
                        - gauss(zm) * dz_yt)
                }
            };
            out += l * scalar;
        }
        Ok(out)
    }

    /// <e_*(., t), f> with trapezoidal weights over the grid.
    pub fn integrate_against(
        &self,
        g: &Grid1d,
        t: f64,
        deriv: EDeriv,
        f: &DVector<f64>,
    ) -> Result<f64> {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..g.len {
            let e = self.eval(g.x(i), t, deriv)?;
            let w = g.weight(i);
            for c in 0..n {
                s += w * e[c] * f[i * n + c];
            }
        }
        Ok(s)
    }
}

// ---------------------------------------------------------------------------
// Phase tracking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PhaseHistory {
    pub times: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_dot: Vec<f64>,
    /// Direct evaluation of the alpha integral equation (consistency check).
    pub alpha_direct: Vec<f64>,
    /// Max correction update over the outer sweeps per step.
    pub max_correction: f64,
    /// Norms of the phase-shifted perturbation V = U(.+alpha) - U_profile.
    pub v_norms: Vec<DiscreteNorms>,
}

/// Solve the coupled Volterra system for (alpha, alpha_dot) by time
/// marching over the trajectory snapshots. The history integrals use
/// trapezoidal quadrature away from the singular endpoint; the final
/// interval integrates the kernel time-derivative exactly (the kernel has
/// weak limit zero at t -> 0+).
pub fn track_phase(
    traj: &Trajectory,
    profile: &ShockProfile,
    kernel: &EKernel,
) -> Result<PhaseHistory> {
    let g = traj.grid;
    let n = traj.n;
    let ubar = profile.state_flat();
    let k_count = traj.times.len();
    if k_count < 3 {
        return Err(ShockError::InvalidParameter(
            "phase tracking needs at least 3 snapshots".into(),
        ));
    }
    let v0 = traj.states[0].clone() - &ubar;

    // Forcing history g_j = N(V_j) + alpha_dot_j V_j on the snapshot grid.
    let mut alpha = vec![0.0; k_count];
    let mut alpha_dot = vec![0.0; k_count];
    let mut alpha_direct = vec![0.0; k_count];
    let mut forcing: Vec<DVector<f64>> = Vec::with_capacity(k_count);
    {
        let nres = nonlinear_residual(profile, &v0)?;
        forcing.push(nres);
    }
    let mut v_norms = vec![grid::norms(&g, n, traj.r, &v0)];
    let mut max_correction = 0.0f64;

    // Kernel caches per lag index on the snapshot grid (assumed uniform).
    let dt = traj.times[1] - traj.times[0];
    let mut cache_ty: Vec<Option<Vec<DVector<f64>>>> = vec![None; k_count];
    let mut cache_y: Vec<Option<Vec<DVector<f64>>>> = vec![None; k_count];
    let kernel_row = |cache: &mut Vec<Option<Vec<DVector<f64>>>>,
                          lag: usize,
                          deriv: EDeriv|
     -> Result<Vec<DVector<f64>>> {
        if cache[lag].is_none() {
            let tau = lag as f64 * dt;
            let mut rows = Vec::with_capacity(g.len);
            for i in 0..g.len {
                rows.push(kernel.eval(g.x(i), tau, deriv)?);
            }
            cache[lag] = Some(rows);
        }
        Ok(cache[lag].clone().unwrap())
    };
    let dot_row = |rows: &[DVector<f64>], f: &DVector<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..g.len {
            let w = g.weight(i);
            for c in 0..n {
                s += w * rows[i][c] * f[i * n + c];
            }
        }
        s
    };

    // alpha_dot(0+): evaluate the data term at a small positive time.
    alpha_dot[0] = -kernel.integrate_against(&g, dt * 1e-3, EDeriv::T, &v0)?;
    alpha_direct[0] = 0.0;

    for k in 1..k_count {
        let tk = traj.times[k];
        // Outer corrections: extract V with the newest alpha, rebuild the
        // forcing with the newest alpha_dot.
        let mut ak = alpha[k - 1] + dt * alpha_dot[k - 1];
        let mut adk = alpha_dot[k - 1];
        let mut vk = DVector::zeros(v0.len());
        for sweep in 0..2 {
            let shifted = interp::shift(&g, n, &traj.states[k], ak);
            vk = shifted - &ubar;
            let nres = nonlinear_residual(profile, &vk)?;
            let gk = &nres + &vk * adk;

            // alpha_dot equation.
            let mut hist = 0.0;
            for j in 1..k {
                // Trapezoid over s in [t_{j-1}, t_j] of <e_ty(., tk - s), g(s)>.
                let rows_a = kernel_row(&mut cache_ty, k - (j - 1), EDeriv::TY)?;
                let rows_b = kernel_row(&mut cache_ty, k - j, EDeriv::TY)?;
                let ha = dot_row(&rows_a, &forcing[j - 1]);
                let hb = dot_row(&rows_b, &forcing[j]);
                hist += 0.5 * dt * (ha + hb);
            }
            // Final interval: integrate e_ty exactly in time against the
            // midpoint forcing, using int_0^dt e_ty dtau = e_y(., dt).
            let rows_ey = kernel_row(&mut cache_y, 1, EDeriv::Y)?;
            let gmid = (&forcing[k - 1] + &gk) * 0.5;
            hist += dot_row(&rows_ey, &gmid);
            let data = -kernel.integrate_against(&g, tk, EDeriv::T, &v0)?;
            let new_adk = data + hist;
            let delta = (new_adk - adk).abs();
            if sweep > 0 {
                max_correction = max_correction.max(delta);
            }
            adk = new_adk;
            ak = alpha[k - 1] + 0.5 * dt * (alpha_dot[k - 1] + adk);
        }
        alpha[k] = ak;
        alpha_dot[k] = adk;
        let nres = nonlinear_residual(profile, &vk)?;
        forcing.push(&nres + &vk * adk);
        v_norms.push(grid::norms(&g, n, traj.r, &vk));

        // Direct alpha equation as a consistency check.
        let mut hist_a = 0.0;
        for j in 1..k {
            let rows_a = kernel_row(&mut cache_y, k - (j - 1), EDeriv::Y)?;
            let rows_b = kernel_row(&mut cache_y, k - j, EDeriv::Y)?;
            hist_a += 0.5 * dt * (dot_row(&rows_a, &forcing[j - 1]) + dot_row(&rows_b, &forcing[j]));
        }
        // Final interval via int_0^dt e_y dtau = e(., dt).
        let mut rows_e = Vec::with_capacity(g.len);
        for i in 0..g.len {
            rows_e.push(kernel.eval(g.x(i), dt, EDeriv::None)?);
        }
        hist_a += dot_row(&rows_e, &((&forcing[k - 1] + &forcing[k]) * 0.5));
        let data_a = -kernel.integrate_against(&g, tk, EDeriv::None, &v0)?;
        alpha_direct[k] = data_a + hist_a;
    }

    Ok(PhaseHistory {
        times: traj.times.clone(),
        alpha,
        alpha_dot,
        alpha_direct,
        max_correction,
        v_norms,
    })
}

/// Least-squares best translate: alpha minimizing ||U(. + alpha) - U_bar||_2,
/// by coarse scan plus parabolic refinement. Independent of the kernel
/// machinery; used as an oracle for phase tracking.
pub fn fit_translate(profile: &ShockProfile, state: &DVector<f64>, alpha_max: f64) -> (f64, f64) {
    let g = profile.grid;
    let n = profile.n();
    let ubar = profile.state_flat();
    let dist2 = |a: f64| -> f64 {
        let shifted = interp::shift(&g, n, state, a);
        let d = shifted - &ubar;
        grid::inner(&g, n, &d, &d)
    };
    let samples = 41;
    let mut best_a = 0.0;
    let mut best = f64::INFINITY;
    for k in 0..samples {
        let a = -alpha_max + 2.0 * alpha_max * k as f64 / (samples - 1) as f64;
        let d = dist2(a);
        if d < best {
            best = d;
            best_a = a;
        }
    }
    // Parabolic refinement.
    let mut step = 2.0 * alpha_max / (samples - 1) as f64;
    for _ in 0..28 {
        let dl = dist2(best_a - step);
        let dc = dist2(best_a);
        let dr = dist2(best_a + step);
        let denom = dl - 2.0 * dc + dr;
        if denom > 0.0 {
            let shift = 0.5 * (dl - dr) / denom * step;
            if shift.abs() < step {
                best_a += shift;
            }
        }
        step *= 0.5;
    }
    (best_a, dist2(best_a).sqrt())
}

// ---------------------------------------------------------------------------
// Decay report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub fit_l2: Option<LineFit>,
    pub fit_linf: Option<LineFit>,
    pub fit_h3: Option<LineFit>,
    pub fit_alpha_dot: Option<LineFit>,
    /// Tail variation of alpha relative to its total drift.
    pub alpha_cauchy_tail: f64,
    pub alpha_final: f64,
    pub zeta: Vec<f64>,
    pub zeta_bounded: bool,
    pub claim_c2: f64,
    pub degenerate: bool,
    pub fit_window: (f64, f64),
}

/// Fit the orbital decay exponents of a phase-tracked run against (1+t) and
/// evaluate the bootstrap quantity zeta(t) and its closure constant.
pub fn decay_report(phase: &PhaseHistory, e0: f64, fit_t_min: f64, fit_t_max: f64) -> DecayReport {
    let ts = &phase.times;
    let l2: Vec<f64> = phase.v_norms.iter().map(|n| n.l2).collect();
    let linf: Vec<f64> = phase.v_norms.iter().map(|n| n.linf).collect();
    let h3: Vec<f64> = phase.v_norms.iter().map(|n| n.h3).collect();
    let adot: Vec<f64> = phase.alpha_dot.iter().map(|a| a.abs()).collect();

    let degenerate = l2.iter().all(|v| *v < 1e-14);
    let fit_l2 = fit::decay_exponent(ts, &l2, fit_t_min, fit_t_max);
    let fit_linf = fit::decay_exponent(ts, &linf, fit_t_min, fit_t_max);
    let fit_h3 = fit::decay_exponent(ts, &h3, fit_t_min, fit_t_max);
    let fit_alpha_dot = fit::decay_exponent(ts, &adot, fit_t_min, fit_t_max);

    let t_end = *ts.last().unwrap_or(&0.0);
    let alpha_final = *phase.alpha.last().unwrap_or(&0.0);
    let drift = phase
        .alpha
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
            (lo.min(*a), hi.max(*a))
        });
    let total_drift = (drift.1 - drift.0).max(1e-300);
    let mut tail_var = 0.0f64;
    for (t, a) in ts.iter().zip(&phase.alpha) {
        if *t >= 0.8 * t_end {
            tail_var = tail_var.max((a - alpha_final).abs());
        }
    }
    let alpha_cauchy_tail = tail_var / total_drift;

    let mut zeta = Vec::with_capacity(ts.len());
    let mut running: f64 = 0.0;
    for k in 0..ts.len() {
        let s = ts[k];
        let val = h3[k] * (1.0 + s).powf(0.25) + (linf[k] + adot[k]) * (1.0 + s).sqrt();
        running = running.max(val);
        zeta.push(running);
    }
    let zeta_final = *zeta.last().unwrap_or(&0.0);
    let zeta_mid = zeta[zeta.len() / 2];
    let zeta_bounded = zeta_final <= 2.0 * zeta_mid.max(1e-300);
    let claim_c2 = zeta
        .iter()
        .map(|z| z / (e0 + z * z).max(1e-300))
        .fold(0.0f64, f64::max);

    DecayReport {
        fit_l2,
        fit_linf,
        fit_h3,
        fit_alpha_dot,
        alpha_cauchy_tail,
        alpha_final,
        zeta,
        zeta_bounded,
        claim_c2,
        degenerate,
        fit_window: (fit_t_min, fit_t_max),
    }
}

// ---------------------------------------------------------------------------
// Conditional (tube) experiments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TubeRun {
    pub tube_radius: f64,
    pub exit_time: Option<f64>,
    pub max_dist: f64,
    pub dist_history: Vec<(f64, f64)>,
}

/// Evolve a perturbation and record the distance to the set of translates
/// (L2-optimal per snapshot); report the first exit from the radius-R tube.
pub fn conditional_experiment(
    lop: &LinearOperator,
    v0: &DVector<f64>,
    tube_radius: f64,
    t_end: f64,
    ctrl: &StepControl,
) -> Result<TubeRun> {
    let traj = evolve_perturbation(lop, v0, t_end, ctrl)?;
    let profile = &lop.profile;
    let ubar = profile.state_flat();
    let alpha_max = 4.0 * profile.grid.h().max(tube_radius);
    let mut dist_history = Vec::with_capacity(traj.times.len());
    let mut exit_time = None;
    let mut max_dist = 0.0f64;
    for (t, v) in traj.times.iter().zip(&traj.states) {
        let u = &ubar + v;
        let (_a, d) = fit_translate(profile, &u, alpha_max);
        dist_history.push((*t, d));
        max_dist = max_dist.max(d);
        if exit_time.is_none() && d > tube_radius {
            exit_time = Some(*t);
        }
    }
    Ok(TubeRun {
        tube_radius,
        exit_time,
        max_dist,
        dist_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::tests::{stable_shock_profile, synthetic_unstable};
    use crate::linop::{assemble, BoundaryClosure};
    use approx::assert_relative_eq;

    #[test]
    fn profile_is_discrete_equilibrium() {
        let p = stable_shock_profile(20.0, 513);
        let v0 = DVector::zeros(2 * p.grid.len);
        let ctrl = StepControl {
            snapshots: 5,
            ..Default::default()
        };
        let traj = evolve_nonlinear(&p, &v0, 2.0, &ctrl).unwrap();
        let v_end = traj.final_state() - traj.reference.as_ref().unwrap();
        // The stationary profile moves only through the scheme's own
        // truncation error.
        assert!(v_end.amax() < 2e-6, "drift {}", v_end.amax());
        // Perturbation form is exactly stationary at V = 0.
        let lop = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
        let traj2 = evolve_perturbation(&lop, &v0, 1.0, &ctrl).unwrap();
        assert!(traj2.final_state().amax() < 1e-13);
    }

    #[test]
    fn mass_is_conserved() {
        let p = stable_shock_profile(20.0, 513);
        let g = p.grid;
        let mut v0 = DVector::zeros(2 * g.len);
        for i in 0..g.len {
            let x = g.x(i);
            v0[i * 2] = 1e-3 * (-x * x).exp();
            v0[i * 2 + 1] = -5e-4 * (-x * x / 2.0).exp();
        }
        let ctrl = StepControl {
            snapshots: 9,
            ..Default::default()
        };
        let traj = evolve_nonlinear(&p, &v0, 3.0, &ctrl).unwrap();
        let m0 = &traj.mass[0];
        for m in &traj.mass {
            for c in 0..2 {
                assert!(
                    (m[c] - m0[c]).abs() < 1e-10 * 3.0,
                    "mass drift {:.3e}",
                    (m[c] - m0[c]).abs()
                );
            }
        }
    }

    #[test]
    fn linear_stationary_zero_mode() {
        let p = stable_shock_profile(20.0, 513);
        let lop = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
        let phi = p.deriv_flat();
        let ctrl = StepControl {
            snapshots: 5,
            ..Default::default()
        };
        let traj = evolve_linear(&lop, &phi, None, 2.0, &ctrl).unwrap();
        let drift = (traj.final_state() - &phi).amax() / phi.amax();
        // Stationary to the spatial truncation error O(h^2).
        assert!(drift < 2e-3, "zero-mode drift {drift}");
    }

    #[test]
    fn linear_superposition() {
        let p = stable_shock_profile(20.0, 257);
        let lop = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
        let g = lop.grid;
        let mk = |k: f64| {
            DVector::from_fn(lop.dim(), |idx, _| {
                let x = g.x(idx / 2);
                (-(x * x) / (2.0 + k)).exp() * ((idx % 2) as f64 + 0.5)
            })
        };
        let w1 = mk(0.0);
        let w2 = mk(3.0);
        let ctrl = StepControl {
            snapshots: 3,
            ..Default::default()
        };
        let t1 = evolve_linear(&lop, &w1, None, 1.0, &ctrl).unwrap();
        let t2 = evolve_linear(&lop, &w2, None, 1.0, &ctrl).unwrap();
        let combo = &w1 * 0.7 - &w2 * 1.3;
        let t3 = evolve_linear(&lop, &combo, None, 1.0, &ctrl).unwrap();
        let expect = t1.final_state() * 0.7 - t2.final_state() * 1.3;
        assert!((t3.final_state() - expect).amax() < 1e-12);
    }

    #[test]
    fn zero_forcing_zero_state() {
        let p = stable_shock_profile(20.0, 257);
        let lop = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
        let z = DVector::zeros(lop.dim());
        let ctrl = StepControl {
            snapshots: 3,
            ..Default::default()
        };
        let traj = evolve_linear(&lop, &z, None, 1.0, &ctrl).unwrap();
        assert_eq!(traj.final_state().amax(), 0.0);
    }

    #[test]
    fn constant_coefficient_fourier_decay() {
        // Frozen-coefficient evolution matches the symbol decay on a
        // periodic-like interior mode.
        let m = crate::model::builtin_system(
            "isentropic_ns",
            &serde_json::json!({"gamma": 2.0, "nu": 1.0}),
        )
        .unwrap()
        .shifted(2.0);
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let p = std::sync::Arc::new(ShockProfile::constant(&m, &u, 40.0, 1601).unwrap());
        let lop = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
        let g = lop.grid;
        let xi = 1.0;
        let a = m.flux_jacobian(&u);
        let b = m.viscosity(&u);
        // Symbol eigenvalue with the largest real part at the DISCRETE
        // wavenumbers: use the continuous symbol as reference.
        let mut sym = DMatrix::<nalgebra::Complex<f64>>::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                sym[(i, j)] = nalgebra::Complex::new(-xi * xi * b[(i, j)], -xi * a[(i, j)]);
            }
        }
        let rates: Vec<f64> = sym
            .eigenvalues()
            .expect("2x2 complex eigenvalues")
            .iter()
            .map(|z| z.re)
            .collect();
        let rate = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // Gaussian-envelope wave packet in the first component.
        let w0 = DVector::from_fn(lop.dim(), |idx, _| {
            let x = g.x(idx / 2);
            if idx % 2 == 0 {
                (xi * x).sin() * (-(x * x) / 100.0).exp()
            } else {
                0.0
            }
        });
        let ctrl = StepControl {
            snapshots: 5,
            cfl: 0.3,
            ..Default::default()
        };
        let t_end = 2.0;
        let traj = evolve_linear(&lop, &w0, None, t_end, &ctrl).unwrap();
        let got = grid::l2_norm(&g, 2, traj.final_state()) / grid::l2_norm(&g, 2, &w0);
        let want = (rate * t_end).exp();
        assert!(
            (got - want).abs() / want < 0.35,
            "decay factor {got} vs symbol {want}"
        );
    }

    #[test]
    fn ekernel_limits_and_bounds() {
        let p = stable_shock_profile(20.0, 257);
        let kernel = EKernel::from_endstates(&p.endstates).unwrap();
        // Fixed y != 0: e -> 0 as t -> 0+.
        let e_small = kernel.eval(-3.0, 1e-6, EDeriv::None).unwrap();
        assert!(e_small.amax() < 1e-12);
        // |e_t(., t)|_Linf <= C t^{-1/2} sampled over a time range: the
        // scaled quantity must stay bounded.
        let mut worst: f64 = 0.0;
        for &t in &[0.01f64, 0.1, 1.0, 10.0, 100.0] {
            let mut sup: f64 = 0.0;
            let mut y = -30.0;
            while y <= 30.0 {
                sup = sup.max(kernel.eval(y, t, EDeriv::T).unwrap().amax());
                y += 0.05;
            }
            worst = worst.max(sup * t.sqrt());
        }
        assert!(worst.is_finite() && worst > 0.0);
        let c0 = worst;
        // Re-check at finer times: constant does not blow up.
        for &t in &[0.003f64, 0.03] {
            let mut sup: f64 = 0.0;
            let mut y = -30.0;
            while y <= 30.0 {
                sup = sup.max(kernel.eval(y, t, EDeriv::T).unwrap().amax());
                y += 0.02;
            }
            assert!(sup * t.sqrt() < 3.0 * c0);
        }
        // e_y integrates weakly to zero as s -> 0 against smooth g.
        let g = p.grid;
        let smooth = DVector::from_fn(2 * g.len, |idx, _| {
            let x = g.x(idx / 2);
            (-(x * x) / 8.0).exp()
        });
        let w1 = kernel
            .integrate_against(&g, 1e-4, EDeriv::Y, &smooth)
            .unwrap();
        let w2 = kernel
            .integrate_against(&g, 1e-2, EDeriv::Y, &smooth)
            .unwrap();
        assert!(w1.abs() < w2.abs() + 1e-9);
        assert!(w1.abs() < 1e-3);
        // t <= 0 rejected.
        assert!(kernel.eval(0.5, 0.0, EDeriv::None).is_err());
    }

    #[test]
    fn ekernel_asymptotic_covector_matches_dual() {
        // e(y, infinity) = ell0 on both sides (the dual of the jump).
        let p = stable_shock_profile(20.0, 257);
        let kernel = EKernel::from_endstates(&p.endstates).unwrap();
        let lm = p.endstates.liu_majda().unwrap();
        let t = 1e6;
        let left = kernel.eval(-1.0, t, EDeriv::None).unwrap();
        let right = kernel.eval(1.0, t, EDeriv::None).unwrap();
        assert_relative_eq!(left, lm.ell0, epsilon = 1e-6);
        assert_relative_eq!(right, lm.ell0, epsilon = 1e-6);
    }

    #[test]
    fn nonlinear_residual_zero_and_quadratic() {
        let p = stable_shock_profile(20.0, 513);
        let z = DVector::zeros(2 * p.grid.len);
        let r0 = nonlinear_residual(&p, &z).unwrap();
        assert_eq!(r0.amax(), 0.0);
        // Quadratic smallness: ||N(aV)|| / a^2 bounded as a -> 0.
        let g = p.grid;
        let dir = DVector::from_fn(2 * g.len, |idx, _| {
            let x = g.x(idx / 2);
            (-(x * x) / 4.0).exp() * if idx % 2 == 0 { 1.0 } else { -0.5 }
        });
        let mut prev_ratio = None;
        for &a in &[1e-2f64, 1e-3, 1e-4] {
            let r = nonlinear_residual(&p, &(&dir * a)).unwrap();
            let ratio = grid::l2_norm(&g, 2, &r) / (a * a);
            if let Some(pr) = prev_ratio {
                let pr: f64 = pr;
                assert!((ratio - pr).abs() / pr < 0.2, "ratio drift {ratio} vs {pr}");
            }
            prev_ratio = Some(ratio);
        }
    }

    #[test]
    fn translate_recovery_by_phase_tracking() {
        // Datum = shifted profile; the tracked phase must converge to the
        // shift, and the per-snapshot least-squares fit agrees.
        let p = stable_shock_profile(20.0, 801);
        let g = p.grid;
        let ubar = p.state_flat();
        let shift = 0.2;
        let shifted = interp::shift(&g, 2, &ubar, -shift);
        let v0 = &shifted - &ubar;
        let ctrl = StepControl {
            snapshots: 81,
            ..Default::default()
        };
        let traj = evolve_nonlinear(&p, &v0, 8.0, &ctrl).unwrap();
        let kernel = EKernel::from_endstates(&p.endstates).unwrap();
        let phase = track_phase(&traj, &p, &kernel).unwrap();
        let alpha_end = *phase.alpha.last().unwrap();
        // The translate is an exact equilibrium: alpha should head to
        // -shift... the perturbation U(x) = profile(x - shift) means the
        // best fit of U(x + alpha) = profile needs alpha = shift.
        let (a_fit, _) = fit_translate(&p, traj.final_state(), 1.0);
        assert!(
            (a_fit - shift).abs() < 0.02,
            "least-squares fit {a_fit} vs {shift}"
        );
        assert!(
            (alpha_end - shift).abs() < 0.05,
            "tracked {alpha_end} vs {shift}"
        );
        // Consistency between the two alpha routes.
        let k = phase.alpha.len() - 1;
        assert!(
            (phase.alpha[k] - phase.alpha_direct[k]).abs() < 0.02,
            "integrated {} vs direct {}",
            phase.alpha[k],
            phase.alpha_direct[k]
        );
    }

    #[test]
    fn trivial_phase_for_zero_datum() {
        let p = stable_shock_profile(20.0, 257);
        let v0 = DVector::zeros(2 * p.grid.len);
        let ctrl = StepControl {
            snapshots: 17,
            ..Default::default()
        };
        let traj = evolve_nonlinear(&p, &v0, 1.0, &ctrl).unwrap();
        let kernel = EKernel::from_endstates(&p.endstates).unwrap();
        let phase = track_phase(&traj, &p, &kernel).unwrap();
        assert!(phase.alpha.iter().all(|a| a.abs() < 1e-8));
        assert!(phase.alpha_dot.iter().all(|a| a.abs() < 1e-8));
        let report = decay_report(&phase, 0.0, 0.2, 1.0);
        assert!(report.degenerate);
    }

    #[test]
    fn off_manifold_exit_time_matches_linear_growth() {
        // Pure unstable-mode datum: exit when eps * exp(lambda t) = R.
        let (_p, lop) = synthetic_unstable(257, 2.0);
        let spec = crate::linop::unstable_spectrum(&lop, 1e-6).unwrap();
        let lam = spec.eigenvalues[0].re;
        let phi = spec.right[0].map(|z| z.re);
        let phi = &phi / grid::l2_norm(&lop.grid, 2, &phi);
        let eps = 1e-4;
        let radius = 1e-2;
        let ctrl = StepControl {
            snapshots: 401,
            ..Default::default()
        };
        let run = conditional_experiment(&lop, &(&phi * eps), radius, 30.0, &ctrl).unwrap();
        let t_exit = run.exit_time.expect("must exit the tube");
        let t_pred = (radius / eps).ln() / lam;
        assert!(
            (t_exit - t_pred).abs() / t_pred < 0.25,
            "exit {t_exit} vs predicted {t_pred}"
        );
    }
}
