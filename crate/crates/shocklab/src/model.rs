//! Conservation-law systems in block hyperbolic-parabolic form,
//! U_t + F(U)_x = (B(U)U_x)_x, with the structural hypotheses checked
//! numerically: zero upper viscosity blocks and a linear hyperbolic flux
//! block, a block-diagonal positive-definite symmetrizer, genuine coupling
//! at the endstates, and real simple characteristics.
//!
//! Built-in systems: isentropic and full Navier-Stokes and planar MHD, all
//! in Lagrangian coordinates with an ideal gamma-law equation of state.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Result, ShockError};
use crate::fd;

/// A conservation law in block form. Implementations provide the flux, the
/// full n-by-n viscosity matrix, a symmetrizer, and a physical-domain
/// predicate. `flux_jacobian` may return a closed form; otherwise a
/// 4th-order finite difference is used.
pub trait System: Send + Sync {
    fn name(&self) -> &str;
    /// Total state dimension.
    fn n(&self) -> usize;
    /// Parabolic block dimension (the last `r` components diffuse).
    fn r(&self) -> usize;
    fn flux(&self, u: &DVector<f64>) -> DVector<f64>;
    /// Full viscosity matrix B(U); block form requires all entries outside
    /// the lower-right r-by-r block to vanish.
    fn viscosity(&self, u: &DVector<f64>) -> DMatrix<f64>;
    /// Block-diagonal symmetric positive definite symmetrizer A0(U).
    fn symmetrizer(&self, u: &DVector<f64>) -> DMatrix<f64>;
    fn is_physical(&self, u: &DVector<f64>) -> bool;
    fn flux_jacobian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    fn params(&self) -> serde_json::Value {
        json!({})
    }
}

/// A system together with the Galilean shift absorbed into its flux. After
/// `shifted(s)` the wave under study is standing: the effective flux is
/// F(U) - s U and all speeds are measured relative to the wave.
#[derive(Clone)]
pub struct SystemModel {
    sys: Arc<dyn System>,
    shift: f64,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SystemModel({}, shift={})", self.sys.name(), self.shift)
    }
}

impl SystemModel {
    pub fn new(sys: Arc<dyn System>) -> Self {
        SystemModel { sys, shift: 0.0 }
    }

    /// Absorb a further shift `s` into the flux.
    pub fn shifted(&self, s: f64) -> Self {
        SystemModel {
            sys: self.sys.clone(),
            shift: self.shift + s,
        }
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn name(&self) -> &str {
        self.sys.name()
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn r(&self) -> usize {
        self.sys.r()
    }

    pub fn params(&self) -> serde_json::Value {
        self.sys.params()
    }

    pub fn is_physical(&self, u: &DVector<f64>) -> bool {
        self.sys.is_physical(u)
    }

    /// Shifted flux F(U) - shift * U.
    pub fn flux(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut f = self.sys.flux(u);
        if self.shift != 0.0 {
            f -= u * self.shift;
        }
        f
    }

    /// Jacobian of the shifted flux; closed form when available.
    pub fn flux_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut a = match self.sys.flux_jacobian(u) {
            Some(j) => j,
            None => fd::jacobian(|w| self.sys.flux(w), u, self.n()),
        };
        if self.shift != 0.0 {
            for i in 0..self.n() {
                a[(i, i)] -= self.shift;
            }
        }
        a
    }

    /// Finite-difference Jacobian of the shifted flux, regardless of whether
    /// a closed form exists. Used as an independent cross-check.
    pub fn fd_flux_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut a = fd::jacobian(|w| self.sys.flux(w), u, self.n());
        if self.shift != 0.0 {
            for i in 0..self.n() {
                a[(i, i)] -= self.shift;
            }
        }
        a
    }

    pub fn viscosity(&self, u: &DVector<f64>) -> DMatrix<f64> {
        self.sys.viscosity(u)
    }

    /// Lower-right r-by-r viscosity block b(U).
    pub fn visc_block(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let (n, r) = (self.n(), self.r());
        self.sys.viscosity(u).view((n - r, n - r), (r, r)).into()
    }

    /// Directional derivative (dB(U)V) of the full viscosity matrix.
    pub fn visc_dir_deriv(&self, u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        fd::matrix_dir_deriv(|w| self.sys.viscosity(w), u, v)
    }

    pub fn symmetrizer(&self, u: &DVector<f64>) -> DMatrix<f64> {
        self.sys.symmetrizer(u)
    }

    /// The spec-level "jacobians" operation: validates the state, then
    /// returns (dF, A0). Directional viscosity derivatives are available
    /// through [`SystemModel::visc_dir_deriv`].
    pub fn jacobians(&self, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if !self.is_physical(u) {
            return Err(ShockError::Unphysical(format!(
                "jacobians at {:?}",
                u.as_slice()
            )));
        }
        Ok((self.flux_jacobian(u), self.symmetrizer(u)))
    }
}

// ---------------------------------------------------------------------------
// Characteristic data at endstates
// ---------------------------------------------------------------------------

/// Real simple eigen-decomposition of a flux Jacobian: speeds sorted
/// ascending, unit right eigenvectors as columns, left eigenvectors as rows
/// normalized so that left * right = Id.
#[derive(Debug, Clone)]
pub struct CharacteristicBasis {
    pub speeds: Vec<f64>,
    pub right: DMatrix<f64>,
    pub left: DMatrix<f64>,
}

impl CharacteristicBasis {
    pub fn decompose(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let scale = a.amax().max(1e-12);
        let ev = a.clone().complex_eigenvalues();
        let mut speeds: Vec<f64> = Vec::with_capacity(n);
        for lam in ev.iter() {
            if lam.im.abs() > 1e-7 * scale {
                return Err(ShockError::Hypothesis(format!(
                    "complex characteristic speed {} + {}i",
                    lam.re, lam.im
                )));
            }
            speeds.push(lam.re);
        }
        speeds.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for w in speeds.windows(2) {
            if (w[1] - w[0]).abs() < 1e-7 * scale {
                return Err(ShockError::Hypothesis(format!(
                    "characteristic speeds not simple: {} vs {}",
                    w[0], w[1]
                )));
            }
        }
        let mut right = DMatrix::zeros(n, n);
        let mut left = DMatrix::zeros(n, n);
        for (k, &lam) in speeds.iter().enumerate() {
            let r = null_vector(&(a - DMatrix::identity(n, n) * lam))?;
            let l = null_vector(&(a.transpose() - DMatrix::identity(n, n) * lam))?;
            let dot = l.dot(&r);
            if dot.abs() < 1e-10 {
                return Err(ShockError::Eigensolver(
                    "degenerate left/right eigenvector pairing".into(),
                ));
            }
            right.set_column(k, &r);
            left.set_row(k, &(l / dot).transpose());
        }
        Ok(CharacteristicBasis { speeds, right, left })
    }
}

/// Smallest-singular-value right singular vector, sign-fixed for determinism.
fn null_vector(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let svd = m.clone().svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| ShockError::Eigensolver("SVD failed".into()))?;
    let mut idx = 0;
    let mut smin = f64::INFINITY;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s < smin {
            smin = *s;
            idx = i;
        }
    }
    let mut v: DVector<f64> = vt.row(idx).transpose();
    let mut pivot = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v = -v;
    }
    let nrm = v.norm();
    Ok(v / nrm)
}

/// Endstate pair of a standing shock (speed already shifted to zero), with
/// Jacobians and characteristic bases on both sides.
#[derive(Debug, Clone)]
pub struct Endstates {
    pub u_minus: DVector<f64>,
    pub u_plus: DVector<f64>,
    pub a_minus: DMatrix<f64>,
    pub a_plus: DMatrix<f64>,
    pub basis_minus: CharacteristicBasis,
    pub basis_plus: CharacteristicBasis,
}

impl Endstates {
    /// Build from a shifted model. Verifies real, simple, nonzero speeds on
    /// both sides (nonzero relative to the wave, i.e. different from s).
    pub fn new(model: &SystemModel, u_minus: DVector<f64>, u_plus: DVector<f64>) -> Result<Self> {
        let a_minus = model.flux_jacobian(&u_minus);
        let a_plus = model.flux_jacobian(&u_plus);
        let basis_minus = CharacteristicBasis::decompose(&a_minus)?;
        let basis_plus = CharacteristicBasis::decompose(&a_plus)?;
        for basis in [&basis_minus, &basis_plus] {
            let scale = basis.speeds.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            for &a in &basis.speeds {
                if a.abs() < 1e-7 * scale.max(1.0) {
                    return Err(ShockError::Hypothesis(format!(
                        "characteristic speed {a} coincides with the shock speed"
                    )));
                }
            }
        }
        Ok(Endstates {
            u_minus,
            u_plus,
            a_minus,
            a_plus,
            basis_minus,
            basis_plus,
        })
    }

    pub fn jump(&self) -> DVector<f64> {
        &self.u_plus - &self.u_minus
    }

    /// Inviscid (Liu-Majda) stability data for a Lax shock: determinant of
    /// outgoing eigenvectors plus the jump, its condition number, and the
    /// dual row `ell0` of the jump column (ell0 . jump = 1, ell0 orthogonal
    /// to the outgoing eigenvectors).
    pub fn liu_majda(&self) -> Result<LiuMajdaReport> {
        let n = self.u_minus.len();
        let jump = self.jump();
        if jump.norm() < 1e-12 {
            return Err(ShockError::DegenerateJump);
        }
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for (k, &a) in self.basis_minus.speeds.iter().enumerate() {
            if a < 0.0 {
                cols.push(self.basis_minus.right.column(k).into());
            }
        }
        let outgoing_left = cols.len();
        for (k, &a) in self.basis_plus.speeds.iter().enumerate() {
            if a > 0.0 {
                cols.push(self.basis_plus.right.column(k).into());
            }
        }
        if cols.len() != n - 1 {
            return Err(ShockError::Hypothesis(format!(
                "outgoing characteristic count {} != n-1 = {}; not a Lax shock",
                cols.len(),
                n - 1
            )));
        }
        let mut m_raw = DMatrix::zeros(n, n);
        for (j, c) in cols.iter().enumerate() {
            m_raw.set_column(j, c);
        }
        m_raw.set_column(n - 1, &jump);
        let inv = m_raw.clone().try_inverse().ok_or_else(|| {
            ShockError::Hypothesis("Liu-Majda matrix singular (D3 fails)".into())
        })?;
        let ell0: DVector<f64> = inv.row(n - 1).transpose();

        let mut m_norm = m_raw.clone();
        let jn = jump.norm();
        for i in 0..n {
            m_norm[(i, n - 1)] /= jn;
        }
        let det = m_norm.determinant();
        let svd = m_norm.svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        Ok(LiuMajdaReport {
            det,
            cond,
            ell0,
            p_index: outgoing_left + 1,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LiuMajdaReport {
    /// Determinant with unit-normalized columns.
    pub det: f64,
    pub cond: f64,
    #[serde(skip)]
    pub ell0: DVector<f64>,
    /// Shock family index P (number of negative speeds at minus state + 1).
    pub p_index: usize,
}

// ---------------------------------------------------------------------------
// Structure validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub passed: bool,
    /// Positive margin = distance to failure; negative = amount of violation.
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureReport {
    pub system: String,
    pub entries: Vec<CheckEntry>,
}

impl StructureReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn sym_defect(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.min()
}

/// Numerical verification of the structural hypotheses on sampled states,
/// plus the endstate conditions when an endstate pair is supplied.
/// Failures are report entries, never faults.
pub fn validate_structure(
    model: &SystemModel,
    states: &[DVector<f64>],
    endstates: Option<&Endstates>,
) -> StructureReport {
    let n = model.n();
    let r = model.r();
    let mut entries = Vec::new();
    let tol = 1e-8;
    let sym_tol = 1e-10;

    // (A1) viscosity block form with nonsingular b.
    let mut off_block: f64 = 0.0;
    let mut min_bdet = f64::INFINITY;
    for u in states {
        let b = model.viscosity(u);
        let scale = b.amax().max(1e-30);
        for i in 0..n {
            for j in 0..n {
                if i < n - r || j < n - r {
                    off_block = off_block.max(b[(i, j)].abs() / scale);
                }
            }
        }
        let bb = model.visc_block(u);
        min_bdet = min_bdet.min(bb.determinant().abs() / scale.powi(r as i32));
    }
    entries.push(CheckEntry {
        name: "A1_block_form".into(),
        passed: off_block <= tol && min_bdet > tol,
        margin: min_bdet,
        detail: format!("max off-block |B|/scale = {off_block:.3e}, min |det b|/scale = {min_bdet:.3e}"),
    });

    // (A1) linearity of the hyperbolic flux block.
    let mut max_hess: f64 = 0.0;
    for u in states {
        let scale = 1.0 + model.flux(u).amax();
        for c in 0..n - r {
            let h = fd::component_hessian(|w| model.flux(w), u, c);
            max_hess = max_hess.max(h.amax() / scale);
        }
    }
    entries.push(CheckEntry {
        name: "A1_f1_linear".into(),
        passed: max_hess <= tol,
        margin: tol - max_hess,
        detail: format!("max scaled Hessian residual of F1 = {max_hess:.3e}"),
    });

    // (A2) symmetrizer checks on sampled states.
    let mut a0_min_eig = f64::INFINITY;
    let mut a0_offblock: f64 = 0.0;
    let mut a0_sym: f64 = 0.0;
    let mut a011a11_sym: f64 = 0.0;
    let mut a022b_min = f64::INFINITY;
    let mut a0a_sym_samples: f64 = 0.0;
    for u in states {
        let a0 = model.symmetrizer(u);
        let a = model.flux_jacobian(u);
        a0_sym = a0_sym.max(sym_defect(&a0));
        a0_min_eig = a0_min_eig.min(min_sym_eig(&a0));
        let scale = a0.amax().max(1e-30);
        for i in 0..n {
            for j in 0..n {
                let in_block1 = i < n - r && j < n - r;
                let in_block2 = i >= n - r && j >= n - r;
                if !in_block1 && !in_block2 {
                    a0_offblock = a0_offblock.max(a0[(i, j)].abs() / scale);
                }
            }
        }
        let a011: DMatrix<f64> = a0.view((0, 0), (n - r, n - r)).into();
        let a11: DMatrix<f64> = a.view((0, 0), (n - r, n - r)).into();
        a011a11_sym = a011a11_sym.max(sym_defect(&(&a011 * &a11)));
        let a022: DMatrix<f64> = a0.view((n - r, n - r), (r, r)).into();
        let b = model.visc_block(u);
        a022b_min = a022b_min.min(min_sym_eig(&(&a022 * &b)));
        a0a_sym_samples = a0a_sym_samples.max(sym_defect(&(&a0 * &a)));
    }
    entries.push(CheckEntry {
        name: "A2_a0_spd_block_diagonal".into(),
        passed: a0_min_eig > 0.0 && a0_offblock <= tol && a0_sym <= sym_tol,
        margin: a0_min_eig,
        detail: format!(
            "min eig A0 = {a0_min_eig:.3e}, off-block = {a0_offblock:.3e}, symmetry defect = {a0_sym:.3e}"
        ),
    });
    entries.push(CheckEntry {
        name: "A2_a011_a11_symmetric".into(),
        passed: a011a11_sym <= 1e-7,
        margin: 1e-7 - a011a11_sym,
        detail: format!("max symmetry defect of A0_11 A_11 = {a011a11_sym:.3e}"),
    });
    entries.push(CheckEntry {
        name: "A2_a022_b_positive".into(),
        passed: a022b_min > 0.0,
        margin: a022b_min,
        detail: format!("min eig sym(A0_22 b) = {a022b_min:.3e}"),
    });

    // (A2) symmetry of A0 A: required at the endstates, reported on samples.
    let a0a_endstate_defect = endstates.map(|es| {
        let d1 = sym_defect(&(model.symmetrizer(&es.u_minus) * &es.a_minus));
        let d2 = sym_defect(&(model.symmetrizer(&es.u_plus) * &es.a_plus));
        d1.max(d2)
    });
    let (a0a_defect, a0a_detail) = match a0a_endstate_defect {
        Some(d) => (d, format!("endstate defect = {d:.3e}, sample defect = {a0a_sym_samples:.3e}")),
        None => (
            a0a_sym_samples,
            format!("sample defect = {a0a_sym_samples:.3e} (no endstates supplied)"),
        ),
    };
    entries.push(CheckEntry {
        name: "A2_a0a_symmetric".into(),
        passed: a0a_defect <= 1e-7,
        margin: 1e-7 - a0a_defect,
        detail: a0a_detail,
    });

    // (H1) spectrum of A11 real with a definite sign relative to the wave.
    let mut h1_margin = f64::INFINITY;
    let mut h1_ok = true;
    let mut sign: Option<f64> = None;
    for u in states {
        let a = model.flux_jacobian(u);
        let a11: DMatrix<f64> = a.view((0, 0), (n - r, n - r)).into();
        let ev = a11.complex_eigenvalues();
        for lam in ev.iter() {
            if lam.im.abs() > 1e-7 * (1.0 + lam.re.abs()) {
                h1_ok = false;
            }
            h1_margin = h1_margin.min(lam.re.abs());
            let s = lam.re.signum();
            match sign {
                None => sign = Some(s),
                Some(prev) if prev != s => h1_ok = false,
                _ => {}
            }
        }
    }
    entries.push(CheckEntry {
        name: "H1_sigma_a11_signed".into(),
        passed: h1_ok && h1_margin > 0.0,
        margin: h1_margin,
        detail: format!(
            "min |sigma(A11)| = {h1_margin:.3e}, sign = {}",
            sign.map(|s| if s > 0.0 { "+" } else { "-" }).unwrap_or("?")
        ),
    });

    if let Some(es) = endstates {
        // (H2) already enforced at construction; report margins.
        let mut min_gap = f64::INFINITY;
        let mut min_abs = f64::INFINITY;
        for basis in [&es.basis_minus, &es.basis_plus] {
            for w in basis.speeds.windows(2) {
                min_gap = min_gap.min(w[1] - w[0]);
            }
            for &a in &basis.speeds {
                min_abs = min_abs.min(a.abs());
            }
        }
        entries.push(CheckEntry {
            name: "H2_endstate_spectra".into(),
            passed: min_gap > 0.0 && min_abs > 0.0,
            margin: min_abs.min(min_gap),
            detail: format!("min speed gap = {min_gap:.3e}, min |speed| = {min_abs:.3e}"),
        });

        // (A3) genuine coupling: no eigenvector of A± in ker B±.
        let mut coupling = f64::INFINITY;
        for (u, basis) in [(&es.u_minus, &es.basis_minus), (&es.u_plus, &es.basis_plus)] {
            let b = model.viscosity(u);
            for k in 0..n {
                let w = basis.right.column(k);
                coupling = coupling.min((&b * w).norm());
            }
        }
        entries.push(CheckEntry {
            name: "A3_genuine_coupling".into(),
            passed: coupling > tol,
            margin: coupling,
            detail: format!("min |B w| over endstate eigenvectors = {coupling:.3e}"),
        });
    }

    // (H0) regularity is assumed, not checkable numerically.
    entries.push(CheckEntry {
        name: "H0_regularity".into(),
        passed: true,
        margin: f64::INFINITY,
        detail: "C^k, k >= 4 assumed for built-in systems".into(),
    });

    StructureReport {
        system: model.name().to_string(),
        entries,
    }
}

// ---------------------------------------------------------------------------
// Built-in systems
// ---------------------------------------------------------------------------

/// Isentropic Navier-Stokes (p-system with viscosity) in Lagrangian
/// coordinates: v_t - u_x = 0, u_t + p(v)_x = ((nu/v) u_x)_x, p(v) = v^-gamma.
#[derive(Debug, Clone)]
pub struct IsentropicNs {
    pub gamma: f64,
    pub nu: f64,
}

impl IsentropicNs {
    fn pressure(&self, v: f64) -> f64 {
        v.powf(-self.gamma)
    }

    fn dp(&self, v: f64) -> f64 {
        -self.gamma * v.powf(-self.gamma - 1.0)
    }
}

impl System for IsentropicNs {
    fn name(&self) -> &str {
        "isentropic_ns"
    }

    fn n(&self) -> usize {
        2
    }

    fn r(&self) -> usize {
        1
    }

    fn flux(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![-u[1], self.pressure(u[0])])
    }

    fn flux_jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, self.dp(u[0]), 0.0]))
    }

    fn viscosity(&self, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, self.nu / u[0]])
    }

    fn symmetrizer(&self, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-self.dp(u[0]), 0.0, 0.0, 1.0])
    }

    fn is_physical(&self, u: &DVector<f64>) -> bool {
        u[0] > 0.0 && u.iter().all(|x| x.is_finite())
    }

    fn params(&self) -> serde_json::Value {
        json!({"gamma": self.gamma, "nu": self.nu})
    }
}

/// Full Navier-Stokes in Lagrangian coordinates with ideal gamma-law gas
/// (p = (gamma-1) e / v, T = e): state (v, u, E), E = e + u^2/2.
#[derive(Debug, Clone)]
pub struct FullNs {
    pub gamma: f64,
    pub mu: f64,
    pub kappa: f64,
}

impl FullNs {
    fn internal_energy(&self, u: &DVector<f64>) -> f64 {
        u[2] - 0.5 * u[1] * u[1]
    }

    fn pressure(&self, u: &DVector<f64>) -> f64 {
        (self.gamma - 1.0) * self.internal_energy(u) / u[0]
    }
}

impl System for FullNs {
    fn name(&self) -> &str {
        "full_ns"
    }

    fn n(&self) -> usize {
        3
    }

    fn r(&self) -> usize {
        2
    }

    fn flux(&self, u: &DVector<f64>) -> DVector<f64> {
        let p = self.pressure(u);
        DVector::from_vec(vec![-u[1], p, p * u[1]])
    }

    fn flux_jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (v, vel) = (u[0], u[1]);
        let e = self.internal_energy(u);
        let g1 = self.gamma - 1.0;
        let p = g1 * e / v;
        let pv = -g1 * e / (v * v);
        let pu = -g1 * vel / v;
        let pe = g1 / v;
        Some(DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0, -1.0, 0.0, //
                pv, pu, pe, //
                pv * vel, p + pu * vel, pe * vel,
            ],
        ))
    }

    fn viscosity(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let v = u[0];
        let vel = u[1];
        DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0, 0.0, 0.0, //
                0.0, self.mu / v, 0.0, //
                0.0, (self.mu - self.kappa) * vel / v, self.kappa / v,
            ],
        )
    }

    fn symmetrizer(&self, u: &DVector<f64>) -> DMatrix<f64> {
        // Hessian of the mathematical entropy -S, S = ln e + (gamma-1) ln v.
        let v = u[0];
        let vel = u[1];
        let e = self.internal_energy(u);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                (self.gamma - 1.0) / (v * v), 0.0, 0.0, //
                0.0, 1.0 / e + vel * vel / (e * e), -vel / (e * e), //
                0.0, -vel / (e * e), 1.0 / (e * e),
            ],
        )
    }

    fn is_physical(&self, u: &DVector<f64>) -> bool {
        u[0] > 0.0 && self.internal_energy(u) > 0.0 && u.iter().all(|x| x.is_finite())
    }

    fn params(&self) -> serde_json::Value {
        json!({"gamma": self.gamma, "mu": self.mu, "kappa": self.kappa})
    }
}

/// Planar MHD in Lagrangian coordinates with ideal gamma-law gas. State
/// (v, u1, u2, u3, w2, w3, E) with w = v B and E the total energy density.
/// Dissipative fluxes are written in the exact block form b(U) dU2/dx, with
/// transverse field gradients taken as (1/v) dw/dx.
#[derive(Debug, Clone)]
pub struct Mhd {
    pub gamma: f64,
    /// Longitudinal viscosity.
    pub nu: f64,
    /// Transverse viscosity.
    pub mu: f64,
    pub kappa: f64,
    pub mu0: f64,
    /// Electrical resistivity parameter sigma.
    pub sigma: f64,
    /// Constant longitudinal field B1*.
    pub b1: f64,
}

impl Mhd {
    fn internal_energy(&self, u: &DVector<f64>) -> f64 {
        let v = u[0];
        let kinetic = 0.5 * (u[1] * u[1] + u[2] * u[2] + u[3] * u[3]);
        let magnetic = (u[4] * u[4] + u[5] * u[5]) / (2.0 * self.mu0 * v);
        u[6] - kinetic - magnetic
    }

    fn pressure(&self, u: &DVector<f64>) -> f64 {
        (self.gamma - 1.0) * self.internal_energy(u) / u[0]
    }
}

impl System for Mhd {
    fn name(&self) -> &str {
        "mhd"
    }

    fn n(&self) -> usize {
        7
    }

    fn r(&self) -> usize {
        6
    }

    fn flux(&self, u: &DVector<f64>) -> DVector<f64> {
        let v = u[0];
        let (u1, u2, u3) = (u[1], u[2], u[3]);
        let (b2, b3) = (u[4] / v, u[5] / v);
        let p = self.pressure(u);
        let ptot = p + (b2 * b2 + b3 * b3) * 0.5 / self.mu0;
        let bfac = self.b1 / self.mu0;
        DVector::from_vec(vec![
            -u1,
            ptot,
            -bfac * b2,
            -bfac * b3,
            -self.b1 * u2,
            -self.b1 * u3,
            ptot * u1 - bfac * (b2 * u2 + b3 * u3),
        ])
    }

    fn viscosity(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let v = u[0];
        let (u1, u2, u3) = (u[1], u[2], u[3]);
        let (w2, w3) = (u[4], u[5]);
        let res = 1.0 / (self.sigma * self.mu0 * v * v);
        let mut b = DMatrix::zeros(7, 7);
        b[(1, 1)] = self.nu / v;
        b[(2, 2)] = self.mu / v;
        b[(3, 3)] = self.mu / v;
        b[(4, 4)] = res;
        b[(5, 5)] = res;
        // Energy row: viscous work + resistive work + heat conduction with
        // T = e expressed through the U2 gradient components.
        b[(6, 1)] = (self.nu - self.kappa) * u1 / v;
        b[(6, 2)] = (self.mu - self.kappa) * u2 / v;
        b[(6, 3)] = (self.mu - self.kappa) * u3 / v;
        b[(6, 4)] = w2 * res / self.mu0 - self.kappa * w2 / (self.mu0 * v * v);
        b[(6, 5)] = w3 * res / self.mu0 - self.kappa * w3 / (self.mu0 * v * v);
        b[(6, 6)] = self.kappa / v;
        b
    }

    fn symmetrizer(&self, u: &DVector<f64>) -> DMatrix<f64> {
        // Hessian of -S with S = ln e + (gamma-1) ln v, block-diagonalized by
        // dropping the (v, U2) couplings carried by the magnetic energy.
        let v = u[0];
        let e = self.internal_energy(u);
        let e2 = e * e;
        let mut de = DVector::zeros(7);
        de[0] = (u[4] * u[4] + u[5] * u[5]) / (2.0 * self.mu0 * v * v);
        de[1] = -u[1];
        de[2] = -u[2];
        de[3] = -u[3];
        de[4] = -u[4] / (self.mu0 * v);
        de[5] = -u[5] / (self.mu0 * v);
        de[6] = 1.0;
        let mut hess_e = DMatrix::zeros(7, 7);
        hess_e[(0, 0)] = -(u[4] * u[4] + u[5] * u[5]) / (self.mu0 * v * v * v);
        for i in 1..4 {
            hess_e[(i, i)] = -1.0;
        }
        hess_e[(4, 4)] = -1.0 / (self.mu0 * v);
        hess_e[(5, 5)] = -1.0 / (self.mu0 * v);
        hess_e[(0, 4)] = u[4] / (self.mu0 * v * v);
        hess_e[(4, 0)] = hess_e[(0, 4)];
        hess_e[(0, 5)] = u[5] / (self.mu0 * v * v);
        hess_e[(5, 0)] = hess_e[(0, 5)];
        let mut a0 = DMatrix::zeros(7, 7);
        for i in 0..7 {
            for j in 0..7 {
                a0[(i, j)] = de[i] * de[j] / e2 - hess_e[(i, j)] / e;
            }
        }
        a0[(0, 0)] += (self.gamma - 1.0) / (v * v);
        for j in 1..7 {
            a0[(0, j)] = 0.0;
            a0[(j, 0)] = 0.0;
        }
        a0
    }

    fn is_physical(&self, u: &DVector<f64>) -> bool {
        u[0] > 0.0 && self.internal_energy(u) > 0.0 && u.iter().all(|x| x.is_finite())
    }

    fn params(&self) -> serde_json::Value {
        json!({
            "gamma": self.gamma, "nu": self.nu, "mu": self.mu, "kappa": self.kappa,
            "mu0": self.mu0, "sigma": self.sigma, "b1": self.b1
        })
    }
}

fn param(params: &serde_json::Value, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| ShockError::InvalidParameter(format!("{key} must be a number"))),
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(ShockError::InvalidParameter(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// Construct a built-in system from a JSON parameter record.
pub fn builtin_system(name: &str, params: &serde_json::Value) -> Result<SystemModel> {
    let sys: Arc<dyn System> = match name {
        "isentropic_ns" => Arc::new(IsentropicNs {
            gamma: positive("gamma", param(params, "gamma", 2.0)?)?,
            nu: positive("nu", param(params, "nu", 1.0)?)?,
        }),
        "full_ns" => Arc::new(FullNs {
            gamma: positive("gamma", param(params, "gamma", 1.4)?)?,
            mu: positive("mu", param(params, "mu", 1.0)?)?,
            kappa: positive("kappa", param(params, "kappa", 1.0)?)?,
        }),
        "mhd" => Arc::new(Mhd {
            gamma: positive("gamma", param(params, "gamma", 5.0 / 3.0)?)?,
            nu: positive("nu", param(params, "nu", 1.0)?)?,
            mu: positive("mu", param(params, "mu", 1.0)?)?,
            kappa: positive("kappa", param(params, "kappa", 1.0)?)?,
            mu0: positive("mu0", param(params, "mu0", 1.0)?)?,
            sigma: positive("sigma", param(params, "sigma", 1.0)?)?,
            b1: param(params, "b1", 0.5)?,
        }),
        other => return Err(ShockError::UnknownSystem(other.to_string())),
    };
    Ok(SystemModel::new(sys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_states(model: &SystemModel, count: usize, seed: u64) -> Vec<DVector<f64>> {
        // Random physical states near a reference point.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = model.n();
        let mut states = Vec::new();
        while states.len() < count {
            let mut u = DVector::zeros(n);
            u[0] = 0.4 + 1.2 * rng.gen::<f64>();
            for c in 1..n {
                u[c] = -0.5 + rng.gen::<f64>();
            }
            if n >= 3 {
                // Keep internal energy positive for energy-carrying systems.
                u[n - 1] = 1.0 + rng.gen::<f64>() + 0.5 * u.view((1, 0), (n - 2, 1)).norm_squared();
            }
            if model.is_physical(&u) {
                states.push(u);
            }
        }
        states
    }

    #[test]
    fn isentropic_jacobian_closed_form() {
        let m = builtin_system("isentropic_ns", &json!({"gamma": 2.0, "nu": 1.0})).unwrap();
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let j = m.flux_jacobian(&u);
        // p(v) = v^-2, p'(1) = -2 = -gamma.
        let exact = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -2.0, 0.0]);
        assert_relative_eq!(j, exact, epsilon = 1e-12);
    }

    #[test]
    fn fd_jacobian_matches_closed_form_on_random_states() {
        for (name, params) in [
            ("isentropic_ns", json!({"gamma": 2.0, "nu": 1.0})),
            ("full_ns", json!({"gamma": 1.4, "mu": 1.0, "kappa": 1.0})),
        ] {
            let m = builtin_system(name, &params).unwrap();
            for u in sample_states(&m, 100, 7) {
                let closed = m.flux_jacobian(&u);
                let fd = m.fd_flux_jacobian(&u);
                let denom = closed.amax().max(1.0);
                assert!(
                    (closed - fd).amax() / denom < 1e-6,
                    "{name}: FD and closed-form dF disagree at {:?}",
                    u.as_slice()
                );
            }
        }
    }

    #[test]
    fn builtin_dimensions() {
        let m = builtin_system("isentropic_ns", &json!({})).unwrap();
        assert_eq!((m.n(), m.r()), (2, 1));
        let m = builtin_system("full_ns", &json!({})).unwrap();
        assert_eq!((m.n(), m.r()), (3, 2));
        let m = builtin_system("mhd", &json!({"b1": 0.5})).unwrap();
        assert_eq!((m.n(), m.r()), (7, 6));
    }

    #[test]
    fn unknown_name_and_bad_params_rejected() {
        assert!(matches!(
            builtin_system("euler", &json!({})),
            Err(ShockError::UnknownSystem(_))
        ));
        assert!(matches!(
            builtin_system("isentropic_ns", &json!({"nu": -1.0})),
            Err(ShockError::InvalidParameter(_))
        ));
    }

    #[test]
    fn structure_passes_for_isentropic() {
        let m = builtin_system("isentropic_ns", &json!({"gamma": 2.0, "nu": 1.0})).unwrap();
        // The validator compares sigma(A11) against the wave frame; shift so
        // the reference shock is standing.
        let m = m.shifted(-6.0f64.sqrt());
        let states: Vec<_> = (0..9)
            .map(|k| DVector::from_vec(vec![0.4 + 0.1 * k as f64, 0.2 * k as f64 - 0.5]))
            .collect();
        let report = validate_structure(&m, &states, None);
        assert!(report.all_passed(), "{report:#?}");
    }

    #[test]
    fn structure_passes_for_full_ns() {
        let m = builtin_system("full_ns", &json!({"gamma": 1.4})).unwrap().shifted(1.1);
        let states = sample_states(&m, 20, 3);
        let report = validate_structure(&m, &states, None);
        assert!(report.all_passed(), "{report:#?}");
    }

    #[test]
    fn fully_parabolic_system_fails_block_form() {
        struct FullyParabolic;
        impl System for FullyParabolic {
            fn name(&self) -> &str {
                "fully_parabolic"
            }
            fn n(&self) -> usize {
                2
            }
            fn r(&self) -> usize {
                1
            }
            fn flux(&self, u: &DVector<f64>) -> DVector<f64> {
                DVector::from_vec(vec![-u[1], -u[0]])
            }
            fn viscosity(&self, _u: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::identity(2, 2) * 1e-2
            }
            fn symmetrizer(&self, _u: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::identity(2, 2)
            }
            fn is_physical(&self, _u: &DVector<f64>) -> bool {
                true
            }
        }
        let m = SystemModel::new(Arc::new(FullyParabolic));
        let states = vec![DVector::from_vec(vec![1.0, 0.0])];
        let report = validate_structure(&m, &states, None);
        assert!(!report.entry("A1_block_form").unwrap().passed);
    }

    #[test]
    fn unphysical_full_ns_state_rejected() {
        let m = builtin_system("full_ns", &json!({})).unwrap();
        // e = E - u^2/2 <= 0 violates T_e > 0 thermodynamics.
        let u = DVector::from_vec(vec![1.0, 2.0, 1.0]);
        assert!(!m.is_physical(&u));
        assert!(matches!(m.jacobians(&u), Err(ShockError::Unphysical(_))));
    }

    #[test]
    fn characteristic_basis_biorthonormal() {
        let m = builtin_system("full_ns", &json!({"gamma": 1.4})).unwrap();
        let u = DVector::from_vec(vec![1.0, 0.3, 2.0]);
        let a = m.flux_jacobian(&u);
        let basis = CharacteristicBasis::decompose(&a).unwrap();
        let prod = &basis.left * &basis.right;
        assert_relative_eq!(prod, DMatrix::identity(3, 3), epsilon = 1e-9);
        // Lagrangian Euler speeds are {-c, 0, c}.
        assert!(basis.speeds[0] < 0.0 && basis.speeds[2] > 0.0);
        assert_relative_eq!(basis.speeds[1], 0.0, epsilon = 1e-9);
        assert_relative_eq!(basis.speeds[0], -basis.speeds[2], epsilon = 1e-9);
    }

    #[test]
    fn complex_speeds_rejected() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(matches!(
            CharacteristicBasis::decompose(&rot),
            Err(ShockError::Hypothesis(_))
        ));
    }

    #[test]
    fn visc_dir_deriv_zero_direction() {
        let m = builtin_system("isentropic_ns", &json!({})).unwrap();
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let d = m.visc_dir_deriv(&u, &DVector::zeros(2));
        assert_eq!(d.amax(), 0.0);
    }

    #[test]
    fn mhd_flux_block_is_linear() {
        let m = builtin_system("mhd", &json!({"b1": 0.8})).unwrap();
        let u = DVector::from_vec(vec![0.9, 0.1, -0.2, 0.05, 0.3, -0.1, 3.0]);
        assert!(m.is_physical(&u));
        let h = fd::component_hessian(|w| m.flux(w), &u, 0);
        assert!(h.amax() < 1e-7);
    }
}
