//! The discretized linearized operator L U = -(A(x)U)_x + (B(x)U_x)_x about
//! a profile, with A(x)V = dF(U(x))V - (dB(U(x))V) U_x(x). Provides banded
//! assembly with conservative differencing, the unstable spectrum with
//! biorthonormalized eigenfunction pairs and the projections built from
//! them, the spectral genericity checks (D1)-(D3), and a time-domain
//! semigroup decay probe.

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::Serialize;

use crate::error::{Result, ShockError};
use crate::fit::{self, LineFit};
use crate::grid::{self, Grid1d};
use crate::profile::ShockProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundaryClosure {
    /// Perturbations pinned to zero at the domain ends; boundary rows decay.
    DirichletEndstate,
    /// Ghost values by linear extrapolation (one-sided closure).
    OutflowExtrapolation,
}

/// Exponentially localized rank-one term gamma * psi <psi~, .>, in
/// divergence-compatible form (psi is an exact x-derivative, so it carries
/// zero mass). Used to manufacture a controlled unstable eigenvalue on top
/// of a stable shock operator: test scaffolding with a known ground truth,
/// not a physical model.
#[derive(Debug, Clone)]
pub struct RankOneBump {
    pub gamma: f64,
    pub shape: DVector<f64>,
    pub dual: DVector<f64>,
}

impl RankOneBump {
    /// shape = d/dx [exp(-((x-center)/width)^2)] placed in one component,
    /// dual normalized so <dual, shape> = 1.
    pub fn new(
        grid: &Grid1d,
        n: usize,
        component: usize,
        gamma: f64,
        width: f64,
        center: f64,
    ) -> Self {
        let mut shape = DVector::zeros(grid.len * n);
        for i in 0..grid.len {
            let z = (grid.x(i) - center) / width;
            shape[i * n + component] = -2.0 * z / width * (-z * z).exp();
        }
        let nrm2 = grid::inner(grid, n, &shape, &shape);
        let dual = &shape / nrm2;
        RankOneBump { gamma, shape, dual }
    }

    pub fn apply(&self, grid: &Grid1d, n: usize, f: &DVector<f64>) -> DVector<f64> {
        let c = grid::inner(grid, n, &self.dual, f);
        &self.shape * (self.gamma * c)
    }
}

/// Banded discretization of the linearized operator, split into the
/// advective part -(A(x) .)_x and the diffusive part (B(x) ._x)_x so time
/// steppers can treat them explicitly/implicitly.
pub struct LinearOperator {
    pub profile: Arc<ShockProfile>,
    pub order: usize,
    pub bc: BoundaryClosure,
    pub grid: Grid1d,
    pub n: usize,
    pub r: usize,
    adv: CsrMatrix<f64>,
    diff: CsrMatrix<f64>,
    /// A(x_i), including the viscosity-derivative transport correction.
    pub a_coeff: Vec<DMatrix<f64>>,
    /// B(x_i).
    pub b_coeff: Vec<DMatrix<f64>>,
    /// Max spectral radius of A(x) over the grid (CFL bound).
    pub max_char_speed: f64,
    pub rank_one: Option<RankOneBump>,
}

fn spmv(m: &CsrMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    for (i, row) in m.row_iter().enumerate() {
        let mut s = 0.0;
        for (j, val) in row.col_indices().iter().zip(row.values()) {
            s += val * v[*j];
        }
        out[i] = s;
    }
    out
}

/// First-derivative stencil at node i as (offset, coefficient) pairs.
fn d1_stencil(i: usize, m: usize, h: f64, order: usize) -> Vec<(isize, f64)> {
    if order == 4 && i >= 2 && i + 2 < m {
        vec![
            (-2, 1.0 / (12.0 * h)),
            (-1, -8.0 / (12.0 * h)),
            (1, 8.0 / (12.0 * h)),
            (2, -1.0 / (12.0 * h)),
        ]
    } else if i > 0 && i + 1 < m {
        vec![(-1, -0.5 / h), (1, 0.5 / h)]
    } else if i == 0 {
        vec![(0, -1.5 / h), (1, 2.0 / h), (2, -0.5 / h)]
    } else {
        vec![(0, 1.5 / h), (-1, -2.0 / h), (-2, 0.5 / h)]
    }
}

/// Assemble the linearized operator about `profile`.
pub fn assemble(
    profile: &Arc<ShockProfile>,
    order: usize,
    bc: BoundaryClosure,
) -> Result<LinearOperator> {
    if order != 2 && order != 4 {
        return Err(ShockError::InvalidParameter(format!(
            "discretization order must be 2 or 4, got {order}"
        )));
    }
    if profile.tail_gap() > 1e-6 {
        return Err(ShockError::Unresolved(format!(
            "profile tails not converged (gap {:.3e})",
            profile.tail_gap()
        )));
    }
    let g = profile.grid;
    let m = g.len;
    let n = profile.n();
    let h = g.h();
    let model = &profile.model;

    let mut a_coeff = Vec::with_capacity(m);
    let mut b_coeff = Vec::with_capacity(m);
    let mut max_char_speed = 0.0f64;
    for i in 0..m {
        let u: DVector<f64> = profile.states.column(i).into();
        let ux: DVector<f64> = profile.derivs.column(i).into();
        let df = model.flux_jacobian(&u);
        // Columns of the transport correction: (dB(U) e_k) U_x.
        let mut corr = DMatrix::zeros(n, n);
        if ux.amax() > 1e-14 {
            for k in 0..n {
                let mut ek = DVector::zeros(n);
                ek[k] = 1.0;
                let db = model.visc_dir_deriv(&u, &ek);
                corr.set_column(k, &(db * &ux));
            }
        }
        let a = df - corr;
        for lam in a.complex_eigenvalues().iter() {
            max_char_speed = max_char_speed.max(lam.norm());
        }
        a_coeff.push(a);
        b_coeff.push(model.viscosity(&u));
    }

    let mut adv = CooMatrix::new(n * m, n * m);
    let mut diff = CooMatrix::new(n * m, n * m);
    let push_block =
        |coo: &mut CooMatrix<f64>, i: usize, j: usize, blk: &DMatrix<f64>, scale: f64| {
            for bi in 0..n {
                for bj in 0..n {
                    let v = blk[(bi, bj)] * scale;
                    if v != 0.0 {
                        coo.push(i * n + bi, j * n + bj, v);
                    }
                }
            }
        };

    let b_mid = |i: usize, j: usize| -> DMatrix<f64> { (&b_coeff[i] + &b_coeff[j]) * 0.5 };

    for i in 0..m {
        let boundary = i == 0 || i + 1 == m;
        if boundary {
            match bc {
                BoundaryClosure::DirichletEndstate => {
                    // Decaying sink rows keep the matrix nonsingular without
                    // touching the interior spectrum; evolution from zero
                    // boundary data is exact Dirichlet.
                    let id = DMatrix::identity(n, n);
                    push_block(&mut adv, i, i, &id, -1.0);
                }
                BoundaryClosure::OutflowExtrapolation => {
                    let (inner, sign) = if i == 0 { (1usize, 1.0) } else { (m - 2, -1.0) };
                    // Ghost by linear extrapolation: U_ghost = 2 U_i - U_inner.
                    push_block(&mut adv, i, i, &a_coeff[i], sign / h);
                    let asum = &a_coeff[inner] + &a_coeff[i];
                    push_block(&mut adv, i, inner, &asum, -sign * 0.5 / h);
                    let bd = b_mid(i, inner) - &b_coeff[i];
                    push_block(&mut diff, i, i, &bd, -1.0 / (h * h));
                    push_block(&mut diff, i, inner, &bd, 1.0 / (h * h));
                }
            }
            continue;
        }
        if order == 4 && i >= 2 && i + 2 < m {
            // -(AU)_x with the 4th-order divergence stencil.
            push_block(&mut adv, i, i - 2, &a_coeff[i - 2], -1.0 / (12.0 * h));
            push_block(&mut adv, i, i - 1, &a_coeff[i - 1], 8.0 / (12.0 * h));
            push_block(&mut adv, i, i + 1, &a_coeff[i + 1], -8.0 / (12.0 * h));
            push_block(&mut adv, i, i + 2, &a_coeff[i + 2], 1.0 / (12.0 * h));
            // (B U_x)_x as the wide-stencil composition D1(B D1 U).
            for (k, ck) in d1_stencil(i, m, h, 4) {
                let node = (i as isize + k) as usize;
                for (j, cj) in d1_stencil(node, m, h, 4) {
                    let col = (node as isize + j) as usize;
                    push_block(&mut diff, i, col, &b_coeff[node], ck * cj);
                }
            }
        } else {
            push_block(&mut adv, i, i - 1, &a_coeff[i - 1], 0.5 / h);
            push_block(&mut adv, i, i + 1, &a_coeff[i + 1], -0.5 / h);
            let bm = b_mid(i - 1, i);
            let bp = b_mid(i, i + 1);
            push_block(&mut diff, i, i - 1, &bm, 1.0 / (h * h));
            let bsum = &bm + &bp;
            push_block(&mut diff, i, i, &bsum, -1.0 / (h * h));
            push_block(&mut diff, i, i + 1, &bp, 1.0 / (h * h));
        }
    }

    Ok(LinearOperator {
        profile: profile.clone(),
        order,
        bc,
        grid: g,
        n,
        r: profile.r(),
        adv: CsrMatrix::from(&adv),
        diff: CsrMatrix::from(&diff),
        a_coeff,
        b_coeff,
        max_char_speed,
        rank_one: None,
    })
}

impl LinearOperator {
    /// Attach a synthetic rank-one bump (see [`RankOneBump`]).
    pub fn with_rank_one(mut self, bump: RankOneBump) -> Self {
        self.rank_one = Some(bump);
        self
    }

    pub fn dim(&self) -> usize {
        self.n * self.grid.len
    }

    /// Full operator action L f.
    pub fn apply(&self, f: &DVector<f64>) -> DVector<f64> {
        self.apply_adv(f) + self.apply_diff(f)
    }

    /// Advective (explicit) part, including the rank-one bump if present.
    pub fn apply_adv(&self, f: &DVector<f64>) -> DVector<f64> {
        let mut out = spmv(&self.adv, f);
        if let Some(b) = &self.rank_one {
            out += b.apply(&self.grid, self.n, f);
        }
        out
    }

    /// Diffusive (implicit) part.
    pub fn apply_diff(&self, f: &DVector<f64>) -> DVector<f64> {
        spmv(&self.diff, f)
    }

    /// Dense matrix representation (for eigensolves at modest N).
    pub fn dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut d = DMatrix::zeros(dim, dim);
        for (i, j, v) in self.adv.triplet_iter() {
            d[(i, j)] += *v;
        }
        for (i, j, v) in self.diff.triplet_iter() {
            d[(i, j)] += *v;
        }
        if let Some(b) = &self.rank_one {
            for i in 0..dim {
                if b.shape[i] == 0.0 {
                    continue;
                }
                for j in 0..dim {
                    let w = self.grid.weight(j / self.n);
                    d[(i, j)] += b.gamma * b.shape[i] * w * b.dual[j];
                }
            }
        }
        d
    }

    /// Diffusion blocks for the implicit sweep: (lower, diag, upper) r-by-r
    /// blocks of the U2 rows of (B ._x)_x. Order-2 stencils only.
    pub fn diff_tridiag_blocks(&self) -> Result<Vec<[DMatrix<f64>; 3]>> {
        if self.order != 2 {
            return Err(ShockError::Stepping(
                "implicit solver supports order-2 diffusion stencils only".into(),
            ));
        }
        let m = self.grid.len;
        let n = self.n;
        let r = self.r;
        let h2 = self.grid.h() * self.grid.h();
        let sub = |mat: &DMatrix<f64>| -> DMatrix<f64> { mat.view((n - r, n - r), (r, r)).into() };
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
            let bm = sub(&((&self.b_coeff[i - 1] + &self.b_coeff[i]) * 0.5));
            let bp = sub(&((&self.b_coeff[i] + &self.b_coeff[i + 1]) * 0.5));
            let diag = -(&bm + &bp) / h2;
            out.push([bm / h2, diag, bp / h2]);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Spectrum and projections
// ---------------------------------------------------------------------------

/// Unstable eigen-data of the discrete operator: eigenvalues with
/// Re > cutoff, right eigenfunctions, adjoint (left) eigenfunctions
/// biorthonormalized in the trapezoidal inner product, and antiderivatives
/// of the right eigenfunctions for the tilde projections.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub grid: Grid1d,
    pub n: usize,
    pub p: usize,
    pub eigenvalues: Vec<Complex<f64>>,
    pub right: Vec<DVector<Complex<f64>>>,
    pub left: Vec<DVector<Complex<f64>>>,
    pub antiderivs: Vec<DVector<Complex<f64>>>,
    /// All eigenvalues of the dense solve (for axis scans).
    pub all_eigenvalues: Vec<Complex<f64>>,
    /// Unstable candidates excluded as non-localized: (eigenvalue, tail mass).
    pub excluded: Vec<(Complex<f64>, f64)>,
}

fn complex_inner(
    grid: &Grid1d,
    n: usize,
    f: &DVector<Complex<f64>>,
    g: &DVector<Complex<f64>>,
) -> Complex<f64> {
    let mut s = Complex::new(0.0, 0.0);
    for i in 0..grid.len {
        let w = grid.weight(i);
        for c in 0..n {
            s += f[i * n + c].conj() * g[i * n + c] * Complex::new(w, 0.0);
        }
    }
    s
}

/// Mass fraction of |f|^2 in the outer 20% of the domain.
fn tail_mass(grid: &Grid1d, n: usize, f: &DVector<Complex<f64>>) -> f64 {
    let mut outer = 0.0;
    let mut total = 0.0;
    for i in 0..grid.len {
        let w = grid.weight(i);
        let mut a = 0.0;
        for c in 0..n {
            a += f[i * n + c].norm_sqr();
        }
        total += w * a;
        if grid.x(i).abs() > 0.8 * grid.half_width {
            outer += w * a;
        }
    }
    if total > 0.0 {
        outer / total
    } else {
        1.0
    }
}

fn inverse_iteration(
    m: &DMatrix<f64>,
    lambda: Complex<f64>,
    transpose: bool,
) -> Result<DVector<Complex<f64>>> {
    let dim = m.nrows();
    let mut mc = DMatrix::<Complex<f64>>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let v = if transpose { m[(j, i)] } else { m[(i, j)] };
            mc[(i, j)] = Complex::new(v, 0.0);
        }
    }
    let shift = if transpose { lambda.conj() } else { lambda };
    // Tiny complex offset keeps the factorization regular at an exact
    // eigenvalue.
    for i in 0..dim {
        mc[(i, i)] -= shift + Complex::new(1e-13, -1e-13);
    }
    let lu = mc.lu();
    let mut x = DVector::from_fn(dim, |i, _| {
        Complex::new((0.37 * i as f64 + 0.1).sin(), (0.11 * i as f64).cos() * 0.3)
    });
    x /= Complex::new(x.norm(), 0.0);
    for _ in 0..8 {
        let y = lu
            .solve(&x)
            .ok_or_else(|| ShockError::Eigensolver("inverse iteration solve failed".into()))?;
        let nrm = y.norm();
        if !nrm.is_finite() || nrm == 0.0 {
            return Err(ShockError::Eigensolver("inverse iteration diverged".into()));
        }
        x = y / Complex::new(nrm, 0.0);
    }
    Ok(x)
}

/// Compute the unstable spectrum (Re > `re_cutoff`) from a dense eigensolve,
/// filter boundary artifacts by exponential localization, and build
/// biorthonormal left/right pairs.
pub fn unstable_spectrum(lop: &LinearOperator, re_cutoff: f64) -> Result<SpectralData> {
    let dense = lop.dense();
    let all: Vec<Complex<f64>> = dense.clone().complex_eigenvalues().iter().cloned().collect();
    let mut candidates: Vec<Complex<f64>> =
        all.iter().cloned().filter(|z| z.re > re_cutoff).collect();
    candidates.sort_by(|a, b| {
        (b.re, b.im)
            .partial_cmp(&(a.re, a.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let grid = lop.grid;
    let n = lop.n;
    let mut eigenvalues = Vec::new();
    let mut right = Vec::new();
    let mut left = Vec::new();
    let mut antiderivs = Vec::new();
    let mut excluded = Vec::new();

    for lam in candidates {
        let phi = inverse_iteration(&dense, lam, false)?;
        let tm = tail_mass(&grid, n, &phi);
        if tm > 0.01 {
            excluded.push((lam, tm));
            continue;
        }
        let res = (&dense.map(Complex::from) * &phi - &phi * lam).norm();
        if res > 1e-6 * dense.amax().max(1.0) {
            return Err(ShockError::Eigensolver(format!(
                "eigenpair residual {res:.3e} too large at lambda = {lam}"
            )));
        }
        let ell = inverse_iteration(&dense, lam, true)?;
        // Adjoint in the weighted inner product: phi~ = W^{-1} ell.
        let mut phit = ell.clone();
        for i in 0..grid.len {
            let w = grid.weight(i);
            for c in 0..n {
                phit[i * n + c] /= Complex::new(w, 0.0);
            }
        }
        let pairing = complex_inner(&grid, n, &phit, &phi);
        if pairing.norm() < 1e-10 {
            return Err(ShockError::Eigensolver(
                "defective (non-semisimple) unstable block; only semisimple spectra are supported"
                    .into(),
            ));
        }
        let phit = phit.map(|z| z / pairing.conj());
        let re = grid::cumtrapz(&grid, n, &phi.map(|z| z.re));
        let im = grid::cumtrapz(&grid, n, &phi.map(|z| z.im));
        let cap = DVector::from_fn(phi.len(), |k, _| Complex::new(re[k], im[k]));
        eigenvalues.push(lam);
        right.push(phi);
        left.push(phit);
        antiderivs.push(cap);
    }

    for i in 0..eigenvalues.len() {
        for j in 0..eigenvalues.len() {
            let want = if i == j { 1.0 } else { 0.0 };
            let got = complex_inner(&grid, n, &left[i], &right[j]);
            if (got - Complex::new(want, 0.0)).norm() > 1e-6 {
                return Err(ShockError::Eigensolver(format!(
                    "biorthogonality defect {:.3e} between modes {i}, {j}",
                    (got - Complex::new(want, 0.0)).norm()
                )));
            }
        }
    }

    Ok(SpectralData {
        grid,
        n,
        p: eigenvalues.len(),
        eigenvalues,
        right,
        left,
        antiderivs,
        all_eigenvalues: all,
        excluded,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum ProjectionKind {
    Unstable,
    CenterStable,
    UnstableTilde,
    CenterStableTilde,
}

impl SpectralData {
    /// Unstable coordinates <phi~_j, f>.
    pub fn unstable_coords(&self, f: &DVector<f64>) -> Vec<Complex<f64>> {
        let fc = f.map(Complex::from);
        self.left
            .iter()
            .map(|l| complex_inner(&self.grid, self.n, l, &fc))
            .collect()
    }

    /// Real grid function sum_j c_j phi_j from unstable coordinates.
    pub fn from_unstable_coords(&self, coords: &[Complex<f64>]) -> DVector<f64> {
        let mut acc = DVector::<Complex<f64>>::zeros(self.grid.len * self.n);
        for (c, phi) in coords.iter().zip(&self.right) {
            acc += phi * *c;
        }
        acc.map(|z| z.re)
    }

    /// Apply one of the four projections to a real grid function.
    pub fn project(&self, which: ProjectionKind, f: &DVector<f64>) -> Result<DVector<f64>> {
        if f.len() != self.grid.len * self.n {
            return Err(ShockError::Dimension(format!(
                "projection input length {} != {}",
                f.len(),
                self.grid.len * self.n
            )));
        }
        let fc = f.map(Complex::from);
        let mut acc = DVector::<Complex<f64>>::zeros(f.len());
        match which {
            ProjectionKind::Unstable | ProjectionKind::CenterStable => {
                for (l, phi) in self.left.iter().zip(&self.right) {
                    let c = complex_inner(&self.grid, self.n, l, &fc);
                    acc += phi * c;
                }
            }
            ProjectionKind::UnstableTilde | ProjectionKind::CenterStableTilde => {
                for (l, cap) in self.left.iter().zip(&self.antiderivs) {
                    let dre = grid::d1(&self.grid, self.n, &l.map(|z| z.re));
                    let dim_ = grid::d1(&self.grid, self.n, &l.map(|z| z.im));
                    let dl = DVector::from_fn(l.len(), |k, _| Complex::new(dre[k], dim_[k]));
                    let c = complex_inner(&self.grid, self.n, &dl, &fc);
                    acc += cap * c;
                }
            }
        }
        let proj = acc.map(|z| z.re);
        Ok(match which {
            ProjectionKind::Unstable | ProjectionKind::UnstableTilde => proj,
            ProjectionKind::CenterStable | ProjectionKind::CenterStableTilde => f - proj,
        })
    }

    /// Slowest unstable rate: beta = min_j Re lambda_j, if p > 0.
    pub fn beta(&self) -> Option<f64> {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map(|a| a.min(v)).unwrap_or(v))
            })
    }
}

// ---------------------------------------------------------------------------
// Spectral genericity conditions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct DReport {
    pub d1_flagged: Vec<[f64; 2]>,
    pub d1_inconclusive: Vec<[f64; 2]>,
    pub d1_passed: bool,
    pub d2_dims: (usize, usize),
    pub d2_expected: usize,
    pub d2_passed: bool,
    pub d3_det: f64,
    pub d3_cond: f64,
    pub d3_passed: bool,
}

/// Check (D1) no nonzero localized imaginary eigenvalues, (D2)
/// transversality of the profile connection, (D3) the inviscid stability
/// determinant.
pub fn check_spectral_conditions(
    lop: &LinearOperator,
    spec: &SpectralData,
    profile: &ShockProfile,
) -> Result<DReport> {
    // (D1): scan a strip around the imaginary axis, excluding the
    // translational zero; modes count only when exponentially localized.
    let strip = 1e-6f64.max(1e-3 * lop.max_char_speed / lop.grid.half_width);
    let zero_tol = 10.0 * strip;
    let dense = lop.dense();
    let mut flagged = Vec::new();
    let mut inconclusive = Vec::new();
    for lam in &spec.all_eigenvalues {
        if lam.re.abs() > strip || lam.norm() < zero_tol || lam.im.abs() < zero_tol {
            continue;
        }
        let phi = inverse_iteration(&dense, *lam, false)?;
        let tm = tail_mass(&lop.grid, lop.n, &phi);
        if tm < 0.01 {
            flagged.push([lam.re, lam.im]);
        } else if tm < 0.05 {
            inconclusive.push([lam.re, lam.im]);
        }
    }

    // (D2): dimensions of the reduced unstable/stable manifolds vs r + 1.
    let d2_dims = crate::profile::transversality_dims(profile)?;
    let d2_expected = profile.r() + 1;
    let d2_passed = d2_dims.0 + d2_dims.1 == d2_expected;

    // (D3): Liu-Majda determinant with condition number.
    let lm = profile.endstates.liu_majda()?;
    let d3_passed = lm.det.abs() > 1e-3 && lm.cond < 1e6;

    Ok(DReport {
        d1_passed: flagged.is_empty(),
        d1_flagged: flagged,
        d1_inconclusive: inconclusive,
        d2_dims,
        d2_expected,
        d2_passed,
        d3_det: lm.det,
        d3_cond: lm.cond,
        d3_passed,
    })
}

// ---------------------------------------------------------------------------
// Semigroup decay probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    pub t_end: f64,
    pub cfl: f64,
    pub snapshots: usize,
    /// Fits use t >= fit_t_min.
    pub fit_t_min: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            t_end: 30.0,
            cfl: 0.4,
            snapshots: 161,
            fit_t_min: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayProbeReport {
    pub times: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub linf: Vec<f64>,
    /// Largest time before boundary contamination.
    pub usable_t_max: f64,
    pub fit_l1: Option<LineFit>,
    pub fit_l2: Option<LineFit>,
    pub fit_linf: Option<LineFit>,
}

/// Evolve w_t = L w from a localized datum and fit L^p decay exponents
/// against (1+t). The translational component carried by U_x is removed
/// from the datum and from every snapshot by least squares; it holds the
/// non-decaying asymptotic phase shift and would otherwise saturate every
/// norm. With p > 0 the datum is first projected onto the center-stable
/// subspace.
pub fn semigroup_decay_probe(
    lop: &LinearOperator,
    spec: Option<&SpectralData>,
    f: &DVector<f64>,
    opts: &ProbeOptions,
) -> Result<DecayProbeReport> {
    let g = lop.grid;
    let n = lop.n;
    let phi0 = lop.profile.deriv_flat();
    let phi0_nrm2 = grid::inner(&g, n, &phi0, &phi0);
    let strip = |w: &DVector<f64>| -> DVector<f64> {
        if phi0_nrm2 > 1e-14 {
            let c = grid::inner(&g, n, &phi0, w) / phi0_nrm2;
            w - &phi0 * c
        } else {
            w.clone()
        }
    };

    let mut w0 = f.clone();
    if let Some(sd) = spec {
        if sd.p > 0 {
            w0 = sd.project(ProjectionKind::CenterStable, &w0)?;
        }
    }
    w0 = strip(&w0);

    let ctrl = crate::dynamics::StepControl {
        cfl: opts.cfl,
        snapshots: opts.snapshots,
        ..Default::default()
    };
    let traj = crate::dynamics::evolve_linear(lop, &w0, None, opts.t_end, &ctrl)?;

    let mut usable_t_max = opts.t_end;
    let mut times = Vec::new();
    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    let mut linf = Vec::new();
    for (t, state) in traj.times.iter().zip(&traj.states) {
        let w = strip(state);
        let mut outer: f64 = 0.0;
        let mut global: f64 = 0.0;
        for i in 0..g.len {
            let mut a = 0.0;
            for c in 0..n {
                a += w[i * n + c] * w[i * n + c];
            }
            let a = a.sqrt();
            global = global.max(a);
            if g.x(i).abs() > 0.9 * g.half_width {
                outer = outer.max(a);
            }
        }
        if global > 0.0 && outer > 0.2 * global {
            usable_t_max = usable_t_max.min(*t);
            break;
        }
        let norms = grid::norms(&g, n, lop.r, &w);
        times.push(*t);
        l1.push(norms.l1);
        l2.push(norms.l2);
        linf.push(norms.linf);
    }

    let fit_l1 = fit::decay_exponent(&times, &l1, opts.fit_t_min, usable_t_max);
    let fit_l2 = fit::decay_exponent(&times, &l2, opts.fit_t_min, usable_t_max);
    let fit_linf = fit::decay_exponent(&times, &linf, opts.fit_t_min, usable_t_max);
    Ok(DecayProbeReport {
        times,
        l1,
        l2,
        linf,
        usable_t_max,
        fit_l1,
        fit_l2,
        fit_linf,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::builtin_system;
    use crate::profile::{rankine_hugoniot_branches, solve_profile, ProfileOptions, RhTarget};
    use approx::assert_relative_eq;
    use serde_json::json;

    pub(crate) fn stable_shock_profile(l: f64, npts: usize) -> Arc<ShockProfile> {
        let m = builtin_system("isentropic_ns", &json!({"gamma": 2.0, "nu": 1.0})).unwrap();
        let u_minus = DVector::from_vec(vec![1.0, 0.0]);
        let branches = rankine_hugoniot_branches(
            &m,
            &u_minus,
            &RhTarget::Component { index: 0, value: 0.5 },
        )
        .unwrap();
        let b = branches.iter().find(|b| b.speed < 0.0).unwrap();
        let opts = ProfileOptions {
            half_width: Some(l),
            n_points: npts,
            ..Default::default()
        };
        Arc::new(solve_profile(&m, &u_minus, &b.u_plus, b.speed, &opts).unwrap())
    }

    pub(crate) fn synthetic_unstable(npts: usize, gamma: f64) -> (Arc<ShockProfile>, LinearOperator) {
        let p = stable_shock_profile(20.0, npts);
        let lop = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
        let bump = RankOneBump::new(&lop.grid, lop.n, 1, gamma, 1.5, 0.0);
        (p, lop.with_rank_one(bump))
    }

    #[test]
    fn zero_in_zero_out() {
        let p = stable_shock_profile(20.0, 257);
        let lop = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
        let z = DVector::zeros(lop.dim());
        assert_eq!(lop.apply(&z).amax(), 0.0);
    }

    #[test]
    fn constant_coefficient_symbol() {
        // Interior action on a discrete Fourier mode matches the continuous
        // symbol -i xi A - xi^2 B to O(h^2).
        let m = builtin_system("isentropic_ns", &json!({"gamma": 2.0, "nu": 1.0}))
            .unwrap()
            .shifted(2.0);
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let p = Arc::new(ShockProfile::constant(&m, &u, 10.0, 513).unwrap());
        let lop = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
        let g = lop.grid;
        let h = g.h();
        let a = m.flux_jacobian(&u);
        let b = m.viscosity(&u);
        for &xi in &[0.5f64, 1.0, 2.0] {
            let dir = DVector::from_vec(vec![1.0, 0.5]);
            let mut fr = DVector::zeros(lop.dim());
            let mut fi = DVector::zeros(lop.dim());
            for i in 0..g.len {
                for c in 0..2 {
                    fr[i * 2 + c] = dir[c] * (xi * g.x(i)).cos();
                    fi[i * 2 + c] = dir[c] * (xi * g.x(i)).sin();
                }
            }
            let lr = lop.apply(&fr);
            let li = lop.apply(&fi);
            let adir = &a * &dir;
            let bdir = &b * &dir;
            let mid = g.len / 2;
            for c in 0..2 {
                let got = Complex::new(lr[mid * 2 + c], li[mid * 2 + c]);
                let phase = Complex::new(0.0, xi * g.x(mid)).exp();
                let want = (Complex::new(0.0, -xi) * adir[c]
                    + Complex::new(-xi * xi * bdir[c], 0.0))
                    * phase;
                let tol = 3.0 * xi.powi(3) * h * h * (1.0 + adir.norm() + xi * bdir.norm());
                assert!(
                    (got - want).norm() < tol,
                    "xi = {xi}, comp {c}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn zero_mode_second_order() {
        // ||L U_x|| / ||U_x|| = O(h^2): each refinement shrinks it ~4x.
        let mut prev: Option<f64> = None;
        for npts in [513usize, 1025, 2049] {
            let p = stable_shock_profile(20.0, npts);
            let lop = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
            let phi = p.deriv_flat();
            let ratio = grid::l2_norm(&lop.grid, 2, &lop.apply(&phi))
                / grid::l2_norm(&lop.grid, 2, &phi);
            if let Some(prev) = prev {
                let order = (prev / ratio).log2();
                assert!(order > 1.8, "observed order {order}");
            }
            prev = Some(ratio);
        }
    }

    #[test]
    fn stable_shock_has_empty_unstable_spectrum() {
        for npts in [193usize, 321] {
            let p = stable_shock_profile(20.0, npts);
            let lop = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
            let spec = unstable_spectrum(&lop, 1e-6).unwrap();
            assert_eq!(spec.p, 0, "N = {npts}: {:?}", spec.eigenvalues);
            let f = DVector::from_fn(lop.dim(), |k, _| ((k % 17) as f64).sin());
            let pu = spec.project(ProjectionKind::Unstable, &f).unwrap();
            assert_eq!(pu.amax(), 0.0);
            let pcs = spec.project(ProjectionKind::CenterStable, &f).unwrap();
            assert_relative_eq!(pcs, f, epsilon = 1e-14);
        }
    }

    #[test]
    fn synthetic_rank_one_gives_single_real_unstable_mode() {
        let (_p, lop) = synthetic_unstable(257, 2.0);
        let spec = unstable_spectrum(&lop, 1e-6).unwrap();
        assert_eq!(spec.p, 1, "eigenvalues {:?}", spec.eigenvalues);
        let lam = spec.eigenvalues[0];
        assert!(lam.re > 0.1 && lam.im.abs() < 1e-9, "lambda = {lam}");
        // Oracle: eigenpair residual under the full operator action.
        let phi = spec.right[0].map(|z| z.re);
        let res = lop.apply(&phi) - &phi * lam.re;
        assert!(res.norm() / phi.norm() < 1e-7);
        // Divergence form: unstable eigenfunctions carry zero mass.
        let one = DVector::from_element(lop.dim(), 1.0);
        let mass = grid::inner(&lop.grid, 2, &one, &phi).abs();
        assert!(mass < 1e-8, "mass {mass}");
    }

    #[test]
    fn projection_algebra() {
        let (_p, lop) = synthetic_unstable(257, 2.0);
        let spec = unstable_spectrum(&lop, 1e-6).unwrap();
        let g = lop.grid;
        let phi = spec.right[0].map(|z| z.re);
        let proj = spec.project(ProjectionKind::Unstable, &phi).unwrap();
        assert!((proj - &phi).norm() / phi.norm() < 1e-9);
        let f = DVector::from_fn(lop.dim(), |k, _| {
            let i = k / 2;
            (-(g.x(i) * g.x(i)) / 4.0).exp() * ((k % 2) as f64 + 0.3)
        });
        let p1 = spec.project(ProjectionKind::Unstable, &f).unwrap();
        let p2 = spec.project(ProjectionKind::Unstable, &p1).unwrap();
        assert!((p2 - &p1).norm() <= 1e-10 * (1.0 + p1.norm()));
        let pcs = spec.project(ProjectionKind::CenterStable, &f).unwrap();
        let pu_pcs = spec.project(ProjectionKind::Unstable, &pcs).unwrap();
        assert!(pu_pcs.norm() <= 1e-10 * (1.0 + f.norm()));
        assert!((&p1 + &pcs - &f).norm() <= 1e-12 * (1.0 + f.norm()));
        let fperp = &f - &p1;
        let pu_fperp = spec.project(ProjectionKind::Unstable, &fperp).unwrap();
        assert!(pu_fperp.norm() <= 1e-10 * (1.0 + f.norm()));
    }

    #[test]
    fn commutation_defect_second_order() {
        // ||Pi_u d_x f - d_x Pi~_u f|| = O(h^2) on smooth compact functions.
        let mut prev: Option<f64> = None;
        for npts in [257usize, 513] {
            let (_p, lop) = synthetic_unstable(npts, 2.0);
            let spec = unstable_spectrum(&lop, 1e-6).unwrap();
            let g = lop.grid;
            let mut worst: f64 = 0.0;
            for k in 0..5 {
                let f = DVector::from_fn(lop.dim(), |idx, _| {
                    let i = idx / 2;
                    let x = g.x(i);
                    (-(x * x) / 9.0).exp()
                        * ((0.5 + 0.3 * k as f64) * x).sin()
                        * ((idx % 2) as f64 * 0.7 + 0.3)
                });
                let df = grid::d1(&g, 2, &f);
                let lhs = spec.project(ProjectionKind::Unstable, &df).unwrap();
                let ptf = spec.project(ProjectionKind::UnstableTilde, &f).unwrap();
                let rhs = grid::d1(&g, 2, &ptf);
                worst = worst.max(grid::l2_norm(&g, 2, &(lhs - rhs)));
            }
            if let Some(prev) = prev {
                let order = (prev / worst).log2();
                assert!(order > 1.5, "commutation defect order {order}");
            }
            prev = Some(worst);
        }
    }

    #[test]
    fn spectral_conditions_on_stable_shock() {
        let p = stable_shock_profile(20.0, 257);
        let lop = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
        let spec = unstable_spectrum(&lop, 1e-6).unwrap();
        let report = check_spectral_conditions(&lop, &spec, &p).unwrap();
        assert!(report.d1_passed, "{report:?}");
        assert!(report.d2_passed, "{report:?}");
        assert!(report.d3_passed, "{report:?}");
    }

    #[test]
    fn eigenvalues_stable_under_refinement() {
        let (_p1, lop1) = synthetic_unstable(257, 2.0);
        let (_p2, lop2) = synthetic_unstable(513, 2.0);
        let s1 = unstable_spectrum(&lop1, 1e-6).unwrap();
        let s2 = unstable_spectrum(&lop2, 1e-6).unwrap();
        assert_eq!(s1.p, 1);
        assert_eq!(s2.p, 1);
        let rel = (s1.eigenvalues[0] - s2.eigenvalues[0]).norm() / s2.eigenvalues[0].norm();
        assert!(rel < 1e-3, "relative eigenvalue drift {rel}");
    }

    #[test]
    fn order4_assembles_and_acts() {
        let p = stable_shock_profile(20.0, 257);
        let lop4 = assemble(&p, 4, BoundaryClosure::DirichletEndstate).unwrap();
        let lop2 = assemble(&p, 2, BoundaryClosure::DirichletEndstate).unwrap();
        let phi = p.deriv_flat();
        let n4 = grid::l2_norm(&lop4.grid, 2, &lop4.apply(&phi));
        let n2 = grid::l2_norm(&lop2.grid, 2, &lop2.apply(&phi));
        assert!(n4 <= n2, "order-4 {n4} vs order-2 {n2} on the zero mode");
        assert!(lop4.diff_tridiag_blocks().is_err());
    }

    #[test]
    fn outflow_closure_assembles() {
        let p = stable_shock_profile(20.0, 257);
        let lop = assemble(&p, 2, BoundaryClosure::OutflowExtrapolation).unwrap();
        let f = DVector::from_element(lop.dim(), 1.0);
        assert!(lop.apply(&f).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unresolved_profile_rejected() {
        let p = stable_shock_profile(20.0, 513);
        let mut q = (*p).clone();
        let keep = 120;
        q.states = q.states.columns(180, keep).into();
        q.derivs = q.derivs.columns(180, keep).into();
        q.grid = Grid1d::new(20.0 * keep as f64 / 513.0, keep);
        let res = assemble(&Arc::new(q), 2, BoundaryClosure::DirichletEndstate);
        assert!(matches!(res, Err(ShockError::Unresolved(_))));
    }

    #[test]
    fn projection_dimension_mismatch_rejected() {
        let (_p, lop) = synthetic_unstable(257, 2.0);
        let spec = unstable_spectrum(&lop, 1e-6).unwrap();
        let bad = DVector::zeros(10);
        assert!(matches!(
            spec.project(ProjectionKind::Unstable, &bad),
            Err(ShockError::Dimension(_))
        ));
    }
}
