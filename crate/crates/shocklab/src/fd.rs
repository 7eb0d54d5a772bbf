//! Finite-difference differentiation of vector- and matrix-valued maps.
//!
//! Used for Jacobians of fluxes without closed forms, for directional
//! derivatives of viscosity matrices, and for the structure checks that
//! probe linearity of the hyperbolic flux block.

use nalgebra::{DMatrix, DVector};

fn step_for(u: &DVector<f64>) -> f64 {
    // 4th-order central differences: h ~ eps^(1/5) scaled to the state size.
    let scale = 1.0 + u.amax();
    (f64::EPSILON).powf(0.2) * scale
}

/// 4th-order central-difference Jacobian of `f` at `u`.
pub fn jacobian<F>(f: F, u: &DVector<f64>, m_out: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = u.len();
    let h = step_for(u);
    let mut jac = DMatrix::zeros(m_out, n);
    let mut up = u.clone();
    for j in 0..n {
        let base = u[j];
        up[j] = base + h;
        let f1 = f(&up);
        up[j] = base - h;
        let f_1 = f(&up);
        up[j] = base + 2.0 * h;
        let f2 = f(&up);
        up[j] = base - 2.0 * h;
        let f_2 = f(&up);
        up[j] = base;
        for i in 0..m_out {
            jac[(i, j)] = (8.0 * (f1[i] - f_1[i]) - (f2[i] - f_2[i])) / (12.0 * h);
        }
    }
    jac
}

/// Directional derivative of a matrix-valued map: d/dt M(u + t v) at t = 0.
pub fn matrix_dir_deriv<F>(m: F, u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let vn = v.norm();
    if vn == 0.0 {
        let probe = m(u);
        return DMatrix::zeros(probe.nrows(), probe.ncols());
    }
    let h = step_for(u) / vn;
    let m1 = m(&(u + v * h));
    let m_1 = m(&(u - v * h));
    let m2 = m(&(u + v * (2.0 * h)));
    let m_2 = m(&(u - v * (2.0 * h)));
    ((m1 - m_1) * 8.0 - (m2 - m_2)) / (12.0 * h)
}

/// Hessian of the scalar component `comp` of `f`, by central differences of
/// the first differences. Used to test linearity of flux components.
pub fn component_hessian<F>(f: F, u: &DVector<f64>, comp: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = u.len();
    let h = (f64::EPSILON).powf(0.25) * (1.0 + u.amax());
    let mut hess = DMatrix::zeros(n, n);
    let fc = |w: &DVector<f64>| f(w)[comp];
    let mut w = u.clone();
    for i in 0..n {
        for j in i..n {
            let (ui, uj) = (u[i], u[j]);
            let val = if i == j {
                w[i] = ui + h;
                let fp = fc(&w);
                w[i] = ui - h;
                let fm = fc(&w);
                w[i] = ui;
                (fp - 2.0 * fc(&w) + fm) / (h * h)
            } else {
                w[i] = ui + h;
                w[j] = uj + h;
                let fpp = fc(&w);
                w[j] = uj - h;
                let fpm = fc(&w);
                w[i] = ui - h;
                let fmm = fc(&w);
                w[j] = uj + h;
                let fmp = fc(&w);
                w[i] = ui;
                w[j] = uj;
                (fpp - fpm - fmp + fmm) / (4.0 * h * h)
            };
            hess[(i, j)] = val;
            hess[(j, i)] = val;
        }
    }
    hess
}
