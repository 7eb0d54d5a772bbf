//! Cubic interpolation of grid functions, used to sample shifted states
//! U(x + alpha) at sub-cell phase offsets.

use crate::grid::Grid1d;
use nalgebra::DVector;

/// Evaluate component-wise cubic (Catmull-Rom style 4-point Lagrange)
/// interpolation of an `n`-component grid function at `x`. Outside the grid
/// the nearest endpoint value is returned.
pub fn sample(grid: &Grid1d, n: usize, f: &DVector<f64>, x: f64, out: &mut [f64]) {
    let m = grid.len;
    let h = grid.h();
    let s = (x + grid.half_width) / h;
    if s <= 0.0 {
        for c in 0..n {
            out[c] = f[c];
        }
        return;
    }
    if s >= (m - 1) as f64 {
        for c in 0..n {
            out[c] = f[(m - 1) * n + c];
        }
        return;
    }
    let i = (s.floor() as usize).clamp(1, m - 3);
    let t = s - i as f64;
    // Lagrange weights on the 4 nodes i-1 .. i+2 for local coordinate t.
    let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
    let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
    let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
    for c in 0..n {
        out[c] = w0 * f[(i - 1) * n + c]
            + w1 * f[i * n + c]
            + w2 * f[(i + 1) * n + c]
            + w3 * f[(i + 2) * n + c];
    }
}

/// Resample the whole grid function shifted by `alpha`: result node i holds
/// f(x_i + alpha).
pub fn shift(grid: &Grid1d, n: usize, f: &DVector<f64>, alpha: f64) -> DVector<f64> {
    let mut out = DVector::zeros(f.len());
    let mut buf = vec![0.0; n];
    for i in 0..grid.len {
        sample(grid, n, f, grid.x(i) + alpha, &mut buf);
        for c in 0..n {
            out[i * n + c] = buf[c];
        }
    }
    out
}
