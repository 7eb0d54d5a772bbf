//! Uniform 1-D grid, trapezoidal quadrature, difference operators and
//! the discrete norms used throughout (L^p, H^s, and the mixed H^{1,2}).
//!
//! Grid functions with `n` components are stored node-major in a flat
//! `DVector`: entry `i * n + c` holds component `c` at node `i`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Uniform grid on `[-half_width, half_width]` including both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1d {
    pub half_width: f64,
    pub len: usize,
}

impl Grid1d {
    pub fn new(half_width: f64, len: usize) -> Self {
        assert!(len >= 4, "grid needs at least 4 points");
        assert!(half_width > 0.0);
        Grid1d { half_width, len }
    }

    #[inline]
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / (self.len as f64 - 1.0)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        -self.half_width + self.h() * i as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.x(i)).collect()
    }

    /// Trapezoidal quadrature weight of node `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.len {
            0.5 * self.h()
        } else {
            self.h()
        }
    }

    /// Index of the node nearest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let i = ((x + self.half_width) / self.h()).round() as isize;
        i.clamp(0, self.len as isize - 1) as usize
    }
}

/// Flat-vector length for `n` components on `grid`.
#[inline]
pub fn flat_len(grid: &Grid1d, n: usize) -> usize {
    grid.len * n
}

/// Extract component `c` of an `n`-component grid function.
pub fn component(v: &DVector<f64>, n: usize, c: usize) -> DVector<f64> {
    let m = v.len() / n;
    DVector::from_fn(m, |i, _| v[i * n + c])
}

/// Overwrite component `c` of `v` with `vals`.
pub fn set_component(v: &mut DVector<f64>, n: usize, c: usize, vals: &DVector<f64>) {
    let m = v.len() / n;
    assert_eq!(vals.len(), m);
    for i in 0..m {
        v[i * n + c] = vals[i];
    }
}

/// Discrete L² inner product with trapezoidal weights, summed over components.
pub fn inner(grid: &Grid1d, n: usize, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
    assert_eq!(f.len(), g.len());
    assert_eq!(f.len(), grid.len * n);
    let mut s = 0.0;
    for i in 0..grid.len {
        let w = grid.weight(i);
        for c in 0..n {
            s += w * f[i * n + c] * g[i * n + c];
        }
    }
    s
}

/// First derivative, 2nd order: central in the interior, one-sided 2nd order
/// at the ends. Acts componentwise.
pub fn d1(grid: &Grid1d, n: usize, f: &DVector<f64>) -> DVector<f64> {
    let m = grid.len;
    let h = grid.h();
    let mut out = DVector::zeros(f.len());
    for c in 0..n {
        let at = |i: usize| f[i * n + c];
        out[c] = (-1.5 * at(0) + 2.0 * at(1) - 0.5 * at(2)) / h;
        for i in 1..m - 1 {
            out[i * n + c] = (at(i + 1) - at(i - 1)) / (2.0 * h);
        }
        out[(m - 1) * n + c] = (1.5 * at(m - 1) - 2.0 * at(m - 2) + 0.5 * at(m - 3)) / h;
    }
    out
}

/// Second derivative, 2nd order central; copies the adjacent interior value
/// at the two boundary nodes.
pub fn d2(grid: &Grid1d, n: usize, f: &DVector<f64>) -> DVector<f64> {
    let m = grid.len;
    let h2 = grid.h() * grid.h();
    let mut out = DVector::zeros(f.len());
    for c in 0..n {
        let at = |i: usize| f[i * n + c];
        for i in 1..m - 1 {
            out[i * n + c] = (at(i + 1) - 2.0 * at(i) + at(i - 1)) / h2;
        }
        out[c] = out[n + c];
        out[(m - 1) * n + c] = out[(m - 2) * n + c];
    }
    out
}

/// Cumulative trapezoidal integral from the left endpoint, componentwise.
pub fn cumtrapz(grid: &Grid1d, n: usize, f: &DVector<f64>) -> DVector<f64> {
    let m = grid.len;
    let h = grid.h();
    let mut out = DVector::zeros(f.len());
    for c in 0..n {
        let mut acc = 0.0;
        out[c] = 0.0;
        for i in 1..m {
            acc += 0.5 * h * (f[(i - 1) * n + c] + f[i * n + c]);
            out[i * n + c] = acc;
        }
    }
    out
}

/// The norm family reported along trajectories and used by energy estimates.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct DiscreteNorms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    /// Mixed norm: sqrt(|U₁|²_{H¹} + |U₂|²_{H²}) for the (n-r, r) block split.
    pub h12: f64,
}

/// Compute all norms of an `n`-component grid function with parabolic block
/// size `r` (the last `r` components form U₂).
pub fn norms(grid: &Grid1d, n: usize, r: usize, f: &DVector<f64>) -> DiscreteNorms {
    let m = grid.len;
    let df = d1(grid, n, f);
    let d2f = d2(grid, n, f);
    let d3f = d1(grid, n, &d2f);

    let mut l1 = 0.0;
    let mut l2s = 0.0;
    let mut linf: f64 = 0.0;
    let mut d1s = 0.0;
    let mut d2s = 0.0;
    let mut d3s = 0.0;
    let mut h12s = 0.0;
    for i in 0..m {
        let w = grid.weight(i);
        let mut node_abs = 0.0;
        for c in 0..n {
            let v = f[i * n + c];
            let dv = df[i * n + c];
            let d2v = d2f[i * n + c];
            let d3v = d3f[i * n + c];
            node_abs += v * v;
            l2s += w * v * v;
            d1s += w * dv * dv;
            d2s += w * d2v * d2v;
            d3s += w * d3v * d3v;
            h12s += w * (v * v + dv * dv);
            if c >= n - r {
                h12s += w * d2v * d2v;
            }
        }
        let node_abs = node_abs.sqrt();
        l1 += w * node_abs;
        linf = linf.max(node_abs);
    }
    DiscreteNorms {
        l1,
        l2: l2s.sqrt(),
        linf,
        h1: (l2s + d1s).sqrt(),
        h2: (l2s + d1s + d2s).sqrt(),
        h3: (l2s + d1s + d2s + d3s).sqrt(),
        h12: h12s.sqrt(),
    }
}

/// L² norm only (cheaper than [`norms`]).
pub fn l2_norm(grid: &Grid1d, n: usize, f: &DVector<f64>) -> f64 {
    inner(grid, n, f, f).sqrt()
}

/// Sup of the pointwise Euclidean component norm.
pub fn linf_norm(n: usize, f: &DVector<f64>) -> f64 {
    let m = f.len() / n;
    let mut best: f64 = 0.0;
    for i in 0..m {
        let mut s = 0.0;
        for c in 0..n {
            s += f[i * n + c] * f[i * n + c];
        }
        best = best.max(s.sqrt());
    }
    best
}

/// H^{1,2} mixed norm only.
pub fn h12_norm(grid: &Grid1d, n: usize, r: usize, f: &DVector<f64>) -> f64 {
    let df = d1(grid, n, f);
    let d2f = d2(grid, n, f);
    let mut s = 0.0;
    for i in 0..grid.len {
        let w = grid.weight(i);
        for c in 0..n {
            s += w * (f[i * n + c] * f[i * n + c] + df[i * n + c] * df[i * n + c]);
            if c >= n - r {
                s += w * d2f[i * n + c] * d2f[i * n + c];
            }
        }
    }
    s.sqrt()
}
