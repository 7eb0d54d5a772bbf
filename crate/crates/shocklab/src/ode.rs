//! Adaptive Dormand-Prince 5(4) integration with exact landing on output
//! nodes and scalar event detection. The profile solver needs both: tails
//! are integrated onto prescribed grid abscissae, and the matching section
//! is located as a zero crossing of one state component.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("exceeded {0} steps")]
    TooManySteps(usize),
    #[error("state diverged at t = {0}")]
    Diverged(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Reject states whose sup-norm exceeds this bound.
    pub max_state: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 1_000_000,
            max_state: 1e8,
        }
    }
}

struct Dp5<'a, F> {
    f: &'a F,
    opts: OdeOptions,
}

impl<'a, F> Dp5<'a, F>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    /// One embedded step attempt of signed size `h`; returns (y5, err_norm).
    fn attempt(&self, t: f64, y: &DVector<f64>, h: f64) -> (DVector<f64>, f64) {
        let f = self.f;
        let k1 = f(t, y);
        let k2 = f(t + h / 5.0, &(y + &k1 * (h / 5.0)));
        let k3 = f(
            t + 3.0 * h / 10.0,
            &(y + &k1 * (3.0 * h / 40.0) + &k2 * (9.0 * h / 40.0)),
        );
        let k4 = f(
            t + 4.0 * h / 5.0,
            &(y + &k1 * (44.0 * h / 45.0) - &k2 * (56.0 * h / 15.0) + &k3 * (32.0 * h / 9.0)),
        );
        let k5 = f(
            t + 8.0 * h / 9.0,
            &(y + &k1 * (19372.0 * h / 6561.0) - &k2 * (25360.0 * h / 2187.0)
                + &k3 * (64448.0 * h / 6561.0)
                - &k4 * (212.0 * h / 729.0)),
        );
        let k6 = f(
            t + h,
            &(y + &k1 * (9017.0 * h / 3168.0) - &k2 * (355.0 * h / 33.0)
                + &k3 * (46732.0 * h / 5247.0)
                + &k4 * (49.0 * h / 176.0)
                - &k5 * (5103.0 * h / 18656.0)),
        );
        let y5 = y
            + &k1 * (35.0 * h / 384.0)
            + &k3 * (500.0 * h / 1113.0)
            + &k4 * (125.0 * h / 192.0)
            - &k5 * (2187.0 * h / 6784.0)
            + &k6 * (11.0 * h / 84.0);
        let k7 = f(t + h, &y5);
        let y4 = y
            + &k1 * (5179.0 * h / 57600.0)
            + &k3 * (7571.0 * h / 16695.0)
            + &k4 * (393.0 * h / 640.0)
            - &k5 * (92097.0 * h / 339200.0)
            + &k6 * (187.0 * h / 2100.0)
            + &k7 * (h / 40.0);
        let mut err: f64 = 0.0;
        for i in 0..y.len() {
            let sc = self.opts.atol + self.opts.rtol * y[i].abs().max(y5[i].abs());
            err = err.max(((y5[i] - y4[i]) / sc).abs());
        }
        (y5, err)
    }

    /// Integrate from (t0, y0) to t1, calling `sink` after each accepted
    /// step. `h_init` seeds the step size (continuation across segments);
    /// returns the final state and the last step size.
    fn run<S>(
        &self,
        t0: f64,
        y0: &DVector<f64>,
        t1: f64,
        h_init: Option<f64>,
        mut sink: S,
    ) -> Result<(DVector<f64>, f64), OdeError>
    where
        S: FnMut(f64, f64, &DVector<f64>, &DVector<f64>) -> bool,
    {
        let dir = (t1 - t0).signum();
        let span = (t1 - t0).abs();
        if span < 1e-14 * (1.0 + t0.abs() + t1.abs()) {
            return Ok((y0.clone(), h_init.unwrap_or(span.max(1e-14)) * if dir == 0.0 { 1.0 } else { dir }));
        }
        let mut h = match h_init {
            Some(h0) if h0 != 0.0 => h0.abs() * dir,
            _ => dir * (span / 100.0).min(0.1),
        };
        let mut t = t0;
        let mut y = y0.clone();
        for _ in 0..self.opts.max_steps {
            if (t1 - t) * dir <= 0.0 {
                return Ok((y, h));
            }
            if h.abs() > (t1 - t).abs() {
                h = t1 - t;
            }
            let (y_new, err) = self.attempt(t, &y, h);
            if err <= 1.0 {
                let t_new = t + h;
                if y_new.amax() > self.opts.max_state || !y_new.iter().all(|v| v.is_finite()) {
                    return Err(OdeError::Diverged(t_new));
                }
                if !sink(t, t_new, &y, &y_new) {
                    return Ok((y_new, h));
                }
                t = t_new;
                y = y_new;
            }
            let fac = if err > 0.0 {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            h *= fac;
            if h.abs() < 1e-14 * (1.0 + t.abs()) {
                return Err(OdeError::StepUnderflow(t));
            }
        }
        Err(OdeError::TooManySteps(self.opts.max_steps))
    }
}

/// Integrate `y' = f(t, y)` from `t0` to `t1` (either direction).
pub fn integrate<F>(
    f: &F,
    t0: f64,
    y0: &DVector<f64>,
    t1: f64,
    opts: OdeOptions,
) -> Result<DVector<f64>, OdeError>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    Dp5 { f, opts }
        .run(t0, y0, t1, None, |_, _, _, _| true)
        .map(|(y, _)| y)
}

/// Integrate and return the solution at each node of `nodes`, which must be
/// monotone starting from `t0` (increasing or decreasing). Each node is hit
/// exactly; the adaptive step size carries over between nodes so accuracy
/// matches a single long integration.
pub fn integrate_nodes<F>(
    f: &F,
    t0: f64,
    y0: &DVector<f64>,
    nodes: &[f64],
    opts: OdeOptions,
) -> Result<Vec<DVector<f64>>, OdeError>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let solver = Dp5 { f, opts };
    let mut out = Vec::with_capacity(nodes.len());
    let mut t = t0;
    let mut y = y0.clone();
    let mut h: Option<f64> = None;
    for &target in nodes {
        let (ny, nh) = solver.run(t, &y, target, h, |_, _, _, _| true)?;
        y = ny;
        h = Some(nh);
        t = target;
        out.push(y.clone());
    }
    Ok(out)
}

/// Integrate until the scalar `g(y)` changes sign, then locate the crossing
/// by bisection on the final step. Returns `Ok(None)` if no crossing occurs
/// before `t_max`.
pub fn integrate_to_event<F, G>(
    f: &F,
    t0: f64,
    y0: &DVector<f64>,
    g: &G,
    t_max: f64,
    opts: OdeOptions,
) -> Result<Option<(f64, DVector<f64>)>, OdeError>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> f64,
{
    let mut bracket: Option<(f64, f64, DVector<f64>)> = None;
    let mut g_prev = g(y0);
    let solver = Dp5 { f, opts };
    let _ = solver.run(t0, y0, t_max, None, |ta, tb, ya, yb| {
        let gb = g(yb);
        if g_prev == 0.0 {
            bracket = Some((ta, ta, ya.clone()));
            return false;
        }
        if g_prev * gb <= 0.0 {
            bracket = Some((ta, tb, ya.clone()));
            return false;
        }
        g_prev = gb;
        true
    })?;
    let Some((ta, tb, ya)) = bracket else {
        return Ok(None);
    };
    if ta == tb {
        return Ok(Some((ta, ya)));
    }
    // Bisection, re-integrating the bracketing step from its start point.
    let mut lo = ta;
    let mut hi = tb;
    let ga = g(&ya);
    let mut glo = ga;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let ym = integrate(f, ta, &ya, mid, opts)?;
        let gm = g(&ym);
        if glo * gm <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            glo = gm;
        }
        if (hi - lo).abs() < 1e-13 * (1.0 + mid.abs()) {
            break;
        }
    }
    let t_star = 0.5 * (lo + hi);
    let y_star = integrate(f, ta, &ya, t_star, opts)?;
    Ok(Some((t_star, y_star)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_decay() {
        let f = |_t: f64, y: &DVector<f64>| -y * 2.0;
        let y0 = DVector::from_vec(vec![1.0]);
        let y = integrate(&f, 0.0, &y0, 3.0, OdeOptions::default()).unwrap();
        assert_relative_eq!(y[0], (-6.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn backward_integration() {
        let f = |_t: f64, y: &DVector<f64>| y.clone();
        let y0 = DVector::from_vec(vec![1.0]);
        let y = integrate(&f, 0.0, &y0, -2.0, OdeOptions::default()).unwrap();
        assert_relative_eq!(y[0], (-2.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn nodes_match_closed_form() {
        // Harmonic oscillator.
        let f = |_t: f64, y: &DVector<f64>| DVector::from_vec(vec![y[1], -y[0]]);
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let nodes: Vec<f64> = (1..=10).map(|k| 0.3 * k as f64).collect();
        let ys = integrate_nodes(&f, 0.0, &y0, &nodes, OdeOptions::default()).unwrap();
        for (t, y) in nodes.iter().zip(&ys) {
            assert_relative_eq!(y[0], t.cos(), epsilon = 1e-8);
            assert_relative_eq!(y[1], -t.sin(), epsilon = 1e-8);
        }
    }

    #[test]
    fn event_location() {
        // y = cos t crosses 0.5 at t = pi/3.
        let f = |_t: f64, y: &DVector<f64>| DVector::from_vec(vec![y[1], -y[0]]);
        let y0 = DVector::from_vec(vec![1.0, 0.0]);
        let g = |y: &DVector<f64>| y[0] - 0.5;
        let (t, y) = integrate_to_event(&f, 0.0, &y0, &g, 10.0, OdeOptions::default())
            .unwrap()
            .unwrap();
        assert_relative_eq!(t, std::f64::consts::FRAC_PI_3, epsilon = 1e-8);
        assert_relative_eq!(y[0], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn no_event_returns_none() {
        let f = |_t: f64, y: &DVector<f64>| -y * 1.0;
        let y0 = DVector::from_vec(vec![1.0]);
        let g = |y: &DVector<f64>| y[0] - 2.0;
        let res = integrate_to_event(&f, 0.0, &y0, &g, 5.0, OdeOptions::default()).unwrap();
        assert!(res.is_none());
    }

    #[test]
    fn divergence_detected() {
        let f = |_t: f64, y: &DVector<f64>| y * y[0].abs();
        let y0 = DVector::from_vec(vec![3.0]);
        let res = integrate(&f, 0.0, &y0, 10.0, OdeOptions::default());
        assert!(matches!(res, Err(OdeError::Diverged(_)) | Err(OdeError::StepUnderflow(_))));
    }
}
