//! Least-squares fits: straight lines with slope confidence intervals,
//! log-log decay exponents, and exponential tail rates.

use serde::{Deserialize, Serialize};

/// Result of a straight-line fit y = intercept + slope * x.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// ~95% half-width of the slope confidence interval (2 standard errors).
    pub slope_ci: f64,
    pub r2: f64,
}

/// Ordinary least squares on the given samples. Requires at least 3 points.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let m = xs.len();
    if m < 3 || m != ys.len() {
        return None;
    }
    let mf = m as f64;
    let xbar = xs.iter().sum::<f64>() / mf;
    let ybar = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let se = if m > 2 {
        (ss_res / (mf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(LineFit {
        slope,
        intercept,
        slope_ci: 2.0 * se,
        r2,
    })
}

/// Fit `norm ~ C (1+t)^q` on the window `t in [t_min, t_max]`; returns the
/// exponent fit in log-log coordinates. Non-positive norms are skipped.
pub fn decay_exponent(ts: &[f64], norms: &[f64], t_min: f64, t_max: f64) -> Option<LineFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in ts.iter().zip(norms) {
        if t >= t_min && t <= t_max && v > 0.0 {
            xs.push((1.0 + t).ln());
            ys.push(v.ln());
        }
    }
    line_fit(&xs, &ys)
}

/// Fit `|f| ~ C e^{-eta x}` on samples (x, |f|), skipping non-positive values
/// and values below `floor` (roundoff tail). Returns (eta, C, fit).
pub fn exp_rate(xs: &[f64], vals: &[f64], floor: f64) -> Option<(f64, f64, LineFit)> {
    let mut us = Vec::new();
    let mut vs = Vec::new();
    for (&x, &v) in xs.iter().zip(vals) {
        if v > floor {
            us.push(x);
            vs.push(v.ln());
        }
    }
    let fit = line_fit(&us, &vs)?;
    Some((-fit.slope, fit.intercept.exp(), fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let f = line_fit(&xs, &ys).unwrap();
        assert_relative_eq!(f.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 3.0, epsilon = 1e-12);
        assert!(f.r2 > 1.0 - 1e-12);
        assert!(f.slope_ci < 1e-10);
    }

    #[test]
    fn powerlaw_exponent_recovered() {
        let ts: Vec<f64> = (1..200).map(|i| 0.5 * i as f64).collect();
        let ns: Vec<f64> = ts.iter().map(|t| 2.0 * (1.0 + t).powf(-0.25)).collect();
        let f = decay_exponent(&ts, &ns, 5.0, 90.0).unwrap();
        assert_relative_eq!(f.slope, -0.25, epsilon = 1e-10);
    }

    #[test]
    fn exponential_rate_recovered() {
        let xs: Vec<f64> = (0..100).map(|i| 0.1 * i as f64).collect();
        let vs: Vec<f64> = xs.iter().map(|x| 0.7 * (-1.3 * x).exp()).collect();
        let (eta, c, fit) = exp_rate(&xs, &vs, 1e-14).unwrap();
        assert_relative_eq!(eta, 1.3, epsilon = 1e-10);
        assert_relative_eq!(c, 0.7, epsilon = 1e-10);
        assert!(fit.r2 > 0.999);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(line_fit(&[1.0, 2.0], &[0.0, 0.0]).is_none());
        assert!(line_fit(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).is_none());
        // All samples non-positive: nothing to fit in log coordinates.
        assert!(decay_exponent(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 0.0, 10.0).is_none());
    }
}
