//! Small numerical helpers shared across modules.

/// Bisection on a bracket where `f(lo)` and `f(hi)` have opposite signs.
///
/// Stops once the bracket is narrower than `x_tol`; returns the midpoint.
pub(crate) fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, x_tol: f64) -> f64 {
    let mut f_lo = f(lo);
    for _ in 0..200 {
        if (hi - lo).abs() <= x_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `1 - (1 - a)(1 - b)^n` without cancellation for small `a`, `b`.
pub(crate) fn click_given_photons(a: f64, b: f64, n: usize) -> f64 {
    let mut log_none = (-a).ln_1p();
    if n > 0 {
        log_none += n as f64 * (-b).ln_1p();
    }
    -log_none.exp_m1()
}

/// Full width at half maximum of a sampled curve, with linear interpolation
/// at the outermost half-maximum crossings. `x` must be monotone.
pub(crate) fn fwhm(x: &[f64], y: &[f64]) -> Option<f64> {
    let (i_max, &y_max) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(y_max > 0.0) {
        return None;
    }
    let half = 0.5 * y_max;
    let first = y.iter().position(|&v| v >= half)?;
    let last = y.iter().rposition(|&v| v >= half)?;
    debug_assert!(first <= i_max && i_max <= last);
    let left = if first == 0 {
        x[0]
    } else {
        interpolate(x[first - 1], y[first - 1], x[first], y[first], half)
    };
    let right = if last + 1 == y.len() {
        x[last]
    } else {
        interpolate(x[last], y[last], x[last + 1], y[last + 1], half)
    };
    Some((right - left).abs())
}

fn interpolate(x0: f64, y0: f64, x1: f64, y1: f64, level: f64) -> f64 {
    if y1 == y0 {
        return 0.5 * (x0 + x1);
    }
    x0 + (level - y0) * (x1 - x0) / (y1 - y0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt_two() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14);
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn fwhm_of_gaussian() {
        let x: Vec<f64> = (0..2001).map(|i| -10.0 + i as f64 * 0.01).collect();
        let sigma = 1.3;
        let y: Vec<f64> = x
            .iter()
            .map(|v| (-v * v / (2.0 * sigma * sigma)).exp())
            .collect();
        let w = fwhm(&x, &y).unwrap();
        let expected = 2.0 * (2.0 * 2f64.ln()).sqrt() * sigma;
        assert!((w - expected).abs() < 1e-4, "{w} vs {expected}");
    }

    #[test]
    fn click_given_photons_matches_naive() {
        let p = click_given_photons(2.5e-4, 0.1, 3);
        let naive = 1.0 - (1.0 - 2.5e-4) * 0.9f64.powi(3);
        assert!((p - naive).abs() < 1e-15);
        assert_eq!(click_given_photons(0.0, 0.3, 0), 0.0);
    }
}
