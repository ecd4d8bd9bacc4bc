use std::f64::consts::E;

use super::NumericsError;

const BRANCH_POINT: f64 = -1.0 / E;
const DOMAIN_SLACK: f64 = 1e-12;
const MAX_HALLEY_STEPS: usize = 64;

/// Principal branch of the Lambert W function, `w * exp(w) = z` with `w >= -1`.
///
/// Arguments up to `1e-12` below `-1/e` are treated as the branch point.
/// Halley iteration is run on `w e^w - z` for small arguments and on
/// `w + ln w - ln z` once `z > e`, where the direct form overflows. If an
/// iterate leaves the principal domain the solve falls back to bisection.
pub fn lambert_w0(z: f64) -> Result<f64, NumericsError> {
    if z.is_nan() || z < BRANCH_POINT - DOMAIN_SLACK {
        return Err(NumericsError::LambertDomain { z });
    }
    if z <= BRANCH_POINT {
        return Ok(-1.0);
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let solved = if z > E {
        halley_log_form(z)
    } else {
        halley_direct(z)
    };
    Ok(solved.unwrap_or_else(|| bisect(z)))
}

fn initial_guess(z: f64) -> f64 {
    if z < -0.25 {
        // branch-point series in p = sqrt(2(ez + 1))
        let p = (2.0 * (E * z + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if z <= E {
        z.ln_1p()
    } else {
        let l1 = z.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

fn converged(prev: f64, next: f64) -> bool {
    (next - prev).abs() <= 4.0 * f64::EPSILON * (1.0 + next.abs())
}

fn halley_direct(z: f64) -> Option<f64> {
    let mut w = initial_guess(z);
    for _ in 0..MAX_HALLEY_STEPS {
        let ew = w.exp();
        let residual = w * ew - z;
        if residual == 0.0 {
            return Some(w);
        }
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * residual / (2.0 * wp1);
        let next = w - residual / denom;
        if !next.is_finite() || next < -1.0 {
            return None;
        }
        if converged(w, next) {
            return Some(next);
        }
        w = next;
    }
    None
}

// Solves g(w) = w + ln w - ln z = 0, valid for w > 0 (z > 0).
fn halley_log_form(z: f64) -> Option<f64> {
    let target = z.ln();
    let mut w = initial_guess(z);
    for _ in 0..MAX_HALLEY_STEPS {
        if w <= 0.0 {
            return None;
        }
        let g = w + w.ln() - target;
        let g1 = 1.0 + 1.0 / w;
        let g2 = -1.0 / (w * w);
        let step = g / g1;
        let next = w - step / (1.0 - step * g2 / (2.0 * g1));
        if !next.is_finite() || next <= 0.0 {
            return None;
        }
        if converged(w, next) {
            return Some(next);
        }
        w = next;
    }
    None
}

fn bisect(z: f64) -> f64 {
    let mut lo = -1.0_f64;
    let mut hi = if z <= E { 1.0 } else { z.ln() };
    // w e^w is increasing on [-1, inf); compare in log form when z is large
    let above = |w: f64| {
        if z > E {
            w + w.ln() > z.ln()
        } else {
            w * w.exp() > z
        }
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if above(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relative_residual(z: f64) -> f64 {
        let w = lambert_w0(z).unwrap();
        (w * w.exp() - z).abs() / z.abs().max(1.0)
    }

    #[test]
    fn trivial_points() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(lambert_w0(BRANCH_POINT).unwrap(), -1.0);
    }

    #[test]
    fn omega_constant_matches_bisection_oracle() {
        // bisection on w e^w = 1 to 1e-10
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() > 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let w = lambert_w0(1.0).unwrap();
        assert!((w - lo).abs() < 1e-10);
        assert!((w - 0.567_143_290_4).abs() < 1e-10);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            lambert_w0(-0.5),
            Err(NumericsError::LambertDomain { .. })
        ));
        assert!(lambert_w0(f64::NAN).is_err());
        // inside the slack band
        assert_eq!(lambert_w0(BRANCH_POINT - 5e-13).unwrap(), -1.0);
    }

    #[test]
    fn residual_on_log_spaced_grid() {
        let mut zs = vec![BRANCH_POINT + 1e-6, -0.3, -0.1, -1e-3, 1e-300, 1e-8];
        // 1e-6 .. 1e6 log-spaced
        for k in 0..=240 {
            zs.push(10f64.powf(-6.0 + 12.0 * k as f64 / 240.0));
        }
        for z in zs {
            let r = relative_residual(z);
            assert!(r < 1e-12, "z = {z}: residual {r}");
        }
    }

    #[test]
    fn huge_arguments() {
        for z in [1e50, 1e200, 1e300, f64::MAX] {
            let w = lambert_w0(z).unwrap();
            let g = w + w.ln() - z.ln();
            assert!(g.abs() < 1e-12 * z.ln(), "z = {z}");
        }
    }

    #[test]
    fn bisection_fallback_agrees() {
        for z in [-0.3, 0.5, 2.0, 50.0, 1e10] {
            let w = lambert_w0(z).unwrap();
            assert!((bisect(z) - w).abs() < 1e-12 * (1.0 + w.abs()), "z = {z}");
        }
    }
}
