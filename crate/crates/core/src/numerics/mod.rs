//! Special functions and quadrature shared by the analytic rate code.
//!
//! Everything here is a pure function of its arguments, so it can be called
//! from any number of threads.

mod lambert;
mod quadrature;

pub use lambert::lambert_w0;
pub use quadrature::{integrate, integrate_with_breakpoints, QuadratureSpec};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("lambert_w0 argument {z} lies below the branch point -1/e")]
    LambertDomain { z: f64 },
    #[error("invalid integration interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(&'static str),
    #[error("integrand is not finite at x = {x}")]
    NonFinite { x: f64 },
    #[error(
        "quadrature did not converge after {subdivisions} subdivisions \
         (estimate {estimate}, error estimate {error_estimate})"
    )]
    QuadratureFailure {
        estimate: f64,
        error_estimate: f64,
        subdivisions: usize,
    },
}

/// Symmetric difference quotient `(f(x + h) - f(x - h)) / 2h`.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    debug_assert!(h > 0.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_examples() {
        assert!((central_diff(|x| x * x, 1.0, 1e-5) - 2.0).abs() < 1e-8);
        assert_eq!(central_diff(|_| 3.5, -7.0, 1e-3), 0.0);
        assert!((central_diff(f64::ln_1p, 0.0, 1e-5) - 1.0).abs() < 1e-8);
    }
}
