//! Sufficient condition for the rate to be Schur-concave in the feedback
//! probabilities:
//!
//! ```text
//!     f'(t) (1 + t) + f(t) <= 0   for every t = F^{-1}(x), x in [0, 1),
//! ```
//!
//! together with a density that is bounded at zero. When it holds, a
//! homogeneous threshold policy solves the constrained rate maximization.
//!
//! For Rayleigh fading the margin factors as
//! `e^{-t/rho} u^{-M} (-(u/rho)^2 + (3 - 2M) u/rho - (M-1)^2)` with `u = 1 + t`,
//! which is negative for every `t` once `M >= 2` and reduces to `u >= rho`
//! for `M = 1`, i.e. `rho <= 1`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{ChannelError, FadingModel};

/// Margins at or below this count as satisfying the condition.
pub const MARGIN_TOL: f64 = 1e-10;
/// Upper end of the probability grid; `F^{-1}(1)` is infinite.
pub const GRID_END: f64 = 1.0 - 1e-6;
pub const MIN_GRID: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConditionError {
    #[error("grid size {0} is below the minimum of 100")]
    GridTooSmall(usize),
    #[error("density is not finite at zero")]
    UnboundedAtZero,
    #[error("invalid parameters: beams = {beams}, snr = {snr}")]
    InvalidParameters { beams: usize, snr: f64 },
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    pub holds: bool,
    /// Largest value of `f'(t)(1+t) + f(t)` seen on the grid.
    pub worst_margin: f64,
    /// Grid probability `x` at which the worst margin occurs (lowest on ties).
    pub witness_x: f64,
    pub grid_size: usize,
}

/// `f'(t)(1 + t) + f(t)`.
pub fn margin<D: FadingModel>(model: &D, t: f64) -> f64 {
    model.pdf_prime(t) * (1.0 + t) + model.pdf(t)
}

/// Evaluates the margin at `t = F^{-1}(x)` on a uniform grid of `[0, 1 - 1e-6]`.
pub fn schur_condition_numeric<D: FadingModel>(
    model: &D,
    grid_size: usize,
) -> Result<ConditionReport, ConditionError> {
    if grid_size < MIN_GRID {
        return Err(ConditionError::GridTooSmall(grid_size));
    }
    if !model.pdf(0.0).is_finite() {
        return Err(ConditionError::UnboundedAtZero);
    }
    let step = GRID_END / (grid_size - 1) as f64;
    let margins = (0..grid_size)
        .into_par_iter()
        .map(|k| {
            let x = if k + 1 == grid_size { GRID_END } else { k as f64 * step };
            let t = model.inv_cdf(x)?;
            Ok((x, margin(model, t)))
        })
        .collect::<Result<Vec<_>, ChannelError>>()?;

    // sequential scan: strict > keeps the lowest x on ties
    let (witness_x, worst_margin) = margins
        .into_iter()
        .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(ConditionReport {
        holds: worst_margin <= MARGIN_TOL,
        worst_margin,
        witness_x,
        grid_size,
    })
}

/// Closed-form verdict for Rayleigh fading: holds iff `M >= 2` or `rho <= 1`.
pub fn schur_condition_rayleigh(beams: usize, snr: f64) -> Result<bool, ConditionError> {
    if beams == 0 || !(snr.is_finite() && snr > 0.0) {
        return Err(ConditionError::InvalidParameters { beams, snr });
    }
    Ok(beams >= 2 || snr <= 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RayleighModel;

    fn numeric(m: usize, rho: f64) -> ConditionReport {
        schur_condition_numeric(&RayleighModel::new(m, rho).unwrap(), 1000).unwrap()
    }

    /// The factored Rayleigh margin from the module docs.
    fn factored_margin(m: usize, rho: f64, t: f64) -> f64 {
        let u = 1.0 + t;
        let a = u / rho;
        let m = m as f64;
        (-t / rho).exp() * u.powf(-m) * (-a * a + (3.0 - 2.0 * m) * a - (m - 1.0) * (m - 1.0))
    }

    #[test]
    fn margin_matches_factored_form() {
        for m in 1..=6 {
            for rho in [0.1, 1.0, 3.0, 50.0] {
                let d = RayleighModel::new(m, rho).unwrap();
                for k in 0..200 {
                    let t = k as f64 * 0.05 * rho;
                    let a = margin(&d, t);
                    let b = factored_margin(m, rho, t);
                    assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "M={m} rho={rho} t={t}");
                }
            }
        }
    }

    #[test]
    fn numeric_examples() {
        assert!(numeric(1, 0.5).holds);
        let r = numeric(1, 2.0);
        assert!(!r.holds);
        assert_eq!(r.witness_x, 0.0);
        assert!(numeric(4, 100.0).holds);
    }

    #[test]
    fn rayleigh_examples() {
        assert!(schur_condition_rayleigh(1, 1.0).unwrap());
        assert!(!schur_condition_rayleigh(1, 1.0001).unwrap());
        assert!(schur_condition_rayleigh(2, 1e6).unwrap());
        assert!(schur_condition_rayleigh(0, 1.0).is_err());
        assert!(schur_condition_rayleigh(1, -1.0).is_err());
    }

    #[test]
    fn closed_form_and_grid_agree() {
        for m in 1..=8 {
            for rho in [0.01, 0.1, 0.5, 1.0, 1.0001, 2.0, 10.0, 100.0] {
                assert_eq!(
                    schur_condition_rayleigh(m, rho).unwrap(),
                    numeric(m, rho).holds,
                    "M={m} rho={rho}"
                );
            }
        }
    }

    #[test]
    fn single_beam_witness_is_smallest_grid_point() {
        // M = 1: margin = e^{-t/rho} (1 - (1+t)/rho) / rho, decreasing in t
        for rho in [1.0001, 1.5, 2.0, 5.0, 10.0, 100.0] {
            let r = numeric(1, rho);
            assert!(!r.holds);
            assert_eq!(r.witness_x, 0.0, "rho = {rho}");
            assert!((r.worst_margin - (1.0 - 1.0 / rho) / rho).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_size_is_validated() {
        let d = RayleighModel::new(1, 1.0).unwrap();
        assert_eq!(
            schur_condition_numeric(&d, 99),
            Err(ConditionError::GridTooSmall(99))
        );
    }
}
