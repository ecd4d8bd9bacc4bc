//! SINR model for a broadcast channel with `M` random beams.
//!
//! Each user sees
//!
//! ```text
//!     gamma_m = |X_m|^2 / (1/rho + sum_{k != m} |X_k|^2)
//! ```
//!
//! with i.i.d. unit-mean exponential powers `|X_k|^2`. The components of one
//! user's SINR vector are dependent through the shared interference but have
//! a common marginal `F`. Users are independent of each other.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::numerics::{lambert_w0, NumericsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("beam count must be at least 1")]
    NoBeams,
    #[error("snr must be finite and strictly positive, got {0}")]
    InvalidSnr(f64),
    #[error("probability {0} outside [0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Marginal SINR distribution plus a joint sampler for one user's SINR vector.
///
/// The analytic code (rates, Schur conditions) only touches the marginal
/// functions, so any fading family with a density supported on `[0, inf)`
/// can be plugged in.
pub trait FadingModel: Send + Sync {
    /// Number of beams, i.e. the length of one user's SINR vector.
    fn beams(&self) -> usize;

    fn cdf(&self, x: f64) -> f64;

    /// `1 - cdf(x)`, evaluated without cancellation in the upper tail.
    fn sf(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    fn pdf(&self, x: f64) -> f64;

    /// Derivative of the density.
    fn pdf_prime(&self, x: f64) -> f64;

    fn inv_cdf(&self, u: f64) -> Result<f64, ChannelError>;

    /// Fills `out` (length `beams()`) with one user's joint SINR draw.
    fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]);
}

/// Rayleigh fading with unit-power signals and channel coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayleighModel {
    beams: usize,
    snr: f64,
}

/// `u` is clamped to this before inverting so the Lambert-W argument stays finite.
const MAX_INVERTIBLE_U: f64 = 1.0 - 1e-12;

impl RayleighModel {
    pub fn new(beams: usize, snr: f64) -> Result<Self, ChannelError> {
        if beams == 0 {
            return Err(ChannelError::NoBeams);
        }
        if !(snr.is_finite() && snr > 0.0) {
            return Err(ChannelError::InvalidSnr(snr));
        }
        Ok(Self { beams, snr })
    }

    pub fn snr(&self) -> f64 {
        self.snr
    }

    /// Log of the survival function, `-x/rho - (M-1) ln(1+x)` for `x > 0`.
    fn log_sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x == f64::INFINITY {
            f64::NEG_INFINITY
        } else {
            -x / self.snr - (self.beams as f64 - 1.0) * x.ln_1p()
        }
    }

    fn inv_cdf_closed_form(&self, u: f64) -> Result<f64, ChannelError> {
        let rho = self.snr;
        if self.beams == 1 {
            return Ok(-rho * (-u).ln_1p());
        }
        let m1 = self.beams as f64 - 1.0;
        let c = m1 * rho;
        // W argument is exp(1/c)/c * (1-u)^(-1/(M-1)); work with its log.
        let log_arg = 1.0 / c - c.ln() - (-u).ln_1p() / m1;
        let w = if log_arg < 700.0 {
            lambert_w0(log_arg.exp())?
        } else {
            w_from_log(log_arg)
        };
        Ok((c * w - 1.0).max(0.0))
    }
}

/// Solves `w + ln w = log_z` for `w > 1` when `exp(log_z)` would overflow.
fn w_from_log(log_z: f64) -> f64 {
    let mut w = log_z - log_z.ln();
    for _ in 0..50 {
        let step = (w + w.ln() - log_z) / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w {
            break;
        }
    }
    w
}

impl FadingModel for RayleighModel {
    fn beams(&self) -> usize {
        self.beams
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -self.log_sf(x).exp_m1()
        }
    }

    fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else {
            self.log_sf(x).exp()
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        if !(0.0..f64::INFINITY).contains(&x) {
            return 0.0;
        }
        let u = 1.0 + x;
        let m1 = self.beams as f64 - 1.0;
        (self.log_sf(x) - u.ln()).exp() * (u / self.snr + m1)
    }

    fn pdf_prime(&self, x: f64) -> f64 {
        if !(0.0..f64::INFINITY).contains(&x) {
            return 0.0;
        }
        // f'(x) = e^{-x/rho} u^{-M-1} [u/rho - (u/rho + M)(u/rho + M - 1)], u = 1 + x
        let u = 1.0 + x;
        let m = self.beams as f64;
        let a = u / self.snr;
        (self.log_sf(x) - 2.0 * u.ln()).exp() * (a - (a + m) * (a + m - 1.0))
    }

    fn inv_cdf(&self, u: f64) -> Result<f64, ChannelError> {
        if !(0.0..1.0).contains(&u) {
            return Err(ChannelError::ProbabilityOutOfRange(u));
        }
        if u == 0.0 {
            return Ok(0.0);
        }
        let u = u.min(MAX_INVERTIBLE_U);
        let x = self.inv_cdf_closed_form(u)?;
        if self.beams == 1 {
            return Ok(x);
        }
        // one Newton polish on the cdf
        let density = self.pdf(x);
        if density > 0.0 && x > 0.0 {
            let polished = x - (self.cdf(x) - u) / density;
            if polished.is_finite() && polished > 0.0 {
                return Ok(polished);
            }
        }
        Ok(x)
    }

    fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.beams);
        let noise = 1.0 / self.snr;
        let mut total = 0.0;
        for p in out.iter_mut() {
            let power: f64 = Exp1.sample(rng);
            *p = power;
            total += power;
        }
        for p in out.iter_mut() {
            let interference = (total - *p).max(0.0);
            *p /= noise + interference;
        }
    }
}

/// One user's SINR across all beams.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrVector(pub Vec<f64>);

/// Draws `n_users` independent SINR vectors.
pub fn sample_sinr_matrix<D: FadingModel, R: Rng + ?Sized>(
    model: &D,
    n_users: usize,
    rng: &mut R,
) -> Vec<SinrVector> {
    (0..n_users)
        .map(|_| {
            let mut row = vec![0.0; model.beams()];
            model.sample_row(rng, &mut row);
            SinrVector(row)
        })
        .collect()
}
