#![allow(dead_code)]

use beamcast::channel::{FadingModel, RayleighModel};
use beamcast::numerics::{integrate_with_breakpoints, QuadratureSpec};
use rand::Rng;

pub fn fine() -> QuadratureSpec {
    QuadratureSpec::new(1e-13, 1e-12, 4000).unwrap()
}

fn nested() -> QuadratureSpec {
    QuadratureSpec::new(1e-12, 1e-11, 4000).unwrap()
}

/// Brute-force `E[log(1 + max(A, B, y))]` where `A`, `B` are independent
/// SINRs zeroed below `tau_a`, `tau_b`. Splits into the four atom/continuum
/// cases and integrates the continuous-continuous part as a double integral.
pub fn pair_max_oracle<D: FadingModel>(d: &D, tau_a: f64, tau_b: f64, y: f64) -> f64 {
    let q = nested();
    let l = |x: f64| x.ln_1p();
    let (fa, fb) = (d.cdf(tau_a), d.cdf(tau_b));
    // E[L(max(X, m)); X >= tau] for one truncated SINR above floor m
    let one = |tau: f64, m: f64| -> f64 {
        if tau.is_infinite() {
            return 0.0;
        }
        integrate_with_breakpoints(|x| l(x.max(m)) * d.pdf(x), tau, f64::INFINITY, &[m], &q).unwrap()
    };
    let mut total = fa * fb * l(y) + fa * one(tau_b, y) + fb * one(tau_a, y);
    if tau_a.is_finite() && tau_b.is_finite() {
        let outer = |a: f64| d.pdf(a) * one(tau_b, a.max(y));
        total += integrate_with_breakpoints(outer, tau_a, f64::INFINITY, &[y, tau_b], &q).unwrap();
    }
    total
}

/// Rayleigh model with 1..=max_beams beams and SNR log-uniform in [lo, hi].
pub fn random_rayleigh<R: Rng>(rng: &mut R, max_beams: usize, lo: f64, hi: f64) -> RayleighModel {
    let beams = rng.random_range(1..=max_beams);
    let snr = (rng.random_range(lo.ln()..=hi.ln())).exp();
    RayleighModel::new(beams, snr).unwrap()
}

/// Two ordered thresholds at random feedback probabilities.
pub fn random_threshold_pair<R: Rng, D: FadingModel>(rng: &mut R, d: &D) -> (f64, f64) {
    let a: f64 = rng.random_range(0.02..0.98);
    let b: f64 = rng.random_range(0.02..0.98);
    (d.inv_cdf(a.min(b)).unwrap(), d.inv_cdf(a.max(b)).unwrap())
}
