//! Cross-validation battery behind `beamcast verify`.
//!
//! A scaled-down run of the acceptance checks: condition agreement,
//! conditional-rate continuity, analytic against Monte Carlo, Schur ordering
//! of majorization pairs, and monotonicity in `q`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::CliError;
use crate::channel::{FadingModel, RayleighModel};
use crate::conditions::{schur_condition_numeric, schur_condition_rayleigh};
use crate::majorization::{random_feasible, random_majorization_pair};
use crate::montecarlo::simulate;
use crate::numerics::QuadratureSpec;
use crate::rate::{ConditionalRateInput, Rates, ThresholdPolicy};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed violation statistic (same units as `tolerance`).
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub tolerance_scale: f64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn random_model(r: &mut ChaCha8Rng, max_beams: usize) -> RayleighModel {
    let beams = r.random_range(1..=max_beams);
    let snr = 10f64.powf(r.random_range(-1.0..=1.0));
    RayleighModel::new(beams, snr).expect("valid by construction")
}

fn tight() -> QuadratureSpec {
    QuadratureSpec::new(1e-13, 1e-12, 4000).expect("valid spec")
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    cases: usize,
    failures: usize,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            cases: 0,
            failures: 0,
            worst: f64::NEG_INFINITY,
        }
    }

    /// Records a statistic that must stay strictly below the tolerance.
    fn below(&mut self, stat: f64) {
        self.cases += 1;
        self.worst = self.worst.max(stat);
        if !(stat < self.tolerance) {
            self.failures += 1;
        }
    }

    fn finish(self, allowed_failures: usize) -> CheckResult {
        CheckResult {
            name: self.name.into(),
            passed: self.failures <= allowed_failures,
            cases: self.cases,
            failures: self.failures,
            worst: if self.cases == 0 { 0.0 } else { self.worst },
            tolerance: self.tolerance,
        }
    }
}

fn condition_agreement() -> Result<CheckResult, CliError> {
    let mut t = Tally::new("condition_agreement", 0.5);
    for beams in 1..=4 {
        for snr in [0.1, 0.5, 1.0, 1.0001, 2.0, 10.0, 100.0] {
            let d = RayleighModel::new(beams, snr)?;
            let numeric = schur_condition_numeric(&d, 1000)?.holds;
            let closed = schur_condition_rayleigh(beams, snr)?;
            t.below(if numeric == closed { 0.0 } else { 1.0 });
        }
    }
    Ok(t.finish(0))
}

fn continuity(seed: u64, scale: f64) -> Result<CheckResult, CliError> {
    let mut r = rng(seed, 1);
    let mut t = Tally::new("continuity", 1e-9 * scale);
    for _ in 0..20 {
        let d = random_model(&mut r, 4);
        let rates = Rates::new(&d);
        let a: f64 = r.random_range(0.02..0.98);
        let b: f64 = r.random_range(0.02..0.98);
        let (tl, th) = (d.inv_cdf(a.min(b))?, d.inv_cdf(a.max(b))?);
        let at_low = ConditionalRateInput::new(&d, tl, th, tl)?;
        let at_high = ConditionalRateInput::new(&d, tl, th, th)?;
        t.below((rates.r1_cond(&at_low)? - rates.r2_cond(&at_low)?).abs());
        t.below((rates.r2_cond(&at_high)? - rates.g_const(th)?).abs());
    }
    Ok(t.finish(0))
}

fn analytic_vs_mc(seed: u64, scale: f64) -> Result<CheckResult, CliError> {
    const SAMPLES: u64 = 200_000;
    let mut r = rng(seed, 2);
    let mut t = Tally::new("analytic_vs_mc", 3.0 * scale);
    let mut configs = Vec::new();
    for k in 0..5u64 {
        let d = random_model(&mut r, 3);
        let n = r.random_range(1..=4);
        let lambda = r.random_range(0.1..=n as f64);
        let p = random_feasible(&mut r, n, lambda);
        let policy = ThresholdPolicy::from_probabilities(&d, &p)?;
        let analytic = Rates::new(&d).sum_rate(&policy)?;
        configs.push((d, policy, analytic, seed.wrapping_add(1000 * k)));
    }
    let sigma = |d: &RayleighModel, p: &ThresholdPolicy, a: f64, s: u64| -> Result<f64, CliError> {
        let est = simulate(d, p, SAMPLES, s)?;
        Ok(if est.std_error > 0.0 {
            (est.mean_rate - a).abs() / est.std_error
        } else if est.mean_rate == a {
            0.0
        } else {
            f64::INFINITY
        })
    };
    let mut failed = Vec::new();
    for (i, (d, p, a, s)) in configs.iter().enumerate() {
        let z = sigma(d, p, *a, *s)?;
        t.below(z);
        if !(z < t.tolerance) {
            failed.push(i);
        }
    }
    // a single marginal miss is rechecked under a fresh seed
    if failed.len() == 1 {
        let (d, p, a, s) = &configs[failed[0]];
        if sigma(d, p, *a, s.wrapping_add(1))? < t.tolerance {
            t.failures = 0;
        }
    }
    Ok(t.finish(0))
}

fn schur_ordering(seed: u64, scale: f64) -> Result<CheckResult, CliError> {
    let mut r = rng(seed, 3);
    let mut t = Tally::new("schur_ordering", 1e-8 * scale);
    for (beams, snr) in [(2, 1.0), (1, 0.8)] {
        let d = RayleighModel::new(beams, snr)?;
        let rates = Rates::new(&d);
        for _ in 0..10 {
            let n = r.random_range(2..=5);
            let total = r.random_range(0.2..=(n as f64 * 0.9));
            let (x, y) = random_majorization_pair(&mut r, n, total);
            let rx = rates.sum_rate(&ThresholdPolicy::from_probabilities(&d, &x)?)?;
            let ry = rates.sum_rate(&ThresholdPolicy::from_probabilities(&d, &y)?)?;
            // Schur-concave: the more spread out vector cannot do better
            t.below(rx - ry);
        }
    }
    Ok(t.finish(0))
}

fn q_monotonicity(seed: u64, scale: f64) -> Result<CheckResult, CliError> {
    let mut r = rng(seed, 4);
    let mut t = Tally::new("q_monotonicity", 1e-8 * scale);
    for (beams, snr) in [(2, 1.0), (1, 0.5)] {
        let d = RayleighModel::new(beams, snr)?;
        let rates = Rates::new(&d).with_quadrature(tight());
        for _ in 0..5 {
            let lambda: f64 = r.random_range(0.05..1.95);
            let y = d.inv_cdf(r.random_range(0.0..0.99))?;
            let lo = (lambda - 1.0).max(0.0);
            let hi = 0.5 * lambda;
            let steps = 40;
            let h = (hi - lo) / steps as f64;
            let mut prev = rates.conditional_rate_q(lo, lambda, y)?;
            for k in 1..=steps {
                let q = if k == steps { hi } else { lo + h * k as f64 };
                let cur = rates.conditional_rate_q(q, lambda, y)?;
                // the statistic is the negated slope
                t.below(-(cur - prev) / h);
                prev = cur;
            }
        }
    }
    Ok(t.finish(0))
}

pub fn run_battery(seed: u64, tolerance_scale: f64) -> Result<VerifyReport, CliError> {
    let checks = vec![
        condition_agreement()?,
        continuity(seed, tolerance_scale)?,
        analytic_vs_mc(seed, tolerance_scale)?,
        schur_ordering(seed, tolerance_scale)?,
        q_monotonicity(seed, tolerance_scale)?,
    ];
    Ok(VerifyReport {
        seed,
        tolerance_scale,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
