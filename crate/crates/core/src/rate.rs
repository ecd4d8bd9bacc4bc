//! Ergodic rates of threshold feedback policies.
//!
//! A user reports a beam's SINR only when it clears the user's threshold,
//! so the scheduler sees the truncated SINR `g * 1{g >= tau}` (an atom at
//! zero of mass `F(tau)`). The per-beam rate is `E[log(1 + max_i truncated_i)]`.
//!
//! [`Rates::beam_rate`] evaluates that expectation through the tail identity
//!
//! ```text
//!     E[log(1 + Z)] = int_0^inf P(Z > y) / (1 + y) dy,
//! ```
//!
//! which turns the maximum over users into a product of truncated marginals.
//! The conditional pair rates ([`Rates::g_const`], [`Rates::r1_cond`],
//! [`Rates::r2_cond`]) fix the best competing truncated SINR `y` of all other
//! users and integrate only over the two perturbed users; they are the
//! building blocks of the Schur-concavity argument and serve as a second,
//! independent route to the same beam rate.
//!
//! All rates are in nats. `dF^2` means `d(F(x)^2) = 2 F(x) f(x) dx`, the law of
//! the larger of two i.i.d. draws.

use thiserror::Error;

use crate::channel::{ChannelError, FadingModel};
use crate::numerics::{integrate, integrate_with_breakpoints, NumericsError, QuadratureSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("a policy needs at least one user")]
    EmptyPolicy,
    #[error("threshold {index} = {value} must be >= 0 (or +inf)")]
    InvalidThreshold { index: usize, value: f64 },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("SINR level {0} must be >= 0")]
    NegativeLevel(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("q = {q} outside [{lo}, {hi}]")]
    QOutOfRange { q: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Per-user SINR thresholds. `+inf` means the user never feeds back.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPolicy {
    thresholds: Vec<f64>,
}

impl ThresholdPolicy {
    pub fn new(thresholds: Vec<f64>) -> Result<Self, RateError> {
        if thresholds.is_empty() {
            return Err(RateError::EmptyPolicy);
        }
        if let Some((index, &value)) = thresholds.iter().enumerate().find(|(_, t)| !(**t >= 0.0)) {
            return Err(RateError::InvalidThreshold { index, value });
        }
        Ok(Self { thresholds })
    }

    pub fn homogeneous(n: usize, threshold: f64) -> Result<Self, RateError> {
        Self::new(vec![threshold; n])
    }

    /// Builds the policy whose users feed back with probabilities `probs`.
    pub fn from_probabilities<D: FadingModel>(model: &D, probs: &[f64]) -> Result<Self, RateError> {
        let thresholds = probs
            .iter()
            .map(|&p| threshold_for_probability(model, p))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(thresholds)
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    /// Feedback probabilities `P(gamma >= tau_i)`.
    pub fn probabilities<D: FadingModel>(&self, model: &D) -> Vec<f64> {
        self.thresholds.iter().map(|&t| model.sf(t)).collect()
    }
}

/// `F^{-1}(1 - p)`, with `p = 0` mapped to `+inf` and `p = 1` to `0`.
pub fn threshold_for_probability<D: FadingModel>(model: &D, p: f64) -> Result<f64, RateError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(RateError::InvalidProbability(p));
    }
    if p == 0.0 {
        return Ok(f64::INFINITY);
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    // below ~1e-16, 1 - p rounds to 1; inv_cdf saturates well before that anyway
    Ok(model.inv_cdf((1.0 - p).min(1.0 - f64::EPSILON))?)
}

/// `P(truncated SINR <= y)` for threshold `tau`.
pub fn truncated_cdf<D: FadingModel>(model: &D, tau: f64, y: f64) -> Result<f64, RateError> {
    if !(y >= 0.0) {
        return Err(RateError::NegativeLevel(y));
    }
    if !(tau >= 0.0) {
        return Err(RateError::InvalidThreshold { index: 0, value: tau });
    }
    Ok(if tau == f64::INFINITY {
        1.0
    } else if y < tau {
        model.cdf(tau)
    } else {
        model.cdf(y)
    })
}

/// Inputs of the conditional pair rates.
///
/// `tau_low <= tau_high` are the two perturbed users' thresholds, `y` the
/// realized best truncated SINR among everyone else and `lambda_pair` the
/// pair's combined feedback probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalRateInput {
    pub tau_low: f64,
    pub tau_high: f64,
    pub y: f64,
    pub lambda_pair: f64,
}

impl ConditionalRateInput {
    pub fn new<D: FadingModel>(model: &D, tau_low: f64, tau_high: f64, y: f64) -> Result<Self, RateError> {
        if !(tau_low >= 0.0) || !(tau_high >= tau_low) {
            return Err(RateError::Precondition(format!(
                "need 0 <= tau_low <= tau_high, got ({tau_low}, {tau_high})"
            )));
        }
        if !(y >= 0.0) || y.is_infinite() {
            return Err(RateError::NegativeLevel(y));
        }
        Ok(Self {
            tau_low,
            tau_high,
            y,
            lambda_pair: model.sf(tau_low) + model.sf(tau_high),
        })
    }
}

/// Rate functionals for one fading model at a fixed quadrature accuracy.
#[derive(Debug, Clone, Copy)]
pub struct Rates<'a, D> {
    model: &'a D,
    quad: QuadratureSpec,
}

impl<'a, D: FadingModel> Rates<'a, D> {
    pub fn new(model: &'a D) -> Self {
        Self {
            model,
            quad: QuadratureSpec::default(),
        }
    }

    pub fn with_quadrature(mut self, quad: QuadratureSpec) -> Self {
        self.quad = quad;
        self
    }

    pub fn model(&self) -> &'a D {
        self.model
    }

    pub fn quadrature(&self) -> &QuadratureSpec {
        &self.quad
    }

    /// Ergodic rate on one beam.
    pub fn beam_rate(&self, policy: &ThresholdPolicy) -> Result<f64, RateError> {
        let taus = policy.thresholds();
        if taus.iter().all(|t| t.is_infinite()) {
            return Ok(0.0);
        }
        let model = self.model;
        // P(Z > y) = 1 - prod_i (1 - s_i(y)), s_i = survival of the truncated SINR
        let tail = |y: f64| {
            let log_all_below: f64 = taus
                .iter()
                .map(|&t| {
                    let s = if t.is_infinite() { 0.0 } else { model.sf(y.max(t)) };
                    (-s).ln_1p()
                })
                .sum();
            -log_all_below.exp_m1() / (1.0 + y)
        };
        Ok(integrate_with_breakpoints(tail, 0.0, f64::INFINITY, taus, &self.quad)?)
    }

    /// Ergodic sum rate over all (statistically identical) beams.
    pub fn sum_rate(&self, policy: &ThresholdPolicy) -> Result<f64, RateError> {
        Ok(self.model.beams() as f64 * self.beam_rate(policy)?)
    }

    /// Expected number of users feeding back on one beam.
    pub fn feedback_load(&self, policy: &ThresholdPolicy) -> f64 {
        feedback_load(self.model, policy)
    }

    /// `int_a^inf log(1+x) dF^2(x)`.
    fn max_of_two_tail(&self, a: f64) -> Result<f64, RateError> {
        if a == f64::INFINITY {
            return Ok(0.0);
        }
        let m = self.model;
        let integrand = |x: f64| 2.0 * x.ln_1p() * m.cdf(x) * m.pdf(x);
        Ok(integrate(integrand, a, f64::INFINITY, &self.quad)?)
    }

    /// `int_a^b log(1+x) dF(x)`.
    fn single_band(&self, a: f64, b: f64) -> Result<f64, RateError> {
        if a >= b {
            return Ok(0.0);
        }
        let m = self.model;
        Ok(integrate(|x: f64| x.ln_1p() * m.pdf(x), a, b, &self.quad)?)
    }

    /// Conditional pair rate when the competing level `y` exceeds both thresholds:
    /// `F(y)^2 log(1+y) + int_y^inf log(1+x) dF^2(x)`.
    pub fn g_const(&self, y: f64) -> Result<f64, RateError> {
        if !(y >= 0.0) {
            return Err(RateError::NegativeLevel(y));
        }
        let fy = self.model.cdf(y);
        Ok(fy * fy * y.ln_1p() + self.max_of_two_tail(y)?)
    }

    /// Conditional pair rate when `y` lies below both thresholds (`y <= tau_low`).
    pub fn r1_cond(&self, input: &ConditionalRateInput) -> Result<f64, RateError> {
        if !(input.y <= input.tau_low) {
            return Err(RateError::Precondition(format!(
                "r1 needs y <= tau_low, got y = {} and tau_low = {}",
                input.y, input.tau_low
            )));
        }
        self.r1_unchecked(input.tau_low, input.tau_high, input.y)
    }

    fn r1_unchecked(&self, tau_low: f64, tau_high: f64, y: f64) -> Result<f64, RateError> {
        let f_low = self.model.cdf(tau_low);
        let f_high = self.model.cdf(tau_high);
        Ok(self.max_of_two_tail(tau_high)?
            + f_high * self.single_band(tau_low, tau_high)?
            + y.ln_1p() * f_low * f_high)
    }

    /// Conditional pair rate when `tau_low <= y <= tau_high`.
    pub fn r2_cond(&self, input: &ConditionalRateInput) -> Result<f64, RateError> {
        if !(input.tau_low <= input.y && input.y <= input.tau_high) {
            return Err(RateError::Precondition(format!(
                "r2 needs tau_low <= y <= tau_high, got {} <= {} <= {}",
                input.tau_low, input.y, input.tau_high
            )));
        }
        self.r2_unchecked(input.tau_high, input.y)
    }

    fn r2_unchecked(&self, tau_high: f64, y: f64) -> Result<f64, RateError> {
        let f_high = self.model.cdf(tau_high);
        let f_y = self.model.cdf(y);
        Ok(self.max_of_two_tail(tau_high)?
            + f_high * self.single_band(y, tau_high)?
            + y.ln_1p() * f_high * f_y)
    }

    /// Dispatches to whichever of the three conditional rates applies.
    pub fn conditional_rate(&self, input: &ConditionalRateInput) -> Result<f64, RateError> {
        if input.y > input.tau_high {
            self.g_const(input.y)
        } else if input.y < input.tau_low {
            self.r1_unchecked(input.tau_low, input.tau_high, input.y)
        } else {
            self.r2_unchecked(input.tau_high, input.y)
        }
    }

    /// Conditional pair rate as a function of the smaller feedback probability
    /// `q`, with the pair total `lambda_pair` held fixed.
    ///
    /// The user with probability `q` gets threshold `F^{-1}(1 - q)` and the
    /// other `F^{-1}(1 - (lambda_pair - q))`. Branches follow the position of
    /// `y` relative to those thresholds, written in probability space.
    pub fn conditional_rate_q(&self, q: f64, lambda_pair: f64, y: f64) -> Result<f64, RateError> {
        if !(0.0..=2.0).contains(&lambda_pair) {
            return Err(RateError::Precondition(format!(
                "lambda_pair = {lambda_pair} outside [0, 2]"
            )));
        }
        if !(y >= 0.0) {
            return Err(RateError::NegativeLevel(y));
        }
        let lo = (lambda_pair - 1.0).max(0.0);
        let hi = 0.5 * lambda_pair;
        const SLACK: f64 = 1e-12;
        if !(q >= lo - SLACK && q <= hi + SLACK) {
            return Err(RateError::QOutOfRange { q, lo, hi });
        }
        let q = q.clamp(lo, hi);
        let p_other = (lambda_pair - q).clamp(0.0, 1.0);
        let above_y = self.model.sf(y);
        if q > above_y {
            self.g_const(y)
        } else if q > lambda_pair - above_y {
            let tau_high = threshold_for_probability(self.model, q)?;
            let tau_low = threshold_for_probability(self.model, p_other)?;
            self.r1_unchecked(tau_low, tau_high, y)
        } else {
            let tau_high = threshold_for_probability(self.model, q)?;
            self.r2_unchecked(tau_high, y)
        }
    }
}

/// `sum_i P(gamma_i1 >= tau_i)`.
pub fn feedback_load<D: FadingModel>(model: &D, policy: &ThresholdPolicy) -> f64 {
    policy.thresholds().iter().map(|&t| model.sf(t)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RayleighModel;
    use crate::numerics::central_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    const INF: f64 = f64::INFINITY;

    fn model(m: usize, rho: f64) -> RayleighModel {
        RayleighModel::new(m, rho).unwrap()
    }

    fn policy(t: &[f64]) -> ThresholdPolicy {
        ThresholdPolicy::new(t.to_vec()).unwrap()
    }

    fn tight() -> QuadratureSpec {
        QuadratureSpec::new(1e-13, 1e-12, 4000).unwrap()
    }

    #[test]
    fn policy_validation() {
        assert_eq!(ThresholdPolicy::new(vec![]), Err(RateError::EmptyPolicy));
        assert!(ThresholdPolicy::new(vec![1.0, -0.5]).is_err());
        assert!(ThresholdPolicy::new(vec![f64::NAN]).is_err());
        assert!(ThresholdPolicy::new(vec![0.0, INF]).is_ok());
    }

    #[test]
    fn threshold_for_probability_edges() {
        let d = model(2, 1.0);
        assert_eq!(threshold_for_probability(&d, 0.0).unwrap(), INF);
        assert_eq!(threshold_for_probability(&d, 1.0).unwrap(), 0.0);
        assert!(threshold_for_probability(&d, 1.5).is_err());
        let t = threshold_for_probability(&d, 0.3).unwrap();
        assert!((d.sf(t) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn truncated_cdf_examples() {
        let d = model(1, 1.0);
        for y in [0.0, 0.3, 2.0] {
            assert_eq!(truncated_cdf(&d, 0.0, y).unwrap(), d.cdf(y));
        }
        assert_eq!(truncated_cdf(&d, INF, 0.0).unwrap(), 1.0);
        let v = truncated_cdf(&d, 1.0, 0.5).unwrap();
        assert!((v - 0.632_120_6).abs() < 1e-7);
        assert!(matches!(
            truncated_cdf(&d, 1.0, -0.1),
            Err(RateError::NegativeLevel(_))
        ));
    }

    #[test]
    fn beam_rate_examples() {
        let d = model(1, 1.0);
        let r = Rates::new(&d);
        assert_eq!(r.beam_rate(&policy(&[INF, INF, INF])).unwrap(), 0.0);
        // E[log(1+gamma)] by direct expectation, a different integrand
        let oracle = integrate(|x: f64| x.ln_1p() * (-x).exp(), 0.0, INF, &tight()).unwrap();
        let v = r.beam_rate(&policy(&[0.0])).unwrap();
        assert!((v - oracle).abs() < 1e-9);
        assert!((v - 0.596_347_4).abs() < 1e-7);
        let ee1 = E * 0.219_383_934_395_520_27; // e * E1(1)
        assert!((v - ee1).abs() < 1e-9);
    }

    #[test]
    fn sum_rate_scales_with_beams() {
        let d1 = model(1, 2.0);
        let r1 = Rates::new(&d1);
        let p = policy(&[0.4, 1.3]);
        assert_eq!(r1.sum_rate(&p).unwrap(), r1.beam_rate(&p).unwrap());
        let d2 = model(2, 2.0);
        let r2 = Rates::new(&d2);
        assert_eq!(r2.sum_rate(&p).unwrap(), 2.0 * r2.beam_rate(&p).unwrap());
    }

    #[test]
    fn feedback_load_examples() {
        let d = model(1, 1.0);
        assert_eq!(feedback_load(&d, &policy(&[0.0; 5])), 5.0);
        assert_eq!(feedback_load(&d, &policy(&[INF; 3])), 0.0);
        let v = feedback_load(&d, &policy(&[1.0, 1.0]));
        assert!((v - 2.0 / E).abs() < 1e-15);
        assert!((v - 0.735_758_9).abs() < 1e-7);
    }

    #[test]
    fn policy_from_probabilities_matches_load() {
        let d = model(3, 0.7);
        let probs = [0.9, 0.25, 0.0, 1.0];
        let p = ThresholdPolicy::from_probabilities(&d, &probs).unwrap();
        assert!((feedback_load(&d, &p) - probs.iter().sum::<f64>()).abs() < 1e-12);
        for (a, b) in p.probabilities(&d).iter().zip(probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn g_const_limits() {
        for (m, rho) in [(1, 1.0), (2, 0.5), (3, 4.0)] {
            let d = model(m, rho);
            let r = Rates::new(&d);
            // y = 0: two untruncated users, computed through the tail identity
            let two_users = r.beam_rate(&policy(&[0.0, 0.0])).unwrap();
            assert!((r.g_const(0.0).unwrap() - two_users).abs() < 1e-8);
            let y = 1e3;
            assert!((r.g_const(y).unwrap() - y.ln_1p()).abs() < 1e-6);
        }
    }

    #[test]
    fn r1_collapses_to_two_user_rate() {
        let d = model(2, 1.5);
        let r = Rates::new(&d);
        let input = ConditionalRateInput::new(&d, 0.0, 0.0, 0.0).unwrap();
        let v = r.r1_cond(&input).unwrap();
        assert!((v - r.g_const(0.0).unwrap()).abs() < 1e-12);
        assert!((v - r.max_of_two_tail(0.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn conditional_preconditions() {
        let d = model(1, 1.0);
        let r = Rates::new(&d);
        let inp = ConditionalRateInput::new(&d, 1.0, 2.0, 1.5).unwrap();
        assert!(matches!(r.r1_cond(&inp), Err(RateError::Precondition(_))));
        let inp = ConditionalRateInput::new(&d, 1.0, 2.0, 0.5).unwrap();
        assert!(matches!(r.r2_cond(&inp), Err(RateError::Precondition(_))));
        assert!(ConditionalRateInput::new(&d, 2.0, 1.0, 0.5).is_err());
        assert!(ConditionalRateInput::new(&d, 1.0, 2.0, -0.5).is_err());
        assert!(r.conditional_rate_q(0.3, 0.4, 0.1).is_err());
        assert!(r.conditional_rate_q(0.1, 1.5, 0.1).is_err());
    }

    #[test]
    fn lambda_pair_is_pair_feedback_probability() {
        let d = model(1, 1.0);
        let inp = ConditionalRateInput::new(&d, 1.0, INF, 0.0).unwrap();
        assert!((inp.lambda_pair - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn continuity_at_both_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = model(rng.random_range(1..=4), rng.random_range(0.1..10.0));
            let r = Rates::new(&d);
            let a: f64 = rng.random_range(0.0..5.0);
            let b: f64 = a + rng.random_range(0.0..5.0);
            let at_low = ConditionalRateInput::new(&d, a, b, a).unwrap();
            let at_high = ConditionalRateInput::new(&d, a, b, b).unwrap();
            let gap1 = (r.r1_cond(&at_low).unwrap() - r.r2_cond(&at_low).unwrap()).abs();
            let gap2 = (r.r2_cond(&at_high).unwrap() - r.g_const(b).unwrap()).abs();
            assert!(gap1 < 1e-9 && gap2 < 1e-9, "{gap1} {gap2}");
        }
    }

    #[test]
    fn q_form_homogeneous_pair_is_r1() {
        let d = model(2, 1.0);
        let r = Rates::new(&d);
        let lambda = 0.6;
        let tau = threshold_for_probability(&d, lambda / 2.0).unwrap();
        let y = 0.5 * tau;
        let v = r.conditional_rate_q(lambda / 2.0, lambda, y).unwrap();
        let input = ConditionalRateInput::new(&d, tau, tau, y).unwrap();
        assert!((v - r.r1_cond(&input).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn q_form_continuous_across_branches() {
        let d = model(2, 1.0);
        let r = Rates::new(&d).with_quadrature(tight());
        let lambda = 1.2;
        for y in [0.0, 0.4, 1.5] {
            let above = d.sf(y);
            let lo = (lambda - 1.0f64).max(0.0);
            let hi = lambda / 2.0;
            // branch switches at q = 1 - F(y) and q = lambda - (1 - F(y))
            for boundary in [above, lambda - above] {
                if boundary <= lo || boundary >= hi {
                    continue;
                }
                let h = 1e-7;
                let left = r.conditional_rate_q(boundary - h, lambda, y).unwrap();
                let right = r.conditional_rate_q(boundary + h, lambda, y).unwrap();
                assert!((left - right).abs() < 1e-6, "y={y} boundary={boundary}");
            }
        }
    }

    #[test]
    fn q_form_monotone_example() {
        // M = 2, rho = 1, lambda = 0.4, y = 0.3
        let d = model(2, 1.0);
        let r = Rates::new(&d).with_quadrature(tight());
        let (lambda, y) = (0.4, 0.3);
        let steps = 80;
        let h = lambda / 2.0 / steps as f64;
        let mut prev = r.conditional_rate_q(0.0, lambda, y).unwrap();
        for k in 1..=steps {
            let q = (k as f64 * h).min(lambda / 2.0);
            let cur = r.conditional_rate_q(q, lambda, y).unwrap();
            assert!((cur - prev) / h >= -1e-8, "q = {q}");
            prev = cur;
        }
    }

    #[test]
    fn beam_rate_nonincreasing_in_each_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let d = model(rng.random_range(1..=3), rng.random_range(0.2..5.0));
            let r = Rates::new(&d).with_quadrature(tight());
            let n = rng.random_range(1..=4);
            let taus: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
            for i in 0..n {
                let slope = central_diff(
                    |t| {
                        let mut v = taus.clone();
                        v[i] = t;
                        r.beam_rate(&policy(&v)).unwrap()
                    },
                    taus[i] + 1e-3,
                    1e-3,
                );
                assert!(slope <= 1e-8, "slope {slope} at {taus:?}");
            }
        }
    }
}
