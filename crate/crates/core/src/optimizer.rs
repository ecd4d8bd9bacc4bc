//! Sum-rate maximization under an average feedback budget.
//!
//! The search runs in probability space: user `i` feeds back on a beam with
//! probability `p_i`, the budget is `sum p_i <= lambda`, and the objective is
//! the analytic sum rate of the induced thresholds `F^{-1}(1 - p_i)`.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::FadingModel;
use crate::majorization::{random_feasible, water_fill, ProbVector};
use crate::numerics::QuadratureSpec;
use crate::rate::{threshold_for_probability, RateError, Rates, ThresholdPolicy};

/// Rates closer than this are treated as equal when ranking candidates.
pub const RATE_TIE_TOL: f64 = 1e-12;
const INITIAL_STEP: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("need at least one user")]
    NoUsers,
    #[error("feedback budget {lambda} must lie in (0, {n}]")]
    InvalidLambda { lambda: f64, n: usize },
    #[error("invalid option: {0}")]
    InvalidOptions(&'static str),
    #[error("rate evaluation failed at p = {p:?}: {source}")]
    Evaluation { p: Vec<f64>, source: RateError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub starts: usize,
    pub step_tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub quadrature: QuadratureSpec,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            step_tol: 1e-7,
            max_iters: 2000,
            seed: 0,
            quadrature: QuadratureSpec::default(),
        }
    }
}

impl OptimizeOptions {
    fn validate(&self) -> Result<(), OptimizerError> {
        if self.starts == 0 {
            return Err(OptimizerError::InvalidOptions("starts must be >= 1"));
        }
        if !(self.step_tol > 0.0 && self.step_tol < INITIAL_STEP) {
            return Err(OptimizerError::InvalidOptions("step_tol must lie in (0, 0.25)"));
        }
        if self.max_iters == 0 {
            return Err(OptimizerError::InvalidOptions("max_iters must be >= 1"));
        }
        self.quadrature
            .validate()
            .map_err(|_| OptimizerError::InvalidOptions("invalid quadrature spec"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best_p: ProbVector,
    pub best_thresholds: ThresholdPolicy,
    pub best_rate: f64,
    pub load: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Accepted iterates `(p, rate)` of the winning search.
    pub trace: Vec<(Vec<f64>, f64)>,
    /// Sum rate of the homogeneous policy at the same budget.
    pub homogeneous_rate: f64,
}

/// Maximizer of the two-user rate along the budget face.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoUserScan {
    pub best_q: f64,
    pub best_rate: f64,
    /// `(q, sum rate)` for `p = (lambda - q, q)` on the whole grid.
    pub curve: Vec<(f64, f64)>,
}

fn check_budget(n: usize, lambda: f64) -> Result<(), OptimizerError> {
    if n == 0 {
        return Err(OptimizerError::NoUsers);
    }
    if !(lambda > 0.0 && lambda <= n as f64) {
        return Err(OptimizerError::InvalidLambda { lambda, n });
    }
    Ok(())
}

/// All users share the threshold `F^{-1}(1 - lambda/n)`.
pub fn homogeneous_policy<D: FadingModel>(
    model: &D,
    n: usize,
    lambda: f64,
) -> Result<ThresholdPolicy, OptimizerError> {
    check_budget(n, lambda)?;
    let p = (lambda / n as f64).min(1.0);
    let tau = threshold_for_probability(model, p)
        .map_err(|source| OptimizerError::Evaluation { p: vec![p; n], source })?;
    ThresholdPolicy::homogeneous(n, tau)
        .map_err(|source| OptimizerError::Evaluation { p: vec![p; n], source })
}

struct Objective<'a, D> {
    rates: Rates<'a, D>,
}

impl<D: FadingModel> Objective<'_, D> {
    fn policy(&self, p: &[f64]) -> Result<ThresholdPolicy, OptimizerError> {
        ThresholdPolicy::from_probabilities(self.rates.model(), p)
            .map_err(|source| OptimizerError::Evaluation { p: p.to_vec(), source })
    }

    fn eval(&self, p: &[f64]) -> Result<f64, OptimizerError> {
        let policy = self.policy(p)?;
        self.rates
            .sum_rate(&policy)
            .map_err(|source| OptimizerError::Evaluation { p: p.to_vec(), source })
    }
}

struct SearchOutcome {
    p: Vec<f64>,
    rate: f64,
    converged: bool,
    iterations: usize,
    trace: Vec<(Vec<f64>, f64)>,
}

/// Clamped poll moves of size `step` around `p`: single-coordinate moves and
/// pairwise transfers along the budget face.
fn poll_set(p: &[f64], step: f64, lambda: f64) -> Vec<Vec<f64>> {
    let n = p.len();
    let slack = (lambda - p.iter().sum::<f64>()).max(0.0);
    let mut out = Vec::with_capacity(n * (n + 1));
    for i in 0..n {
        let up = step.min(1.0 - p[i]).min(slack);
        if up > 0.0 {
            let mut q = p.to_vec();
            q[i] += up;
            out.push(q);
        }
        let down = step.min(p[i]);
        if down > 0.0 {
            let mut q = p.to_vec();
            q[i] -= down;
            out.push(q);
        }
    }
    for to in 0..n {
        for from in 0..n {
            if to == from {
                continue;
            }
            let amount = step.min(1.0 - p[to]).min(p[from]);
            if amount > 0.0 {
                let mut q = p.to_vec();
                let pair = q[to] + q[from];
                q[to] = (q[to] + amount).min(pair).min(1.0);
                q[from] = (pair - q[to]).max(0.0);
                out.push(q);
            }
        }
    }
    out
}

fn pattern_search<D: FadingModel>(
    objective: &Objective<'_, D>,
    start: Vec<f64>,
    lambda: f64,
    options: &OptimizeOptions,
) -> Result<SearchOutcome, OptimizerError> {
    let mut p = start;
    let mut rate = objective.eval(&p)?;
    let mut trace = vec![(p.clone(), rate)];
    let mut step = INITIAL_STEP;
    let mut iterations = 0;
    while step >= options.step_tol && iterations < options.max_iters {
        iterations += 1;
        let mut best: Option<(Vec<f64>, f64)> = None;
        for q in poll_set(&p, step, lambda) {
            let r = objective.eval(&q)?;
            let bar = best.as_ref().map_or(rate + RATE_TIE_TOL, |b| b.1);
            if r > bar {
                best = Some((q, r));
            }
        }
        match best {
            Some((q, r)) => {
                p = q;
                rate = r;
                trace.push((p.clone(), rate));
            }
            None => step *= 0.5,
        }
    }
    Ok(SearchOutcome {
        p,
        rate,
        converged: step < options.step_tol,
        iterations,
        trace,
    })
}

fn variance(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    p.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Candidate ranking: higher rate, then lower variance, then lexicographically
/// smaller `p`. `Less` means `a` is preferred.
fn rank(a: (&[f64], f64), b: (&[f64], f64)) -> Ordering {
    if (a.1 - b.1).abs() > RATE_TIE_TOL {
        return b.1.total_cmp(&a.1);
    }
    variance(a.0)
        .total_cmp(&variance(b.0))
        .then_with(|| {
            a.0.iter()
                .zip(b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

fn starting_points(n: usize, lambda: f64, options: &OptimizeOptions) -> Vec<Vec<f64>> {
    let mut starts = vec![vec![lambda / n as f64; n]];
    if options.starts >= 2 {
        // as much budget as possible on the first user
        let mut weights = vec![1.0; n];
        weights[0] = 1e3 * n as f64;
        starts.push(water_fill(&weights, lambda));
    }
    for k in 2..options.starts {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        rng.set_stream(k as u64);
        starts.push(random_feasible(&mut rng, n, lambda));
    }
    starts
}

/// Multi-start pattern search over `p in [0,1]^n`, `sum p <= lambda`.
pub fn optimize<D: FadingModel>(
    model: &D,
    n: usize,
    lambda: f64,
    options: &OptimizeOptions,
) -> Result<OptimizationResult, OptimizerError> {
    check_budget(n, lambda)?;
    options.validate()?;
    let objective = Objective {
        rates: Rates::new(model).with_quadrature(options.quadrature),
    };

    let homogeneous = homogeneous_policy(model, n, lambda)?;
    let homogeneous_p = vec![(lambda / n as f64).min(1.0); n];
    let homogeneous_rate = objective
        .rates
        .sum_rate(&homogeneous)
        .map_err(|source| OptimizerError::Evaluation { p: homogeneous_p.clone(), source })?;

    let outcomes = starting_points(n, lambda, options)
        .into_par_iter()
        .map(|s| pattern_search(&objective, s, lambda, options))
        .collect::<Result<Vec<_>, _>>()?;
    let searched = outcomes
        .into_iter()
        .reduce(|a, b| {
            if rank((&b.p, b.rate), (&a.p, a.rate)).is_lt() {
                b
            } else {
                a
            }
        })
        .expect("at least one start");

    let (best_p, mut trace) = if rank((&homogeneous_p, homogeneous_rate), (&searched.p, searched.rate)).is_le() {
        let mut trace = searched.trace;
        trace.push((homogeneous_p.clone(), homogeneous_rate));
        (homogeneous_p, trace)
    } else {
        (searched.p, searched.trace)
    };
    trace.shrink_to_fit();

    let best_thresholds = objective.policy(&best_p)?;
    let best_rate = objective.eval(&best_p)?;
    let load = objective.rates.feedback_load(&best_thresholds);
    let best_p = ProbVector::new(best_p).expect("iterates stay in [0, 1]");
    Ok(OptimizationResult {
        best_p,
        best_thresholds,
        best_rate,
        load,
        converged: searched.converged,
        iterations: searched.iterations,
        trace,
        homogeneous_rate,
    })
}

/// Largest rate change produced by any single poll move of size `step`
/// around `p`. Rate gaps below a few times this are within search noise.
pub fn step_sensitivity<D: FadingModel>(
    model: &D,
    p: &[f64],
    lambda: f64,
    step: f64,
    quadrature: QuadratureSpec,
) -> Result<f64, OptimizerError> {
    let objective = Objective {
        rates: Rates::new(model).with_quadrature(quadrature),
    };
    let base = objective.eval(p)?;
    poll_set(p, step, lambda)
        .iter()
        .try_fold(0.0_f64, |acc, q| Ok(acc.max((objective.eval(q)? - base).abs())))
}

/// Sum rate of `p = (lambda - q, q)` on a uniform grid of
/// `q in [max(0, lambda - 1), lambda / 2]`. Near-ties (within
/// [`RATE_TIE_TOL`]) resolve to the larger, more homogeneous `q`.
pub fn exhaustive_two_user<D: FadingModel>(
    model: &D,
    lambda: f64,
    grid_points: usize,
) -> Result<TwoUserScan, OptimizerError> {
    exhaustive_two_user_with(model, lambda, grid_points, QuadratureSpec::default())
}

pub fn exhaustive_two_user_with<D: FadingModel>(
    model: &D,
    lambda: f64,
    grid_points: usize,
    quadrature: QuadratureSpec,
) -> Result<TwoUserScan, OptimizerError> {
    check_budget(2, lambda)?;
    if grid_points < 11 {
        return Err(OptimizerError::InvalidOptions("grid_points must be >= 11"));
    }
    let objective = Objective {
        rates: Rates::new(model).with_quadrature(quadrature),
    };
    let lo = (lambda - 1.0).max(0.0);
    let hi = lambda / 2.0;
    let last = grid_points - 1;
    let curve = (0..grid_points)
        .into_par_iter()
        .map(|k| {
            let q = if k == last {
                hi
            } else {
                lo + (hi - lo) * k as f64 / last as f64
            };
            let p = [(lambda - q).min(1.0), q];
            Ok((q, objective.eval(&p)?))
        })
        .collect::<Result<Vec<_>, OptimizerError>>()?;
    let max = curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let &(best_q, best_rate) = curve
        .iter()
        .rev()
        .find(|c| c.1 >= max - RATE_TIE_TOL)
        .expect("non-empty curve");
    Ok(TwoUserScan {
        best_q,
        best_rate,
        curve,
    })
}
