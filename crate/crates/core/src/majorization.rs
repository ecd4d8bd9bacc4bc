//! Majorization order and the pairwise "pinch" perturbation.
//!
//! `x` majorizes `y` when both have the same total and every partial sum of
//! the descending-sorted `x` dominates the corresponding partial sum of `y`.
//! A function is Schur-concave when it can only grow as its argument moves
//! down this order, and a pinch (moving mass from `z[i+1]` to `z[i]` without
//! reordering) is the elementary step that moves up it.

use rand::Rng;
use thiserror::Error;

/// Absolute slack on every partial-sum comparison.
pub const MAJORIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MajorizationError {
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("probability vector must be non-empty")]
    Empty,
    #[error("component {index} = {value} is outside [0, 1]")]
    OutOfUnitInterval { index: usize, value: f64 },
    #[error("pinch index {index} out of range for length {len}")]
    BadIndex { index: usize, len: usize },
    #[error("vector is not sorted in descending order")]
    NotSorted,
    #[error("epsilon {epsilon} outside admissible range [0, {max}]")]
    InadmissibleEpsilon { epsilon: f64, max: f64 },
}

/// Per-user feedback probabilities, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self, MajorizationError> {
        if p.is_empty() {
            return Err(MajorizationError::Empty);
        }
        if let Some((index, &value)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(MajorizationError::OutOfUnitInterval { index, value });
        }
        Ok(Self(p))
    }

    pub fn uniform(n: usize, total: f64) -> Result<Self, MajorizationError> {
        Self::new(vec![total / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Population variance of the components.
    pub fn variance(&self) -> f64 {
        let n = self.0.len() as f64;
        let mean = self.sum() / n;
        self.0.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n
    }

    /// Copy sorted in descending order.
    pub fn sorted_desc(&self) -> Self {
        let mut v = self.0.clone();
        v.sort_by(|a, b| b.total_cmp(a));
        Self(v)
    }
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Whether `x` majorizes `y`.
pub fn majorizes(x: &[f64], y: &[f64]) -> Result<bool, MajorizationError> {
    if x.len() != y.len() {
        return Err(MajorizationError::LengthMismatch(x.len(), y.len()));
    }
    let xs = sorted_desc(x);
    let ys = sorted_desc(y);
    let (mut sx, mut sy) = (0.0, 0.0);
    let n = xs.len();
    for j in 0..n {
        sx += xs[j];
        sy += ys[j];
        if j + 1 < n && sx < sy - MAJORIZATION_TOL {
            return Ok(false);
        }
    }
    Ok((sx - sy).abs() <= MAJORIZATION_TOL)
}

/// Largest admissible pinch size at pair `(i, i+1)` of a descending vector.
///
/// Interior pairs are bounded by their neighbours so the order is kept. At
/// the ends the missing neighbour is replaced by the unit-interval bound.
pub fn max_pinch(z: &ProbVector, i: usize) -> Result<f64, MajorizationError> {
    let v = z.as_slice();
    let n = v.len();
    if n < 2 || i + 1 >= n {
        return Err(MajorizationError::BadIndex { index: i, len: n });
    }
    if v.windows(2).any(|w| w[0] < w[1]) {
        return Err(MajorizationError::NotSorted);
    }
    let left = if i == 0 { 1.0 - v[0] } else { v[i - 1] - v[i] };
    let right = if i + 2 == n { v[i + 1] } else { v[i + 1] - v[i + 2] };
    Ok(left.min(right))
}

/// Returns `(z_1, .., z_i + eps, z_{i+1} - eps, .., z_n)` for descending `z`.
///
/// `i` is zero-based. The pair sum `z_i + z_{i+1}` is reproduced exactly.
pub fn pinch(z: &ProbVector, i: usize, epsilon: f64) -> Result<ProbVector, MajorizationError> {
    let max = max_pinch(z, i)?;
    if !(0.0..=max).contains(&epsilon) {
        return Err(MajorizationError::InadmissibleEpsilon { epsilon, max });
    }
    let mut v = z.as_slice().to_vec();
    transfer(&mut v, i + 1, i, epsilon);
    ProbVector::new(v)
}

/// Moves `amount` from `v[from]` to `v[to]`; the pair sum is preserved exactly
/// as long as `v[to] + amount` stays the larger of the two.
fn transfer(v: &mut [f64], from: usize, to: usize, amount: f64) {
    if amount == 0.0 {
        return;
    }
    let pair = v[from] + v[to];
    let gained = (v[to] + amount).min(pair);
    v[to] = gained;
    v[from] = pair - gained;
}

/// Random point of `[0, 1]^n` with components summing to `total`.
pub fn random_feasible<R: Rng + ?Sized>(rng: &mut R, n: usize, total: f64) -> Vec<f64> {
    let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    water_fill(&weights, total)
}

/// Splits `total` proportionally to `weights`, capping components at 1 and
/// redistributing the excess over the uncapped ones.
pub(crate) fn water_fill(weights: &[f64], total: f64) -> Vec<f64> {
    let n = weights.len();
    let mut out = vec![0.0; n];
    let mut capped = vec![false; n];
    let mut remaining = total;
    loop {
        let free: f64 = (0..n).filter(|&k| !capped[k]).map(|k| weights[k]).sum();
        if free <= 0.0 || remaining <= 0.0 {
            break;
        }
        let mut newly_capped = false;
        for k in 0..n {
            if !capped[k] && remaining * weights[k] / free >= 1.0 {
                capped[k] = true;
                out[k] = 1.0;
                newly_capped = true;
            }
        }
        if newly_capped {
            remaining = total - capped.iter().filter(|&&c| c).count() as f64;
            continue;
        }
        for k in 0..n {
            if !capped[k] {
                out[k] = remaining * weights[k] / free;
            }
        }
        break;
    }
    out
}

/// Draws `(x, y)` with `x` majorizing `y` and equal totals.
///
/// `x` is a random point of `[0,1]^n` summing to `total`; `y` follows from `x`
/// by 1 to 10 Robin-Hood transfers, each moving a random amount from a larger
/// coordinate to a smaller one without letting them cross.
pub fn random_majorization_pair<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    total: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "need at least two coordinates");
    assert!(total > 0.0 && total <= n as f64, "total must lie in (0, n]");
    let x = random_feasible(rng, n, total);
    let mut y = x.clone();
    let transfers = rng.random_range(1..=10);
    for _ in 0..transfers {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (rich, poor) = if y[i] >= y[j] { (i, j) } else { (j, i) };
        let amount = rng.random::<f64>() * 0.5 * (y[rich] - y[poor]);
        robin_hood(&mut y, rich, poor, amount);
    }
    (x, y)
}

fn robin_hood(v: &mut [f64], rich: usize, poor: usize, amount: f64) {
    if amount <= 0.0 {
        return;
    }
    let pair = v[rich] + v[poor];
    let kept = (v[rich] - amount).max(0.5 * pair);
    v[rich] = kept;
    v[poor] = pair - kept;
}
