//! Event-level simulation of threshold feedback and max-SINR scheduling.
//!
//! Every sample draws a fresh `n x M` SINR matrix, applies each user's
//! threshold, schedules the best reported SINR on each beam and records
//! `sum_m log(1 + best_m)`. These estimates are the independent oracle for
//! the analytic rate functionals.
//!
//! Determinism: samples are split into chunks of [`CHUNK_SIZE`]; chunk `c`
//! draws from ChaCha8 stream `c` of `seed`, and chunk statistics are merged
//! in chunk order. The estimate therefore depends only on `(seed, samples)`,
//! not on how many worker threads evaluate the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::channel::FadingModel;
use crate::rate::ThresholdPolicy;

pub const CHUNK_SIZE: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonteCarloError {
    #[error("at least one sample is required")]
    NoSamples,
    #[error("invalid conditional input: {0}")]
    InvalidInput(String),
}

/// Which beams a user reports once a threshold is cleared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reporting {
    /// Every beam whose SINR clears the threshold.
    #[default]
    AllAboveThreshold,
    /// Only the strongest beam, if it clears the threshold. No analytic
    /// counterpart exists for this mode.
    BestBeamOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    pub mean_rate: f64,
    pub std_error: f64,
    pub mean_load: f64,
    pub load_std_error: f64,
    pub samples: u64,
    pub seed: u64,
    pub beam_rates: Vec<f64>,
    pub beam_std_errors: Vec<f64>,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        self.comp += if self.sum.abs() >= x.abs() {
            (self.sum - t) + x
        } else {
            (x - t) + self.sum
        };
        self.sum = t;
    }

    fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.comp);
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    first: CompensatedSum,
    second: CompensatedSum,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.first.add(x);
        self.second.add(x * x);
    }

    fn merge(&mut self, other: &Self) {
        self.first.merge(&other.first);
        self.second.merge(&other.second);
    }

    /// Mean and standard error of the mean.
    fn summary(&self, n: u64) -> (f64, f64) {
        let nf = n as f64;
        let mean = self.first.value() / nf;
        if n < 2 {
            return (mean, 0.0);
        }
        let var = ((self.second.value() - nf * mean * mean) / (nf - 1.0)).max(0.0);
        (mean, (var / nf).sqrt())
    }
}

#[derive(Debug, Clone, Default)]
struct ChunkStats {
    total: Moments,
    load: Moments,
    beams: Vec<Moments>,
}

impl ChunkStats {
    fn new(beams: usize) -> Self {
        Self {
            beams: vec![Moments::default(); beams],
            ..Default::default()
        }
    }

    fn merge(&mut self, other: &Self) {
        self.total.merge(&other.total);
        self.load.merge(&other.load);
        for (a, b) in self.beams.iter_mut().zip(&other.beams) {
            a.merge(b);
        }
    }
}

fn stream(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Runs `per_chunk` over the chunk index space and merges in chunk order.
fn run_chunks<F>(samples: u64, beams: usize, seed: u64, per_chunk: F) -> ChunkStats
where
    F: Fn(&mut ChaCha8Rng, u64, &mut ChunkStats) + Sync,
{
    let chunks = samples.div_ceil(CHUNK_SIZE);
    let parts: Vec<ChunkStats> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK_SIZE.min(samples - c * CHUNK_SIZE);
            let mut stats = ChunkStats::new(beams);
            per_chunk(&mut stream(seed, c), len, &mut stats);
            stats
        })
        .collect();
    let mut all = ChunkStats::new(beams);
    for part in &parts {
        all.merge(part);
    }
    all
}

fn finish(stats: ChunkStats, samples: u64, seed: u64) -> RateEstimate {
    let (mean_rate, std_error) = stats.total.summary(samples);
    let (mean_load, load_std_error) = stats.load.summary(samples);
    let (beam_rates, beam_std_errors) = stats.beams.iter().map(|m| m.summary(samples)).unzip();
    RateEstimate {
        mean_rate,
        std_error,
        mean_load,
        load_std_error,
        samples,
        seed,
        beam_rates,
        beam_std_errors,
    }
}

/// Estimates the ergodic sum rate and feedback load of `policy`.
pub fn simulate<D: FadingModel>(
    model: &D,
    policy: &ThresholdPolicy,
    samples: u64,
    seed: u64,
) -> Result<RateEstimate, MonteCarloError> {
    simulate_with(model, policy, samples, seed, Reporting::default())
}

pub fn simulate_with<D: FadingModel>(
    model: &D,
    policy: &ThresholdPolicy,
    samples: u64,
    seed: u64,
    reporting: Reporting,
) -> Result<RateEstimate, MonteCarloError> {
    if samples == 0 {
        return Err(MonteCarloError::NoSamples);
    }
    let beams = model.beams();
    let taus = policy.thresholds();
    let stats = run_chunks(samples, beams, seed, |rng, len, stats| {
        let mut row = vec![0.0; beams];
        let mut best = vec![0.0; beams];
        for _ in 0..len {
            best.iter_mut().for_each(|b| *b = 0.0);
            let mut load = 0.0;
            for &tau in taus {
                model.sample_row(rng, &mut row);
                match reporting {
                    Reporting::AllAboveThreshold => {
                        if row[0] >= tau {
                            load += 1.0;
                        }
                        for (b, &g) in best.iter_mut().zip(&row) {
                            // strict: ties stay with the lower user index
                            if g >= tau && g > *b {
                                *b = g;
                            }
                        }
                    }
                    Reporting::BestBeamOnly => {
                        let (k, g) = row
                            .iter()
                            .copied()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |a, c| if c.1 > a.1 { c } else { a });
                        if g >= tau {
                            if k == 0 {
                                load += 1.0;
                            }
                            if g > best[k] {
                                best[k] = g;
                            }
                        }
                    }
                }
            }
            let mut total = 0.0;
            for (m, &b) in best.iter().enumerate() {
                let r = b.ln_1p();
                stats.beams[m].push(r);
                total += r;
            }
            stats.total.push(total);
            stats.load.push(load);
        }
    });
    Ok(finish(stats, samples, seed))
}

/// Estimates `E[log(1 + max(trunc_low, trunc_high, y))]` for two independent
/// beam-1 SINRs truncated at `tau_low` and `tau_high`, with `y` held fixed.
pub fn simulate_pair_conditional<D: FadingModel>(
    model: &D,
    tau_low: f64,
    tau_high: f64,
    y: f64,
    samples: u64,
    seed: u64,
) -> Result<RateEstimate, MonteCarloError> {
    if samples == 0 {
        return Err(MonteCarloError::NoSamples);
    }
    if !(y >= 0.0) || !(tau_low >= 0.0) || !(tau_high >= 0.0) {
        return Err(MonteCarloError::InvalidInput(format!(
            "need y, tau_low, tau_high >= 0; got {y}, {tau_low}, {tau_high}"
        )));
    }
    let beams = model.beams();
    let stats = run_chunks(samples, 1, seed, |rng, len, stats| {
        let mut row = vec![0.0; beams];
        for _ in 0..len {
            let mut best = y;
            let mut load = 0.0;
            for tau in [tau_low, tau_high] {
                model.sample_row(rng, &mut row);
                if row[0] >= tau {
                    load += 1.0;
                    best = best.max(row[0]);
                }
            }
            let r = best.ln_1p();
            stats.beams[0].push(r);
            stats.total.push(r);
            stats.load.push(load);
        }
    });
    Ok(finish(stats, samples, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RayleighModel;
    use crate::rate::{feedback_load, Rates};

    const INF: f64 = f64::INFINITY;

    fn policy(t: &[f64]) -> ThresholdPolicy {
        ThresholdPolicy::new(t.to_vec()).unwrap()
    }

    fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(f)
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-16);
        }
        assert_eq!(s.value(), 1.0 + 1e-15);
    }

    #[test]
    fn silent_policy_has_zero_rate() {
        let d = RayleighModel::new(3, 2.0).unwrap();
        let est = simulate(&d, &policy(&[INF, INF]), 10_000, 1).unwrap();
        assert_eq!(est.mean_rate, 0.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.mean_load, 0.0);
    }

    #[test]
    fn rejects_zero_samples() {
        let d = RayleighModel::new(1, 1.0).unwrap();
        assert_eq!(
            simulate(&d, &policy(&[0.0]), 0, 1),
            Err(MonteCarloError::NoSamples)
        );
        assert!(simulate_pair_conditional(&d, 0.0, 1.0, -1.0, 10, 1).is_err());
    }

    #[test]
    fn single_user_matches_closed_form() {
        let d = RayleighModel::new(1, 1.0).unwrap();
        let est = simulate(&d, &policy(&[0.0]), 1_000_000, 7).unwrap();
        let exact = 0.596_347_362_323_194_1;
        assert!(
            (est.mean_rate - exact).abs() < 3.0 * est.std_error,
            "{} +- {}",
            est.mean_rate,
            est.std_error
        );
        assert_eq!(est.samples, 1_000_000);
        assert_eq!(est.seed, 7);
    }

    #[test]
    fn load_matches_analytic() {
        let d = RayleighModel::new(2, 1.5).unwrap();
        let p = policy(&[0.3, 1.0, 2.5, INF]);
        let est = simulate(&d, &p, 200_000, 3).unwrap();
        let load = feedback_load(&d, &p);
        assert!((est.mean_load - load).abs() < 3.0 * est.load_std_error);
    }

    #[test]
    fn identical_across_worker_counts() {
        let d = RayleighModel::new(3, 4.0).unwrap();
        let p = policy(&[0.5, 1.5, 0.1]);
        // not a multiple of the chunk size on purpose
        let a = in_pool(1, || simulate(&d, &p, 50_001, 99).unwrap());
        let b = in_pool(4, || simulate(&d, &p, 50_001, 99).unwrap());
        let c = in_pool(3, || simulate(&d, &p, 50_001, 99).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.mean_rate.to_bits(), b.mean_rate.to_bits());
        let other = simulate(&d, &p, 50_001, 100).unwrap();
        assert_ne!(a.mean_rate, other.mean_rate);
    }

    #[test]
    fn per_beam_estimates_agree() {
        let d = RayleighModel::new(4, 2.0).unwrap();
        let est = simulate(&d, &policy(&[0.5, 0.8, 1.2]), 200_000, 5).unwrap();
        let sum: f64 = est.beam_rates.iter().sum();
        assert!((sum - est.mean_rate).abs() < 1e-12);
        for i in 0..4 {
            for j in i + 1..4 {
                let gap = (est.beam_rates[i] - est.beam_rates[j]).abs();
                let se = est.beam_std_errors[i].hypot(est.beam_std_errors[j]);
                assert!(gap < 4.0 * se, "beams {i},{j}: {gap} vs {se}");
            }
        }
    }

    #[test]
    fn best_beam_only_reports_less() {
        let d = RayleighModel::new(3, 3.0).unwrap();
        let p = policy(&[0.2, 0.2, 0.2]);
        let all = simulate_with(&d, &p, 20_000, 8, Reporting::AllAboveThreshold).unwrap();
        let best = simulate_with(&d, &p, 20_000, 8, Reporting::BestBeamOnly).unwrap();
        assert!(best.mean_load < all.mean_load);
        assert!(best.mean_rate <= all.mean_rate);
    }

    #[test]
    fn pair_conditional_limits() {
        let d = RayleighModel::new(2, 1.0).unwrap();
        let y = 1e6;
        let est = simulate_pair_conditional(&d, 0.3, 0.8, y, 10_000, 2).unwrap();
        assert!((est.mean_rate - y.ln_1p()).abs() < 1e-3);
        let est = simulate_pair_conditional(&d, INF, INF, 0.0, 10_000, 2).unwrap();
        assert_eq!(est.mean_rate, 0.0);
    }

    #[test]
    fn pair_conditional_matches_r1() {
        let d = RayleighModel::new(1, 1.0).unwrap();
        let r = Rates::new(&d);
        let input = crate::rate::ConditionalRateInput::new(&d, 1.0, 2.0, 0.5).unwrap();
        let exact = r.r1_cond(&input).unwrap();
        let est = simulate_pair_conditional(&d, 1.0, 2.0, 0.5, 1_000_000, 11).unwrap();
        assert!((est.mean_rate - exact).abs() < 3.0 * est.std_error);
    }
}
