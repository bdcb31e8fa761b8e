//! Reading the pointer state off recorded outcomes.
//!
//! A run's outcome frequencies approach the column `p(·|γ)` of the pointer it
//! collapses to, so the pointer is picked by minimum relative entropy between
//! the empirical frequencies and each candidate column (the multinomial
//! maximum-likelihood choice). Under a cyclic schedule outcomes are binned by
//! phase and the per-phase divergences are summed with weights `n_k / N`.
//! Across many independent runs the identified pointers estimate `q_0`.

use serde::Serialize;
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::info::kl_divergence;
use crate::kernel::{KernelError, KernelSchedule};
use crate::simplex::{bayes_update, SimplexState};

/// Relative gap below which two divergences count as tied.
pub const TIE_TOL: f64 = 1e-12;
/// Joint coverage of the `q̂_0` intervals (the 3σ normal level).
pub const DEFAULT_CONFIDENCE: f64 = 0.9973;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("pointers {0:?} cannot be told apart by the schedule")]
    DegenerateKernel(Vec<(usize, usize)>),
    #[error("histogram has {got} phases, schedule period is {period}")]
    PhaseMismatch { got: usize, period: usize },
    #[error("histogram has {got} outcomes, kernel has {expected}")]
    OutcomeCount { got: usize, expected: usize },
    #[error("recorded outcomes are impossible under every pointer")]
    NoCompatiblePointer,
    #[error("no runs to reconstruct from")]
    NoRuns,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Outcome counts, one row per schedule phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyHistogram {
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl FrequencyHistogram {
    /// Single-phase histogram.
    pub fn pooled(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        FrequencyHistogram { counts: vec![counts], total }
    }

    /// Bins `outcomes[k]` (taken at step `start_step + k`) by `step % period`.
    pub fn from_outcomes(outcomes: &[usize], n_outcomes: usize, start_step: u64, period: usize) -> Self {
        let period = period.max(1);
        let mut counts = vec![vec![0u64; n_outcomes]; period];
        for (k, &i) in outcomes.iter().enumerate() {
            counts[((start_step + k as u64) % period as u64) as usize][i] += 1;
        }
        FrequencyHistogram { counts, total: outcomes.len() as u64 }
    }

    pub fn phases(&self) -> usize {
        self.counts.len()
    }

    /// Counts summed over phases.
    pub fn outcome_totals(&self) -> Vec<u64> {
        let mut totals = vec![0; self.counts.first().map_or(0, Vec::len)];
        for row in &self.counts {
            for (t, c) in totals.iter_mut().zip(row) {
                *t += c;
            }
        }
        totals
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Identification {
    pub pointer: usize,
    /// Second-smallest minus smallest divergence; `inf` with a single finite candidate.
    pub margin: f64,
    pub tie: bool,
    /// Weighted divergence of the histogram from each pointer's columns, in nats.
    pub divergences: Vec<f64>,
}

/// Minimum-divergence pointer for `histogram` under `schedule`.
///
/// A one-phase histogram under a longer cycle is compared with the
/// schedule-averaged columns.
pub fn identify_pointer(
    histogram: &FrequencyHistogram,
    schedule: &KernelSchedule,
) -> Result<Identification, InferenceError> {
    let degenerate = schedule.degenerate_pairs(schedule.base().degeneracy_tol())?;
    if !degenerate.is_empty() {
        return Err(InferenceError::DegenerateKernel(degenerate));
    }
    let n_out = schedule.n_outcomes();
    if let Some(row) = histogram.counts.iter().find(|r| r.len() != n_out) {
        return Err(InferenceError::OutcomeCount { got: row.len(), expected: n_out });
    }
    let period = schedule.period().ok_or(KernelError::NotPeriodic)?;
    let columns: Vec<Vec<Vec<f64>>> = if histogram.phases() == period {
        let kernels = schedule.kernels_over_period()?;
        (0..schedule.n_pointers()).map(|g| kernels.iter().map(|k| k.column(g).to_vec()).collect()).collect()
    } else if histogram.phases() == 1 {
        (0..schedule.n_pointers()).map(|g| schedule.mean_column(g).map(|c| vec![c])).collect::<Result<_, _>>()?
    } else {
        return Err(InferenceError::PhaseMismatch { got: histogram.phases(), period });
    };

    let divergences: Vec<f64> = columns.iter().map(|per_phase| weighted_divergence(histogram, per_phase)).collect();
    pick(divergences)
}

fn weighted_divergence(histogram: &FrequencyHistogram, columns: &[Vec<f64>]) -> f64 {
    if histogram.total == 0 {
        return 0.0;
    }
    let total = histogram.total as f64;
    histogram
        .counts
        .iter()
        .zip(columns)
        .filter(|(row, _)| row.iter().any(|&c| c > 0))
        .map(|(row, col)| {
            let n_k: u64 = row.iter().sum();
            let freq: Vec<f64> = row.iter().map(|&c| c as f64 / n_k as f64).collect();
            n_k as f64 / total * kl_divergence(&freq, col)
        })
        .sum()
}

fn pick(divergences: Vec<f64>) -> Result<Identification, InferenceError> {
    let best = divergences
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (g, &d)| match acc {
            Some((_, bd)) if d >= bd => acc,
            _ => Some((g, d)),
        })
        .filter(|(_, d)| d.is_finite())
        .ok_or(InferenceError::NoCompatiblePointer)?;
    let (pointer, d_best) = best;
    let second =
        divergences.iter().enumerate().filter(|&(g, _)| g != pointer).map(|(_, &d)| d).fold(f64::INFINITY, f64::min);
    let margin = second - d_best;
    let tie = margin <= TIE_TOL * d_best.abs().max(1.0);
    Ok(Identification { pointer, margin, tie, divergences })
}

/// Posterior sequence `q_prior, q_1, …` from recorded outcomes; the first
/// outcome is applied at step `prior.step`.
pub fn replay_posterior(
    outcomes: &[usize],
    schedule: &KernelSchedule,
    prior: &SimplexState,
) -> Result<Vec<SimplexState>, KernelError> {
    let mut states = Vec::with_capacity(outcomes.len() + 1);
    states.push(prior.clone());
    for &i in outcomes {
        let current = states.last().expect("states starts non-empty");
        let kernel = schedule.kernel_at(current.step)?;
        let next = bayes_update(&kernel, current, i)?;
        states.push(next);
    }
    Ok(states)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayAnalysis {
    pub identification: Identification,
    /// Argmax of the final posterior.
    pub posterior_pointer: usize,
    pub posterior_max: f64,
    pub steps: u64,
    /// True when the identified pointer had zero prior weight; the posterior can never reach it.
    pub unreachable: bool,
}

/// Replays `outcomes` from `prior` and identifies the pointer from the same record.
pub fn analyze_run(
    outcomes: &[usize],
    schedule: &KernelSchedule,
    prior: &SimplexState,
) -> Result<(Vec<SimplexState>, ReplayAnalysis), InferenceError> {
    let states = replay_posterior(outcomes, schedule, prior)?;
    let period = schedule.period().unwrap_or(1);
    let histogram = FrequencyHistogram::from_outcomes(outcomes, schedule.n_outcomes(), prior.step, period);
    let identification = identify_pointer(&histogram, schedule)?;
    let unreachable = prior.q[identification.pointer] == 0.0;
    if unreachable {
        log::warn!("identified pointer {} has zero prior weight; its posterior stays at 0", identification.pointer);
    }
    let (posterior_pointer, posterior_max) = states.last().expect("non-empty").argmax();
    let analysis =
        ReplayAnalysis { identification, posterior_pointer, posterior_max, steps: outcomes.len() as u64, unreachable };
    Ok((states, analysis))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionResult {
    pub runs: usize,
    pub identified: Vec<usize>,
    pub counts: Vec<u64>,
    pub q_hat: Vec<f64>,
    /// Clopper-Pearson bounds per pointer, Bonferroni-adjusted to joint `confidence`.
    pub intervals: Vec<(f64, f64)>,
    pub confidence: f64,
    pub divergences: Vec<Vec<f64>>,
}

/// `q̂_0(α)` = fraction of runs identified as `α`.
pub fn reconstruct_q0(
    runs: &[Identification],
    n_pointers: usize,
    confidence: f64,
) -> Result<ReconstructionResult, InferenceError> {
    if runs.is_empty() {
        return Err(InferenceError::NoRuns);
    }
    let n = runs.len() as u64;
    let mut counts = vec![0u64; n_pointers];
    for r in runs {
        counts[r.pointer] += 1;
    }
    let alpha = (1.0 - confidence) / n_pointers as f64;
    Ok(ReconstructionResult {
        runs: runs.len(),
        identified: runs.iter().map(|r| r.pointer).collect(),
        q_hat: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        intervals: counts.iter().map(|&c| clopper_pearson(c, n, alpha)).collect(),
        counts,
        confidence,
        divergences: runs.iter().map(|r| r.divergences.clone()).collect(),
    })
}

/// Exact binomial interval with two-sided level `1 - alpha`.
pub fn clopper_pearson(successes: u64, trials: u64, alpha: f64) -> (f64, f64) {
    let (x, n) = (successes as f64, trials as f64);
    let lower =
        if successes == 0 { 0.0 } else { Beta::new(x, n - x + 1.0).expect("positive shape").inverse_cdf(alpha / 2.0) };
    let upper = if successes == trials {
        1.0
    } else {
        Beta::new(x + 1.0, n - x).expect("positive shape").inverse_cdf(1.0 - alpha / 2.0)
    };
    (lower, upper)
}
