//! Points on the probability simplex over pointer states and the Bayes
//! recursion `q'(α) = q(α) p(i|α) / π(i)`.
//!
//! Every state carries a log-domain shadow `logq`. Components that decay
//! exponentially stay trackable there long after `q` itself has underflowed,
//! and `logq = -inf` is absorbing.

use serde::{Deserialize, Serialize};

use crate::kernel::{KernelError, MeasurementKernel};

/// Outcomes with `π(i)` at or below this are treated as impossible.
pub const ZERO_PROBABILITY_THRESHOLD: f64 = 1e-300;

/// Tolerance accepted on `Σ q = 1` for caller-supplied points.
pub const INPUT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexState {
    pub q: Vec<f64>,
    pub logq: Vec<f64>,
    pub step: u64,
}

impl SimplexState {
    /// Validates `q` and renormalizes it exactly onto the simplex.
    pub fn new(q: Vec<f64>) -> Result<Self, KernelError> {
        if q.is_empty() {
            return Err(KernelError::InvalidState("empty vector".into()));
        }
        if let Some(bad) = q.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(KernelError::InvalidState(format!("entry {bad} is not a finite non-negative value")));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > INPUT_SUM_TOL {
            return Err(KernelError::InvalidState(format!("entries sum to {sum}")));
        }
        let logq: Vec<f64> = q.iter().map(|v| (v / sum).ln()).collect();
        Ok(Self::from_normalized_logs(logq, 0))
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(vec![1.0 / n as f64; n]).expect("uniform point is valid")
    }

    pub fn one_hot(n: usize, pointer: usize) -> Self {
        let mut q = vec![0.0; n];
        q[pointer] = 1.0;
        Self::new(q).expect("one-hot point is valid")
    }

    /// Rebuilds `q` from log weights, shifting them so that `Σ exp(logq) = 1`.
    fn from_normalized_logs(mut logq: Vec<f64>, step: u64) -> Self {
        let lse = log_sum_exp(&logq);
        for l in logq.iter_mut() {
            *l -= lse;
        }
        let q = logq.iter().map(|l| l.exp()).collect();
        SimplexState { q, logq, step }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Largest component and its pointer (first one on ties).
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0, self.q[0]);
        for (a, &v) in self.q.iter().enumerate().skip(1) {
            if v > best.1 {
                best = (a, v);
            }
        }
        best
    }
}

/// `log Σ exp(x)`, `-inf` for an all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `π(i) = Σ_β q(β) p(i|β)` for every outcome.
pub fn outcome_distribution(kernel: &MeasurementKernel, state: &SimplexState) -> Result<Vec<f64>, KernelError> {
    check_index(kernel, state)?;
    let mut pi = vec![0.0; kernel.n_outcomes()];
    for (b, &qb) in state.q.iter().enumerate() {
        if qb == 0.0 {
            continue;
        }
        for (p, col) in pi.iter_mut().zip(kernel.column(b)) {
            *p += qb * col;
        }
    }
    Ok(pi)
}

/// One step of the measurement recursion after observing `outcome`.
pub fn bayes_update(
    kernel: &MeasurementKernel,
    state: &SimplexState,
    outcome: usize,
) -> Result<SimplexState, KernelError> {
    check_index(kernel, state)?;
    if outcome >= kernel.n_outcomes() {
        return Err(KernelError::OutcomeOutOfRange(outcome));
    }
    let pi: f64 = state.q.iter().enumerate().map(|(b, qb)| qb * kernel.prob(outcome, b)).sum();
    if pi <= ZERO_PROBABILITY_THRESHOLD {
        return Err(KernelError::ZeroProbabilityOutcome(outcome));
    }
    // logq + log p; the shift by log π is folded into the renormalization
    let logq = state.logq.iter().enumerate().map(|(a, l)| l + kernel.log_prob(outcome, a)).collect();
    Ok(SimplexState::from_normalized_logs(logq, state.step + 1))
}

fn check_index(kernel: &MeasurementKernel, state: &SimplexState) -> Result<(), KernelError> {
    if kernel.n_pointers() != state.len() {
        return Err(KernelError::IndexMismatch { kernel: kernel.n_pointers(), state: state.len() });
    }
    Ok(())
}
