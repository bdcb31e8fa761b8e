//! Single trajectories of the measurement chain: sampling, stopping rules,
//! decay-rate fits and basin-escape detection.
//!
//! Each trajectory draws from its own ChaCha8 stream selected by
//! `(seed, index)`, so a trajectory's outcomes do not depend on which worker
//! runs it or in what order.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{KernelError, KernelSchedule};
use crate::simplex::{bayes_update, outcome_distribution, SimplexState};

pub const DEFAULT_COLLAPSE_THRESHOLD: f64 = 1.0 - 1e-6;
pub const DEFAULT_BASIN_THRESHOLD: f64 = 0.95;
pub const DEFAULT_FIT_WINDOW: u64 = 1000;

/// `q(γ)` at which the linearized recursion is taken to hold; rate fits start here.
pub const LINEARIZATION_ENTRY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("fit window holds {points} usable points, need at least 3")]
    InsufficientWindow { points: usize },
    #[error("trajectory did not collapse to pointer {0}")]
    NotCollapsedTo(usize),
    #[error("log q is not finite at step {0}")]
    NonFiniteLog(u64),
    #[error("failed to build worker pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub schedule: KernelSchedule,
    pub q0: SimplexState,
    pub max_steps: u64,
    pub collapse_threshold: f64,
    /// Snapshot spacing in steps; the initial and final states are always kept.
    pub record_every: u64,
    pub seed: u64,
    pub n_trajectories: usize,
    /// Stop at the first step that crosses `collapse_threshold`. When false,
    /// every trajectory runs to `max_steps` (needed for long rate-fit windows).
    pub stop_on_collapse: bool,
    pub basin_threshold: f64,
    /// Maximum rate-fit window length, in steps.
    pub fit_window: u64,
}

impl SimConfig {
    pub fn new(schedule: KernelSchedule, q0: SimplexState) -> Self {
        SimConfig {
            schedule,
            q0,
            max_steps: 1000,
            collapse_threshold: DEFAULT_COLLAPSE_THRESHOLD,
            record_every: 1,
            seed: 0,
            n_trajectories: 1000,
            stop_on_collapse: true,
            basin_threshold: DEFAULT_BASIN_THRESHOLD,
            fit_window: DEFAULT_FIT_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.q0.len() != self.schedule.n_pointers() {
            return Err(TrajectoryError::InvalidConfig(format!(
                "q0 has {} entries, kernel has {} pointers",
                self.q0.len(),
                self.schedule.n_pointers()
            )));
        }
        if !(self.collapse_threshold > 0.5 && self.collapse_threshold < 1.0) {
            return Err(TrajectoryError::InvalidConfig("collapse_threshold must lie in (0.5, 1)".into()));
        }
        if !(self.basin_threshold > 0.5 && self.basin_threshold < 1.0) {
            return Err(TrajectoryError::InvalidConfig("basin_threshold must lie in (0.5, 1)".into()));
        }
        if self.record_every == 0 {
            return Err(TrajectoryError::InvalidConfig("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    Collapsed(usize),
    MaxSteps,
    Failed { step: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub index: usize,
    pub seed: u64,
    /// `outcomes[n]` is the outcome observed going from step `n` to `n + 1`.
    pub outcomes: Vec<usize>,
    pub snapshots: Vec<SimplexState>,
    pub stop_reason: StopReason,
    pub step_count: u64,
    pub first_collapse_step: Option<u64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &SimplexState {
        self.snapshots.last().expect("trajectory always holds its initial state")
    }

    /// Collapse pointer, or the argmax of the final state when not collapsed.
    pub fn final_pointer(&self) -> usize {
        match self.stop_reason {
            StopReason::Collapsed(g) => g,
            _ => self.final_state().argmax().0,
        }
    }

    pub fn collapsed(&self) -> bool {
        matches!(self.stop_reason, StopReason::Collapsed(_))
    }
}

/// Per-trajectory RNG stream, a pure function of `(seed, index)`.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Inverse-CDF draw over the fixed outcome order. Zero-probability outcomes are never returned.
pub fn sample_outcome<R: Rng + ?Sized>(pi: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let total: f64 = pi.iter().sum();
    let target = u * total;
    let mut cdf = 0.0;
    let mut last_positive = 0;
    for (i, &p) in pi.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cdf += p;
        last_positive = i;
        if target < cdf {
            return i;
        }
    }
    last_positive
}

pub fn run_trajectory(config: &SimConfig, index: usize) -> Trajectory {
    let mut rng = trajectory_rng(config.seed, index);
    let mut state = config.q0.clone();
    let mut snapshots = vec![state.clone()];
    let mut outcomes = Vec::new();
    let mut failure = None;
    let mut first_collapse_step = (state.argmax().1 >= config.collapse_threshold).then_some(0);

    if !(first_collapse_step.is_some() && config.stop_on_collapse) {
        for _ in 0..config.max_steps {
            let next = config.schedule.kernel_at(state.step).and_then(|kernel| {
                let pi = outcome_distribution(&kernel, &state)?;
                let i = sample_outcome(&pi, &mut rng);
                bayes_update(&kernel, &state, i).map(|s| (i, s))
            });
            let (i, next) = match next {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(StopReason::Failed { step: state.step, reason: e.to_string() });
                    break;
                }
            };
            outcomes.push(i);
            state = next;
            if state.step.is_multiple_of(config.record_every) {
                snapshots.push(state.clone());
            }
            if state.argmax().1 >= config.collapse_threshold {
                first_collapse_step.get_or_insert(state.step);
                if config.stop_on_collapse {
                    break;
                }
            }
        }
    }
    if snapshots.last().map(|s| s.step) != Some(state.step) {
        snapshots.push(state.clone());
    }
    let stop_reason = failure.unwrap_or_else(|| {
        let (g, v) = state.argmax();
        if v >= config.collapse_threshold {
            StopReason::Collapsed(g)
        } else {
            StopReason::MaxSteps
        }
    });
    Trajectory {
        index,
        seed: config.seed,
        outcomes,
        step_count: state.step,
        snapshots,
        stop_reason,
        first_collapse_step,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Ordinary least squares slope of `y` against `x` with its standard error.
pub fn fit_log_slope(points: &[(f64, f64)]) -> Result<DecayFit, TrajectoryError> {
    let n = points.len();
    if n < 3 {
        return Err(TrajectoryError::InsufficientWindow { points: n });
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (ssr / (nf - 2.0) / sxx).sqrt();
    Ok(DecayFit { slope, stderr, points: n })
}

/// Slope of `ln q_n(α)` over recorded steps in `window` for a trajectory that collapsed to `γ`.
pub fn fit_decay_rate(
    trajectory: &Trajectory,
    gamma: usize,
    alpha: usize,
    window: Range<u64>,
) -> Result<DecayFit, TrajectoryError> {
    if trajectory.stop_reason != StopReason::Collapsed(gamma) {
        return Err(TrajectoryError::NotCollapsedTo(gamma));
    }
    let mut points = Vec::new();
    for s in trajectory.snapshots.iter().filter(|s| window.contains(&s.step)) {
        let l = s.logq[alpha];
        if !l.is_finite() {
            return Err(TrajectoryError::NonFiniteLog(s.step));
        }
        points.push((s.step as f64, l));
    }
    fit_log_slope(&points)
}

/// Fit window for pointer `γ`: from the first recorded step with
/// `q(γ) ≥ LINEARIZATION_ENTRY`, at most `max_len` steps long.
pub fn fit_window_for(trajectory: &Trajectory, gamma: usize, max_len: u64) -> Option<Range<u64>> {
    let start = trajectory.snapshots.iter().find(|s| s.q[gamma] >= LINEARIZATION_ENTRY)?.step;
    let end = (start + max_len).min(trajectory.step_count);
    Some(start..end + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Escape {
    pub enter_step: u64,
    pub exit_step: u64,
    pub from: usize,
}

/// Visits to the basin `q(γ) ≥ basin_threshold` of some `γ` that were left
/// again, for pointers other than the one the trajectory finally settles on.
pub fn detect_escapes(trajectory: &Trajectory, basin_threshold: f64) -> Vec<Escape> {
    let final_pointer = trajectory.final_pointer();
    let mut escapes = Vec::new();
    let mut inside: Option<(usize, u64)> = None;
    for s in &trajectory.snapshots {
        let (g, v) = s.argmax();
        match inside {
            Some((from, enter)) if s.q[from] < basin_threshold => {
                if from != final_pointer {
                    escapes.push(Escape { enter_step: enter, exit_step: s.step, from });
                }
                inside = (v >= basin_threshold).then_some((g, s.step));
            }
            Some(_) => {}
            None if v >= basin_threshold => inside = Some((g, s.step)),
            None => {}
        }
    }
    escapes
}
