//! Ensembles of independent trajectories and their aggregated statistics.
//!
//! Trajectories run in parallel in fixed-size chunks; each chunk's summaries
//! are folded into the accumulators sequentially in trajectory order, so the
//! report is bit-identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::info::rate_table_schedule;
use crate::trajectory::{
    detect_escapes, fit_decay_rate, fit_window_for, run_trajectory, SimConfig, StopReason, Trajectory, TrajectoryError,
};

const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BornRow {
    pub pointer: String,
    pub expected: f64,
    /// Collapsed trajectories plus non-collapsed ones assigned by argmax.
    pub count: u64,
    pub assigned_uncollapsed: u64,
    pub frequency: f64,
    /// Binomial standard deviation of the frequency under the expected probability.
    pub sigma: f64,
    pub within_3sigma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheck {
    pub steps: Vec<u64>,
    /// `mean[k][α]`: ensemble mean of `q_n(α)` at `steps[k]` (stopped trajectories hold their final state).
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub max_abs_z: f64,
    pub within_3sigma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFitRow {
    pub gamma: String,
    pub alpha: String,
    pub trajectories: u64,
    pub mean_slope: f64,
    pub stderr: f64,
    /// `-S(γ|α)` averaged over the schedule period, when defined.
    pub expected_slope: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeHistogram {
    pub trajectory: usize,
    pub final_pointer: usize,
    pub collapsed: bool,
    pub steps: u64,
    pub counts: Vec<u64>,
    /// Counts within 3σ of their expectation given the final pointer.
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeEvent {
    pub trajectory: usize,
    pub enter_step: u64,
    pub exit_step: u64,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub seed: u64,
    pub n_trajectories: usize,
    pub max_steps: u64,
    pub collapse_threshold: f64,
    pub basin_threshold: f64,
    pub pointers: Vec<String>,
    pub outcomes: Vec<String>,
    pub q0: Vec<f64>,
    pub collapse_counts: Vec<u64>,
    pub uncollapsed: u64,
    pub failed: u64,
    pub born: Vec<BornRow>,
    pub martingale: MartingaleCheck,
    pub rates: Vec<RateFitRow>,
    pub frequency_within_band: u64,
    pub frequency_tested: u64,
    pub histograms: Vec<OutcomeHistogram>,
    pub escapes: Vec<EscapeEvent>,
}

impl EnsembleReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn rate(&self, gamma: usize, alpha: usize) -> Option<&RateFitRow> {
        self.rates.iter().find(|r| r.gamma == self.pointers[gamma] && r.alpha == self.pointers[alpha])
    }
}

struct Summary {
    index: usize,
    stop_reason: StopReason,
    final_pointer: usize,
    grid_values: Vec<Vec<f64>>,
    slopes: Vec<(usize, f64)>,
    histogram: OutcomeHistogram,
    escapes: Vec<crate::trajectory::Escape>,
}

fn grid_steps(config: &SimConfig) -> Vec<u64> {
    let mut steps: Vec<u64> = (0..=config.max_steps).step_by(config.record_every as usize).collect();
    if steps.last() != Some(&config.max_steps) {
        steps.push(config.max_steps);
    }
    steps
}

fn summarize(config: &SimConfig, grid: &[u64], t: Trajectory) -> Result<Summary, TrajectoryError> {
    // value at grid step n: latest snapshot at or before n (the stopped process)
    let mut grid_values = Vec::with_capacity(grid.len());
    let mut cursor = 0;
    for &n in grid {
        while cursor + 1 < t.snapshots.len() && t.snapshots[cursor + 1].step <= n {
            cursor += 1;
        }
        grid_values.push(t.snapshots[cursor].q.clone());
    }

    let final_pointer = t.final_pointer();
    let mut slopes = Vec::new();
    if let StopReason::Collapsed(g) = t.stop_reason {
        if let Some(window) = fit_window_for(&t, g, config.fit_window) {
            for a in (0..config.q0.len()).filter(|&a| a != g) {
                if let Ok(fit) = fit_decay_rate(&t, g, a, window.clone()) {
                    slopes.push((a, fit.slope));
                }
            }
        }
    }

    let n_out = config.schedule.n_outcomes();
    let mut counts = vec![0u64; n_out];
    for &i in &t.outcomes {
        counts[i] += 1;
    }
    let mut expected = vec![0.0; n_out];
    let mut variance = vec![0.0; n_out];
    for step in 0..t.outcomes.len() as u64 {
        let kernel = config.schedule.kernel_at(step)?;
        for (i, p) in kernel.column(final_pointer).iter().enumerate() {
            expected[i] += p;
            variance[i] += p * (1.0 - p);
        }
    }
    let within_band = counts
        .iter()
        .zip(expected.iter().zip(&variance))
        .all(|(&c, (e, v))| (c as f64 - e).abs() <= 3.0 * v.sqrt() + 1e-9);

    let escapes = detect_escapes(&t, config.basin_threshold);
    Ok(Summary {
        index: t.index,
        final_pointer,
        histogram: OutcomeHistogram {
            trajectory: t.index,
            final_pointer,
            collapsed: t.collapsed(),
            steps: t.step_count,
            counts,
            within_band,
        },
        stop_reason: t.stop_reason,
        grid_values,
        slopes,
        escapes,
    })
}

/// Runs `config.n_trajectories` trajectories on `threads` workers (0 = rayon default).
pub fn run_ensemble(config: &SimConfig, threads: usize) -> Result<EnsembleReport, TrajectoryError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| TrajectoryError::ThreadPool(e.to_string()))?;

    let n_ptr = config.q0.len();
    let grid = grid_steps(config);
    let mut acc = Accumulator::new(n_ptr, grid.len());
    let mut start = 0;
    while start < config.n_trajectories {
        let end = (start + CHUNK).min(config.n_trajectories);
        let summaries: Vec<Summary> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|idx| summarize(config, &grid, run_trajectory(config, idx)))
                .collect::<Result<_, _>>()
        })?;
        for s in summaries {
            acc.add(s);
        }
        start = end;
    }
    acc.finish(config, grid)
}

struct Accumulator {
    collapse_counts: Vec<u64>,
    assigned: Vec<u64>,
    uncollapsed: u64,
    failed: u64,
    sum: Vec<Vec<f64>>,
    sum_sq: Vec<Vec<f64>>,
    slope_sum: Vec<Vec<f64>>,
    slope_sq: Vec<Vec<f64>>,
    slope_n: Vec<Vec<u64>>,
    histograms: Vec<OutcomeHistogram>,
    escapes: Vec<(usize, crate::trajectory::Escape, usize)>,
}

impl Accumulator {
    fn new(n_ptr: usize, grid_len: usize) -> Self {
        Accumulator {
            collapse_counts: vec![0; n_ptr],
            assigned: vec![0; n_ptr],
            uncollapsed: 0,
            failed: 0,
            sum: vec![vec![0.0; n_ptr]; grid_len],
            sum_sq: vec![vec![0.0; n_ptr]; grid_len],
            slope_sum: vec![vec![0.0; n_ptr]; n_ptr],
            slope_sq: vec![vec![0.0; n_ptr]; n_ptr],
            slope_n: vec![vec![0; n_ptr]; n_ptr],
            histograms: Vec::new(),
            escapes: Vec::new(),
        }
    }

    fn add(&mut self, s: Summary) {
        match s.stop_reason {
            StopReason::Collapsed(g) => self.collapse_counts[g] += 1,
            StopReason::MaxSteps => {
                self.uncollapsed += 1;
                self.assigned[s.final_pointer] += 1;
            }
            StopReason::Failed { .. } => self.failed += 1,
        }
        for (k, q) in s.grid_values.iter().enumerate() {
            for (a, v) in q.iter().enumerate() {
                self.sum[k][a] += v;
                self.sum_sq[k][a] += v * v;
            }
        }
        for (a, slope) in s.slopes {
            let g = s.final_pointer;
            self.slope_sum[g][a] += slope;
            self.slope_sq[g][a] += slope * slope;
            self.slope_n[g][a] += 1;
        }
        for e in s.escapes {
            self.escapes.push((s.index, e, s.final_pointer));
        }
        self.histograms.push(s.histogram);
    }

    fn finish(self, config: &SimConfig, grid: Vec<u64>) -> Result<EnsembleReport, TrajectoryError> {
        let n = config.n_trajectories as f64;
        let kernel = config.schedule.base();
        let labels = kernel.pointer_labels().to_vec();
        let n_ptr = labels.len();

        let classified = (config.n_trajectories as u64 - self.failed) as f64;
        let born = (0..n_ptr)
            .map(|a| {
                let expected = config.q0.q[a];
                let count = self.collapse_counts[a] + self.assigned[a];
                let frequency = if classified > 0.0 { count as f64 / classified } else { 0.0 };
                let sigma = (expected * (1.0 - expected) / classified.max(1.0)).sqrt();
                BornRow {
                    pointer: labels[a].clone(),
                    expected,
                    count,
                    assigned_uncollapsed: self.assigned[a],
                    frequency,
                    sigma,
                    within_3sigma: (frequency - expected).abs() <= 3.0 * sigma + 1e-12,
                }
            })
            .collect();

        let mut mean = Vec::with_capacity(grid.len());
        let mut std = Vec::with_capacity(grid.len());
        let mut max_abs_z: f64 = 0.0;
        for (s, sq) in self.sum.iter().zip(&self.sum_sq) {
            let m: Vec<f64> = s.iter().map(|v| v / n).collect();
            let sd: Vec<f64> = sq
                .iter()
                .zip(&m)
                .map(|(v, mu)| if n > 1.0 { ((v - n * mu * mu) / (n - 1.0)).max(0.0).sqrt() } else { 0.0 })
                .collect();
            for a in 0..n_ptr {
                let diff = (m[a] - config.q0.q[a]).abs();
                let z = if sd[a] > 0.0 {
                    diff / (sd[a] / n.sqrt())
                } else if diff <= 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                };
                max_abs_z = max_abs_z.max(z);
            }
            mean.push(m);
            std.push(sd);
        }

        let averaged = config.schedule.period().map(|_| rate_table_schedule(&config.schedule)).transpose()?;
        let mut rates = Vec::new();
        for g in 0..n_ptr {
            for a in 0..n_ptr {
                let k = self.slope_n[g][a];
                if g == a || k == 0 {
                    continue;
                }
                let kf = k as f64;
                let mean_slope = self.slope_sum[g][a] / kf;
                let var = if k > 1 {
                    ((self.slope_sq[g][a] - kf * mean_slope * mean_slope) / (kf - 1.0)).max(0.0)
                } else {
                    0.0
                };
                let expected_slope = averaged.as_ref().map(|t| -t.entropy[g][a]).filter(|v| v.is_finite());
                rates.push(RateFitRow {
                    gamma: labels[g].clone(),
                    alpha: labels[a].clone(),
                    trajectories: k,
                    mean_slope,
                    stderr: (var / kf).sqrt(),
                    expected_slope,
                    relative_error: expected_slope.map(|e| ((mean_slope - e) / e).abs()),
                });
            }
        }

        let tested: Vec<&OutcomeHistogram> = self.histograms.iter().filter(|h| h.collapsed).collect();
        let escapes = self
            .escapes
            .into_iter()
            .map(|(trajectory, e, to)| EscapeEvent {
                trajectory,
                enter_step: e.enter_step,
                exit_step: e.exit_step,
                from: labels[e.from].clone(),
                to: labels[to].clone(),
            })
            .collect();

        Ok(EnsembleReport {
            seed: config.seed,
            n_trajectories: config.n_trajectories,
            max_steps: config.max_steps,
            collapse_threshold: config.collapse_threshold,
            basin_threshold: config.basin_threshold,
            pointers: labels,
            outcomes: kernel.outcome_labels().to_vec(),
            q0: config.q0.q.clone(),
            collapse_counts: self.collapse_counts,
            uncollapsed: self.uncollapsed,
            failed: self.failed,
            born,
            martingale: MartingaleCheck { steps: grid, mean, std, max_abs_z, within_3sigma: max_abs_z <= 3.0 },
            rates,
            frequency_within_band: tested.iter().filter(|h| h.within_band).count() as u64,
            frequency_tested: tested.len() as u64,
            histograms: self.histograms,
            escapes,
        })
    }
}
