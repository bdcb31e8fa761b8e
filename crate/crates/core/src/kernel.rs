//! Measurement kernels `p(i|α)` and per-step kernel schedules.
//!
//! A kernel holds, for every pointer state `α`, the probability distribution
//! of probe outcomes `i`. It is stored column-major by pointer so that the
//! outcome distribution `π(i) = Σ_β q(β) p(i|β)` walks contiguous memory per
//! pointer.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Tolerance on `Σ_i p(i|α) = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Default entrywise tolerance under which two kernel columns are considered equal.
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("kernel matrix is empty")]
    Empty,
    #[error("kernel row {row} has {len} entries, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("non-finite entry at outcome {outcome}, pointer {pointer}")]
    NonFinite { outcome: usize, pointer: usize },
    #[error("negative entry {value} at outcome {outcome}, pointer {pointer}")]
    NegativeEntry { outcome: usize, pointer: usize, value: f64 },
    #[error("column for pointer {pointer} is not normalized (deviation {deviation:e})")]
    RowNotNormalized { pointer: usize, deviation: f64 },
    #[error("{what}: {got} labels for {expected} entries")]
    LabelCount { what: &'static str, got: usize, expected: usize },
    #[error("duplicate {what} label {label:?}")]
    DuplicateLabel { what: &'static str, label: String },
    #[error("index sets differ: kernel has {kernel} pointers, state has {state}")]
    IndexMismatch { kernel: usize, state: usize },
    #[error("outcome {0} is out of range")]
    OutcomeOutOfRange(usize),
    #[error("outcome {0} has zero probability under the current state")]
    ZeroProbabilityOutcome(usize),
    #[error("invalid simplex point: {0}")]
    InvalidState(String),
    #[error("schedule kernel at step {step} has shape {got:?}, expected {expected:?}")]
    ScheduleShape { step: u64, got: (usize, usize), expected: (usize, usize) },
    #[error("schedule is empty")]
    EmptySchedule,
    #[error("schedule has no period; averaged quantities are undefined")]
    NotPeriodic,
}

/// Validated matrix of probe-outcome probabilities `p(i|α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementKernel {
    outcomes: Vec<String>,
    pointers: Vec<String>,
    /// Column-major: entry `(i, α)` at `α * n_outcomes + i`.
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    degeneracy_tol: f64,
    degenerate_pairs: Vec<(usize, usize)>,
}

/// Validates a raw matrix (rows = outcomes, columns = pointers) with default labels.
pub fn validate_kernel(rows: &[Vec<f64>]) -> Result<MeasurementKernel, KernelError> {
    MeasurementKernel::from_rows(rows)
}

impl MeasurementKernel {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, KernelError> {
        let n_out = rows.len();
        let n_ptr = rows.first().map_or(0, Vec::len);
        Self::with_labels(
            (0..n_out).map(|i| i.to_string()).collect(),
            (0..n_ptr).map(|a| a.to_string()).collect(),
            rows,
            DEFAULT_DEGENERACY_TOL,
        )
    }

    /// Builds a kernel from columns (one outcome distribution per pointer).
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self, KernelError> {
        let n_out = columns.first().map_or(0, Vec::len);
        let rows: Vec<Vec<f64>> =
            (0..n_out).map(|i| columns.iter().map(|c| c.get(i).copied().unwrap_or(f64::NAN)).collect()).collect();
        for (a, c) in columns.iter().enumerate() {
            if c.len() != n_out {
                return Err(KernelError::Ragged { row: a, len: c.len(), expected: n_out });
            }
        }
        Self::from_rows(&rows)
    }

    pub fn with_labels(
        outcomes: Vec<String>,
        pointers: Vec<String>,
        rows: &[Vec<f64>],
        degeneracy_tol: f64,
    ) -> Result<Self, KernelError> {
        let n_out = rows.len();
        if n_out == 0 || rows[0].is_empty() {
            return Err(KernelError::Empty);
        }
        let n_ptr = rows[0].len();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n_ptr {
                return Err(KernelError::Ragged { row: r, len: row.len(), expected: n_ptr });
            }
        }
        check_labels("outcome", &outcomes, n_out)?;
        check_labels("pointer", &pointers, n_ptr)?;

        let mut probs = vec![0.0; n_out * n_ptr];
        for (i, row) in rows.iter().enumerate() {
            for (a, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(KernelError::NonFinite { outcome: i, pointer: a });
                }
                if v < 0.0 {
                    return Err(KernelError::NegativeEntry { outcome: i, pointer: a, value: v });
                }
                probs[a * n_out + i] = v;
            }
        }
        for a in 0..n_ptr {
            let sum: f64 = probs[a * n_out..(a + 1) * n_out].iter().sum();
            let deviation = sum - 1.0;
            if deviation.abs() > NORMALIZATION_TOL {
                return Err(KernelError::RowNotNormalized { pointer: a, deviation });
            }
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        let mut kernel =
            MeasurementKernel { outcomes, pointers, probs, log_probs, degeneracy_tol, degenerate_pairs: Vec::new() };
        kernel.degenerate_pairs = check_nondegeneracy(&kernel, degeneracy_tol);
        Ok(kernel)
    }

    /// Same matrix with different labels. Shapes must match.
    pub fn relabeled(&self, outcomes: Vec<String>, pointers: Vec<String>) -> Result<Self, KernelError> {
        check_labels("outcome", &outcomes, self.n_outcomes())?;
        check_labels("pointer", &pointers, self.n_pointers())?;
        Ok(MeasurementKernel { outcomes, pointers, ..self.clone() })
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn n_pointers(&self) -> usize {
        self.pointers.len()
    }

    pub fn outcome_labels(&self) -> &[String] {
        &self.outcomes
    }

    pub fn pointer_labels(&self) -> &[String] {
        &self.pointers
    }

    #[inline]
    pub fn prob(&self, outcome: usize, pointer: usize) -> f64 {
        self.probs[pointer * self.n_outcomes() + outcome]
    }

    #[inline]
    pub fn log_prob(&self, outcome: usize, pointer: usize) -> f64 {
        self.log_probs[pointer * self.n_outcomes() + outcome]
    }

    /// Outcome distribution `p(·|α)`.
    pub fn column(&self, pointer: usize) -> &[f64] {
        let n = self.n_outcomes();
        &self.probs[pointer * n..(pointer + 1) * n]
    }

    /// Matrix in the ingestion layout: rows = outcomes, columns = pointers.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_outcomes()).map(|i| (0..self.n_pointers()).map(|a| self.prob(i, a)).collect()).collect()
    }

    pub fn nondegenerate(&self) -> bool {
        self.degenerate_pairs.is_empty()
    }

    pub fn degenerate_pairs(&self) -> &[(usize, usize)] {
        &self.degenerate_pairs
    }

    pub fn degeneracy_tol(&self) -> f64 {
        self.degeneracy_tol
    }

    pub fn outcome_index(&self, label: &str) -> Option<usize> {
        self.outcomes.iter().position(|l| l == label)
    }

    pub fn pointer_index(&self, label: &str) -> Option<usize> {
        self.pointers.iter().position(|l| l == label)
    }

    /// Reorders pointers: column `a` of the result is column `perm[a]` of `self`.
    pub fn permute_pointers(&self, perm: &[usize]) -> Result<Self, KernelError> {
        let columns: Vec<Vec<f64>> = perm.iter().map(|&a| self.column(a).to_vec()).collect();
        let rows: Vec<Vec<f64>> = (0..self.n_outcomes()).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        let pointers = perm.iter().map(|&a| self.pointers[a].clone()).collect();
        Self::with_labels(self.outcomes.clone(), pointers, &rows, self.degeneracy_tol)
    }
}

fn check_labels(what: &'static str, labels: &[String], expected: usize) -> Result<(), KernelError> {
    if labels.len() != expected {
        return Err(KernelError::LabelCount { what, got: labels.len(), expected });
    }
    for (k, l) in labels.iter().enumerate() {
        if labels[..k].contains(l) {
            return Err(KernelError::DuplicateLabel { what, label: l.clone() });
        }
    }
    Ok(())
}

/// All pointer pairs `(α, β)`, `α < β`, whose columns agree entrywise within `tol`.
pub fn check_nondegeneracy(kernel: &MeasurementKernel, tol: f64) -> Vec<(usize, usize)> {
    let n = kernel.n_pointers();
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let same = kernel.column(a).iter().zip(kernel.column(b)).all(|(x, y)| (x - y).abs() <= tol);
            if same {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Generator for parametric schedules: maps a step index to that step's kernel.
pub type KernelGenerator = Arc<dyn Fn(u64) -> MeasurementKernel + Send + Sync>;

#[derive(Clone)]
pub enum ScheduleMode {
    Fixed,
    Cyclic(Vec<MeasurementKernel>),
    /// Arbitrary per-step kernels. `period`, when known, enables schedule-averaged analysis.
    Parametric {
        generator: KernelGenerator,
        period: Option<usize>,
    },
}

impl fmt::Debug for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleMode::Fixed => write!(f, "Fixed"),
            ScheduleMode::Cyclic(ks) => write!(f, "Cyclic(len={})", ks.len()),
            ScheduleMode::Parametric { period, .. } => write!(f, "Parametric(period={period:?})"),
        }
    }
}

/// The kernel used at each step. All kernels share the same outcome and pointer sets.
#[derive(Debug, Clone)]
pub struct KernelSchedule {
    base: MeasurementKernel,
    mode: ScheduleMode,
}

impl KernelSchedule {
    pub fn fixed(kernel: MeasurementKernel) -> Self {
        KernelSchedule { base: kernel, mode: ScheduleMode::Fixed }
    }

    pub fn cyclic(kernels: Vec<MeasurementKernel>) -> Result<Self, KernelError> {
        let base = kernels.first().cloned().ok_or(KernelError::EmptySchedule)?;
        for (k, kernel) in kernels.iter().enumerate() {
            check_shape(&base, kernel, k as u64)?;
        }
        if kernels.len() == 1 {
            return Ok(Self::fixed(base));
        }
        Ok(KernelSchedule { base, mode: ScheduleMode::Cyclic(kernels) })
    }

    /// `base` fixes the index sets; the generator is checked against it at every step.
    pub fn parametric(base: MeasurementKernel, generator: KernelGenerator, period: Option<usize>) -> Self {
        KernelSchedule { base, mode: ScheduleMode::Parametric { generator, period } }
    }

    pub fn base(&self) -> &MeasurementKernel {
        &self.base
    }

    pub fn mode(&self) -> &ScheduleMode {
        &self.mode
    }

    pub fn n_outcomes(&self) -> usize {
        self.base.n_outcomes()
    }

    pub fn n_pointers(&self) -> usize {
        self.base.n_pointers()
    }

    /// Kernel applied to go from step `step` to `step + 1`.
    pub fn kernel_at(&self, step: u64) -> Result<Cow<'_, MeasurementKernel>, KernelError> {
        match &self.mode {
            ScheduleMode::Fixed => Ok(Cow::Borrowed(&self.base)),
            ScheduleMode::Cyclic(ks) => Ok(Cow::Borrowed(&ks[(step % ks.len() as u64) as usize])),
            ScheduleMode::Parametric { generator, .. } => {
                let k = generator(step);
                check_shape(&self.base, &k, step)?;
                Ok(Cow::Owned(k))
            }
        }
    }

    pub fn period(&self) -> Option<usize> {
        match &self.mode {
            ScheduleMode::Fixed => Some(1),
            ScheduleMode::Cyclic(ks) => Some(ks.len()),
            ScheduleMode::Parametric { period, .. } => *period,
        }
    }

    /// Position of `step` within the period (0 for aperiodic schedules).
    pub fn phase(&self, step: u64) -> usize {
        self.period().map_or(0, |p| (step % p as u64) as usize)
    }

    /// One kernel per phase of the cycle.
    pub fn kernels_over_period(&self) -> Result<Vec<Cow<'_, MeasurementKernel>>, KernelError> {
        let period = self.period().ok_or(KernelError::NotPeriodic)?;
        (0..period as u64).map(|s| self.kernel_at(s)).collect()
    }

    /// Pairs that no kernel in the cycle distinguishes.
    pub fn degenerate_pairs(&self, tol: f64) -> Result<Vec<(usize, usize)>, KernelError> {
        let kernels = self.kernels_over_period()?;
        let mut pairs = check_nondegeneracy(&kernels[0], tol);
        for k in &kernels[1..] {
            let here = check_nondegeneracy(k, tol);
            pairs.retain(|p| here.contains(p));
        }
        Ok(pairs)
    }

    pub fn nondegenerate(&self) -> Result<bool, KernelError> {
        Ok(self.degenerate_pairs(self.base.degeneracy_tol())?.is_empty())
    }

    /// Schedule-averaged outcome distribution `(1/L) Σ_k p_k(·|γ)`.
    pub fn mean_column(&self, pointer: usize) -> Result<Vec<f64>, KernelError> {
        let kernels = self.kernels_over_period()?;
        let mut mean = vec![0.0; self.n_outcomes()];
        for k in &kernels {
            for (m, p) in mean.iter_mut().zip(k.column(pointer)) {
                *m += p;
            }
        }
        let l = kernels.len() as f64;
        mean.iter_mut().for_each(|m| *m /= l);
        Ok(mean)
    }
}

fn check_shape(base: &MeasurementKernel, k: &MeasurementKernel, step: u64) -> Result<(), KernelError> {
    let expected = (base.n_outcomes(), base.n_pointers());
    let got = (k.n_outcomes(), k.n_pointers());
    if got != expected {
        return Err(KernelError::ScheduleShape { step, got, expected });
    }
    Ok(())
}
