//! Versioned JSON run configuration.
//!
//! Exactly one kernel source is given per file: `kernel`, `kernels` (a cycle),
//! `model`, `models` (a cycle), `cavity`, or `kernel_csv`. Kernel and `q0`
//! entries are numbers or strings such as `"3/4"`; when every entry of the
//! source is an exact rational summing to exactly 1 per column, an exact copy
//! of the schedule is kept for the rational enumeration mode.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{KernelError, KernelSchedule, MeasurementKernel, DEFAULT_DEGENERACY_TOL};
use crate::oracle::{decimal_rational, exact_state, parse_rational, ExactKernel, OracleError, DEFAULT_PATH_CAP};
use crate::records::{read_kernel_csv, RecordError};
use crate::simplex::SimplexState;
use crate::trajectory::{SimConfig, DEFAULT_BASIN_THRESHOLD, DEFAULT_COLLAPSE_THRESHOLD, DEFAULT_FIT_WINDOW};
use crate::unitary::{CavityPreset, ModelError, ProbeModel};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported config version {0} (this build reads version {CONFIG_VERSION})")]
    Version(u32),
    #[error("{0}")]
    Source(String),
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid entry {0:?}")]
    Entry(String),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// A probability written as a JSON number or as a string (`"1/3"`, `"0.25"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Text(String),
}

impl Entry {
    pub fn exact(&self) -> Result<BigRational, OracleError> {
        match self {
            Entry::Number(x) => decimal_rational(*x),
            Entry::Text(s) => parse_rational(s),
        }
    }

    pub fn value(&self) -> Result<f64, ConfigError> {
        match self {
            Entry::Number(x) => Ok(*x),
            Entry::Text(s) => {
                let r = parse_rational(s).map_err(|_| ConfigError::Entry(s.clone()))?;
                Ok(crate::oracle::Field::to_f64(&r))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointers: Option<Vec<String>>,
    /// `rows[i][α] = p(i|α)`.
    pub rows: Vec<Vec<Entry>>,
}

/// Complex entries are `[re, im]` pairs; matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub psi: Vec<[f64; 2]>,
    pub unitaries: Vec<Vec<Vec<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointers: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub seed: u64,
    pub trajectories: usize,
    pub max_steps: u64,
    pub collapse_threshold: f64,
    pub record_every: u64,
    pub stop_on_collapse: bool,
    pub basin_threshold: f64,
    pub fit_window: u64,
    /// Worker threads (0 = all cores); has no effect on results.
    #[serde(skip_serializing_if = "is_zero")]
    pub threads: usize,
    /// Trajectories written out as CSV; `None` means `min(trajectories, 16)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub save_trajectories: Option<usize>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            seed: 0,
            trajectories: 1000,
            max_steps: 1000,
            collapse_threshold: DEFAULT_COLLAPSE_THRESHOLD,
            record_every: 1,
            stop_on_collapse: true,
            basin_threshold: DEFAULT_BASIN_THRESHOLD,
            fit_window: DEFAULT_FIT_WINDOW,
            threads: 0,
            save_trajectories: None,
        }
    }
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl SimulationSection {
    pub fn saved(&self) -> usize {
        self.save_trajectories.unwrap_or(16).min(self.trajectories)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArithmeticMode {
    /// Rational when the source is exact, float otherwise.
    #[default]
    Auto,
    Float,
    Rational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnumerationSection {
    pub depth: usize,
    pub mode: ArithmeticMode,
    pub path_cap: u64,
}

impl Default for EnumerationSection {
    fn default() -> Self {
        EnumerationSection { depth: 8, mode: ArithmeticMode::Auto, path_cap: DEFAULT_PATH_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<KernelSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<ModelSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cavity: Option<CavityPreset>,
    /// Resolved against the config file's directory when relative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<Entry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy_tol: Option<f64>,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub enumeration: EnumerationSection,
}

/// Exact copy of a rational schedule and prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactInputs {
    pub kernels: Vec<ExactKernel<BigRational>>,
    pub q0: Vec<BigRational>,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub schedule: KernelSchedule,
    pub q0: SimplexState,
    /// Present when every kernel and `q0` entry is an exact rational.
    pub exact: Option<ExactInputs>,
    /// Probe models, for sources that define them.
    pub models: Option<Vec<ProbeModel>>,
}

impl RunConfig {
    /// A cavity-preset config with default simulation settings.
    pub fn cavity(preset: CavityPreset) -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            kernel: None,
            kernels: None,
            model: None,
            models: None,
            cavity: Some(preset),
            kernel_csv: None,
            q0: None,
            degeneracy_tol: None,
            simulation: SimulationSection::default(),
            enumeration: EnumerationSection::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| {
            let mut message = e.to_string();
            if let Some(p) = message.rfind(" at line ") {
                message.truncate(p);
            }
            ConfigError::Parse { line: e.line(), column: e.column(), message }
        })?;
        if config.version != CONFIG_VERSION {
            return Err(ConfigError::Version(config.version));
        }
        config.source_count()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let mut config = Self::from_json(&text)?;
        if let Some(csv) = &config.kernel_csv {
            if csv.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.kernel_csv = Some(base.join(csv));
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// JSON of everything that determines results (the thread count is dropped).
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.simulation.threads = 0;
        c.to_json()
    }

    fn source_count(&self) -> Result<(), ConfigError> {
        let given = [
            self.kernel.is_some(),
            self.kernels.is_some(),
            self.model.is_some(),
            self.models.is_some(),
            self.cavity.is_some(),
            self.kernel_csv.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if given != 1 {
            return Err(ConfigError::Source(format!(
                "exactly one of kernel, kernels, model, models, cavity, kernel_csv must be given (found {given})"
            )));
        }
        Ok(())
    }

    pub fn source_name(&self) -> &'static str {
        match () {
            _ if self.kernel.is_some() => "kernel",
            _ if self.kernels.is_some() => "kernels",
            _ if self.model.is_some() => "model",
            _ if self.models.is_some() => "models",
            _ if self.cavity.is_some() => "cavity",
            _ => "kernel_csv",
        }
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        self.source_count()?;
        let tol = self.degeneracy_tol.unwrap_or(DEFAULT_DEGENERACY_TOL);
        let (schedule, exact_kernels, models) = if let Some(k) = &self.kernel {
            let (kernel, exact) = kernel_from_spec(k, tol)?;
            (KernelSchedule::fixed(kernel), exact.map(|e| vec![e]), None)
        } else if let Some(ks) = &self.kernels {
            let built = ks.iter().map(|k| kernel_from_spec(k, tol)).collect::<Result<Vec<_>, _>>()?;
            let exact = built.iter().map(|(_, e)| e.clone()).collect::<Option<Vec<_>>>();
            let kernels = built.into_iter().map(|(k, _)| k).collect();
            (KernelSchedule::cyclic(kernels)?, exact, None)
        } else if let Some(path) = &self.kernel_csv {
            let text =
                fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.clone(), message: e.to_string() })?;
            let (kernel, exact) = kernel_from_spec(&read_kernel_csv(&text)?, tol)?;
            (KernelSchedule::fixed(kernel), exact.map(|e| vec![e]), None)
        } else if let Some(preset) = &self.cavity {
            let models = preset.probe_models()?;
            (with_tol(preset.schedule()?, tol)?, None, Some(models))
        } else {
            let specs: Vec<&ModelSpec> = match (&self.model, &self.models) {
                (Some(m), _) => vec![m],
                (_, Some(ms)) => ms.iter().collect(),
                _ => unreachable!("source_count checked"),
            };
            let models = specs.into_iter().map(model_from_spec).collect::<Result<Vec<_>, _>>()?;
            let kernels = models
                .iter()
                .map(|m| {
                    let k = crate::unitary::kernel_from_model(m)?;
                    Ok(MeasurementKernel::with_labels(
                        k.outcome_labels().to_vec(),
                        k.pointer_labels().to_vec(),
                        &k.rows(),
                        tol,
                    )?)
                })
                .collect::<Result<Vec<_>, ConfigError>>()?;
            (KernelSchedule::cyclic(kernels)?, None, Some(models))
        };

        let n_ptr = schedule.n_pointers();
        let (q0, exact_q0) = match &self.q0 {
            None => {
                let one = BigRational::from_integer(1.into());
                let each = one / BigRational::from_integer((n_ptr as i64).into());
                (SimplexState::uniform(n_ptr), Some(vec![each; n_ptr]))
            }
            Some(entries) => {
                if entries.len() != n_ptr {
                    return Err(KernelError::IndexMismatch { kernel: n_ptr, state: entries.len() }.into());
                }
                let values = entries.iter().map(Entry::value).collect::<Result<Vec<_>, _>>()?;
                let exact = entries
                    .iter()
                    .map(Entry::exact)
                    .collect::<Result<Vec<_>, _>>()
                    .ok()
                    .and_then(|q| exact_state(&q).ok());
                (SimplexState::new(values)?, exact)
            }
        };
        let exact = match (exact_kernels, exact_q0) {
            (Some(kernels), Some(q0)) => Some(ExactInputs { kernels, q0 }),
            _ => None,
        };
        Ok(Resolved { schedule, q0, exact, models })
    }

    pub fn sim_config(&self, resolved: &Resolved) -> Result<SimConfig, ConfigError> {
        let s = &self.simulation;
        let mut config = SimConfig::new(resolved.schedule.clone(), resolved.q0.clone());
        config.seed = s.seed;
        config.n_trajectories = s.trajectories;
        config.max_steps = s.max_steps;
        config.collapse_threshold = s.collapse_threshold;
        config.record_every = s.record_every;
        config.stop_on_collapse = s.stop_on_collapse;
        config.basin_threshold = s.basin_threshold;
        config.fit_window = s.fit_window;
        config.validate().map_err(|e| ConfigError::Simulation(e.to_string()))?;
        Ok(config)
    }
}

fn with_tol(schedule: KernelSchedule, tol: f64) -> Result<KernelSchedule, ConfigError> {
    if tol == DEFAULT_DEGENERACY_TOL {
        return Ok(schedule);
    }
    let kernels = schedule
        .kernels_over_period()?
        .iter()
        .map(|k| {
            MeasurementKernel::with_labels(k.outcome_labels().to_vec(), k.pointer_labels().to_vec(), &k.rows(), tol)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(KernelSchedule::cyclic(kernels)?)
}

fn kernel_from_spec(
    spec: &KernelSpec,
    tol: f64,
) -> Result<(MeasurementKernel, Option<ExactKernel<BigRational>>), ConfigError> {
    let rows = spec
        .rows
        .iter()
        .map(|r| r.iter().map(Entry::value).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    let n_out = rows.len();
    let n_ptr = rows.first().map_or(0, Vec::len);
    let outcomes = spec.outcomes.clone().unwrap_or_else(|| (0..n_out).map(|i| i.to_string()).collect());
    let pointers = spec.pointers.clone().unwrap_or_else(|| (0..n_ptr).map(|a| a.to_string()).collect());
    let kernel = MeasurementKernel::with_labels(outcomes, pointers, &rows, tol)?;
    let exact = spec
        .rows
        .iter()
        .map(|r| r.iter().map(Entry::exact).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .ok()
        .and_then(|rows| ExactKernel::from_rows(&rows).ok());
    Ok((kernel, exact))
}

fn complex_matrix(rows: &[Vec<[f64; 2]>]) -> Result<Array2<C64>, ConfigError> {
    let n = rows.len();
    let flat: Vec<C64> = rows.iter().flatten().map(|&[re, im]| C64::new(re, im)).collect();
    Array2::from_shape_vec((n, flat.len() / n.max(1)), flat)
        .ok()
        .filter(|_| rows.iter().all(|r| r.len() == n))
        .ok_or_else(|| ConfigError::Source(format!("matrix must be square, got {n} ragged or non-square rows")))
}

fn model_from_spec(spec: &ModelSpec) -> Result<ProbeModel, ConfigError> {
    let psi = Array1::from(spec.psi.iter().map(|&[re, im]| C64::new(re, im)).collect::<Vec<_>>());
    let unitaries = spec.unitaries.iter().map(|u| complex_matrix(u)).collect::<Result<Vec<_>, _>>()?;
    let basis = spec.basis.as_deref().map(complex_matrix).transpose()?;
    let mut model = ProbeModel::new(psi, unitaries, basis)?;
    if spec.outcomes.is_some() || spec.pointers.is_some() {
        let outcomes = spec.outcomes.clone().unwrap_or_else(|| (0..model.dim()).map(|i| i.to_string()).collect());
        let pointers =
            spec.pointers.clone().unwrap_or_else(|| (0..model.n_pointers()).map(|a| a.to_string()).collect());
        model = model.with_labels(outcomes, pointers)?;
    }
    Ok(model)
}
