//! Explicit probe models in the factorized form `U(ψ ⊗ α) = (U_α ψ) ⊗ α`,
//! the complex amplitude track of the system state, and the dispersive
//! cavity preset (spin-½ probe rotated by `nθ` for `n` photons).

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{KernelError, KernelSchedule, MeasurementKernel, DEFAULT_DEGENERACY_TOL};
use crate::simplex::ZERO_PROBABILITY_THRESHOLD;

pub const PSI_NORM_TOL: f64 = 1e-12;
pub const UNITARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("probe dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("model has no pointer unitaries")]
    NoPointers,
    #[error("matrix for pointer {pointer} has shape {shape:?}, expected {dim}x{dim}")]
    Shape { pointer: usize, shape: (usize, usize), dim: usize },
    #[error("probe state has norm {0}, expected 1")]
    NotNormalized(f64),
    #[error("U for pointer {pointer} is not unitary (max deviation {deviation:e})")]
    NonUnitary { pointer: usize, deviation: f64 },
    #[error("measurement basis change is not unitary (max deviation {0:e})")]
    NonUnitaryBasis(f64),
    #[error("amplitude vector has {got} entries, model has {expected} pointers")]
    IndexMismatch { got: usize, expected: usize },
    #[error("invalid amplitude state: {0}")]
    InvalidState(String),
    #[error("outcome {0} is out of range")]
    OutcomeOutOfRange(usize),
    #[error("outcome {0} has zero probability under the current amplitudes")]
    ZeroProbabilityOutcome(usize),
    #[error("invalid cavity preset: {0}")]
    InvalidPreset(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Probe Hilbert-space data: initial probe state, one unitary per pointer
/// state and an optional fixed change of measurement basis (rows are `⟨i|`).
#[derive(Debug, Clone)]
pub struct ProbeModel {
    psi: Array1<C64>,
    unitaries: Vec<Array2<C64>>,
    basis: Option<Array2<C64>>,
    outcome_labels: Vec<String>,
    pointer_labels: Vec<String>,
    /// `⟨i|B U_α|ψ⟩`, indexed `[i, α]`.
    amplitudes: Array2<C64>,
}

impl ProbeModel {
    pub fn new(psi: Array1<C64>, unitaries: Vec<Array2<C64>>, basis: Option<Array2<C64>>) -> Result<Self, ModelError> {
        let dim = psi.len();
        if dim < 2 {
            return Err(ModelError::Dimension(dim));
        }
        if unitaries.is_empty() {
            return Err(ModelError::NoPointers);
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > PSI_NORM_TOL {
            return Err(ModelError::NotNormalized(norm));
        }
        for (a, u) in unitaries.iter().enumerate() {
            if u.dim() != (dim, dim) {
                return Err(ModelError::Shape { pointer: a, shape: u.dim(), dim });
            }
            let deviation = unitarity_deviation(u);
            if deviation >= UNITARITY_TOL {
                return Err(ModelError::NonUnitary { pointer: a, deviation });
            }
        }
        if let Some(b) = &basis {
            if b.dim() != (dim, dim) {
                return Err(ModelError::Shape { pointer: usize::MAX, shape: b.dim(), dim });
            }
            let deviation = unitarity_deviation(b);
            if deviation >= UNITARITY_TOL {
                return Err(ModelError::NonUnitaryBasis(deviation));
            }
        }
        let n_ptr = unitaries.len();
        let mut amplitudes = Array2::zeros((dim, n_ptr));
        for (a, u) in unitaries.iter().enumerate() {
            let mut v = u.dot(&psi);
            if let Some(b) = &basis {
                v = b.dot(&v);
            }
            amplitudes.column_mut(a).assign(&v);
        }
        Ok(ProbeModel {
            psi,
            unitaries,
            basis,
            outcome_labels: (0..dim).map(|i| i.to_string()).collect(),
            pointer_labels: (0..n_ptr).map(|a| a.to_string()).collect(),
            amplitudes,
        })
    }

    pub fn with_labels(mut self, outcomes: Vec<String>, pointers: Vec<String>) -> Result<Self, ModelError> {
        if outcomes.len() != self.dim() {
            return Err(KernelError::LabelCount { what: "outcome", got: outcomes.len(), expected: self.dim() }.into());
        }
        if pointers.len() != self.n_pointers() {
            return Err(
                KernelError::LabelCount { what: "pointer", got: pointers.len(), expected: self.n_pointers() }.into()
            );
        }
        self.outcome_labels = outcomes;
        self.pointer_labels = pointers;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    pub fn n_pointers(&self) -> usize {
        self.unitaries.len()
    }

    pub fn psi(&self) -> &Array1<C64> {
        &self.psi
    }

    pub fn unitaries(&self) -> &[Array2<C64>] {
        &self.unitaries
    }

    pub fn basis(&self) -> Option<&Array2<C64>> {
        self.basis.as_ref()
    }

    /// `⟨i|U_α|ψ⟩` in the measurement basis.
    pub fn amplitude(&self, outcome: usize, pointer: usize) -> C64 {
        self.amplitudes[[outcome, pointer]]
    }
}

/// `max |U†U - Id|`.
pub fn unitarity_deviation(u: &Array2<C64>) -> f64 {
    let n = u.nrows();
    let prod = u.t().mapv(|z| z.conj()).dot(u);
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            let target = if r == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            worst = worst.max((prod[[r, c]] - target).norm());
        }
    }
    worst
}

/// `p(i|α) = |⟨i|U_α|ψ⟩|²`.
pub fn kernel_from_model(model: &ProbeModel) -> Result<MeasurementKernel, ModelError> {
    let rows: Vec<Vec<f64>> =
        (0..model.dim()).map(|i| (0..model.n_pointers()).map(|a| model.amplitude(i, a).norm_sqr()).collect()).collect();
    Ok(MeasurementKernel::with_labels(
        model.outcome_labels.clone(),
        model.pointer_labels.clone(),
        &rows,
        DEFAULT_DEGENERACY_TOL,
    )?)
}

/// Amplitudes `⟨α|φ_n⟩` of the system state in the pointer basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeState {
    pub amps: Vec<C64>,
    pub step: u64,
}

impl AmplitudeState {
    pub fn new(amps: Vec<C64>) -> Result<Self, ModelError> {
        if amps.is_empty() {
            return Err(ModelError::InvalidState("empty vector".into()));
        }
        let norm2: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        if !norm2.is_finite() || (norm2 - 1.0).abs() > 1e-9 {
            return Err(ModelError::InvalidState(format!("squared norm {norm2}")));
        }
        let scale = norm2.sqrt().recip();
        Ok(AmplitudeState { amps: amps.into_iter().map(|z| z * scale).collect(), step: 0 })
    }

    /// Real non-negative amplitudes `√q(α)`.
    pub fn from_probabilities(q: &[f64]) -> Result<Self, ModelError> {
        Self::new(q.iter().map(|p| C64::new(p.max(0.0).sqrt(), 0.0)).collect())
    }

    /// `|⟨α|φ⟩|²` for every pointer.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|z| z.norm_sqr()).collect()
    }
}

/// Post-measurement system state when the probe is found in `outcome`.
pub fn amplitude_update(
    model: &ProbeModel,
    state: &AmplitudeState,
    outcome: usize,
) -> Result<AmplitudeState, ModelError> {
    if state.amps.len() != model.n_pointers() {
        return Err(ModelError::IndexMismatch { got: state.amps.len(), expected: model.n_pointers() });
    }
    if outcome >= model.dim() {
        return Err(ModelError::OutcomeOutOfRange(outcome));
    }
    let unnormalized: Vec<C64> = state.amps.iter().enumerate().map(|(a, z)| model.amplitude(outcome, a) * z).collect();
    let denom: f64 = unnormalized.iter().map(|z| z.norm_sqr()).sum();
    if denom <= ZERO_PROBABILITY_THRESHOLD {
        return Err(ModelError::ZeroProbabilityOutcome(outcome));
    }
    let scale = denom.sqrt().recip();
    Ok(AmplitudeState { amps: unnormalized.into_iter().map(|z| z * scale).collect(), step: state.step + 1 })
}

/// Applies `outcomes` in order, using `models[step % models.len()]` at each step.
pub fn replay_amplitudes(
    models: &[ProbeModel],
    initial: &AmplitudeState,
    outcomes: &[usize],
) -> Result<Vec<AmplitudeState>, ModelError> {
    let mut states = Vec::with_capacity(outcomes.len() + 1);
    states.push(initial.clone());
    for &i in outcomes {
        let cur = states.last().expect("non-empty");
        let model = &models[(cur.step % models.len() as u64) as usize];
        states.push(amplitude_update(model, cur, i)?);
    }
    Ok(states)
}

/// Dispersive cavity readout: `n` photons rotate a spin-½ probe by `nθ`
/// about z, and the spin is read out in the equatorial direction `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityPreset {
    pub n_max: usize,
    pub theta: f64,
    pub phi_schedule: Vec<f64>,
}

impl Default for CavityPreset {
    fn default() -> Self {
        CavityPreset { n_max: 7, theta: 0.7, phi_schedule: vec![0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4] }
    }
}

impl CavityPreset {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_max < 1 {
            return Err(ModelError::InvalidPreset("n_max must be at least 1".into()));
        }
        if !self.theta.is_finite() {
            return Err(ModelError::InvalidPreset("theta must be finite".into()));
        }
        if self.phi_schedule.is_empty() {
            return Err(ModelError::InvalidPreset("phi_schedule is empty".into()));
        }
        if self.phi_schedule.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::InvalidPreset("phi_schedule has a non-finite angle".into()));
        }
        Ok(())
    }

    pub fn n_pointers(&self) -> usize {
        self.n_max + 1
    }

    pub fn phi_at(&self, step: u64) -> f64 {
        self.phi_schedule[(step % self.phi_schedule.len() as u64) as usize]
    }

    pub fn outcome_labels() -> Vec<String> {
        vec!["+".into(), "-".into()]
    }

    pub fn pointer_labels(&self) -> Vec<String> {
        (0..=self.n_max).map(|n| n.to_string()).collect()
    }

    /// One spin-½ probe model per angle of the φ schedule.
    pub fn probe_models(&self) -> Result<Vec<ProbeModel>, ModelError> {
        self.validate()?;
        let zero = C64::new(0.0, 0.0);
        let psi = Array1::from(vec![C64::new(FRAC_1_SQRT_2, 0.0); 2]);
        let unitaries: Vec<Array2<C64>> = (0..=self.n_max)
            .map(|n| {
                let half = n as f64 * self.theta / 2.0;
                Array2::from_shape_vec(
                    (2, 2),
                    vec![C64::from_polar(1.0, -half), zero, zero, C64::from_polar(1.0, half)],
                )
                .expect("2x2")
            })
            .collect();
        self.phi_schedule
            .iter()
            .map(|&phi| {
                let basis = equatorial_basis(phi);
                ProbeModel::new(psi.clone(), unitaries.clone(), Some(basis))?
                    .with_labels(Self::outcome_labels(), self.pointer_labels())
            })
            .collect()
    }

    pub fn schedule(&self) -> Result<KernelSchedule, ModelError> {
        self.validate()?;
        let kernels =
            (0..self.phi_schedule.len() as u64).map(|s| cavity_kernel(self, s)).collect::<Result<Vec<_>, _>>()?;
        Ok(KernelSchedule::cyclic(kernels)?)
    }
}

/// Rows `⟨±φ| = (⟨0| ± e^{-iφ}⟨1|)/√2`.
pub fn equatorial_basis(phi: f64) -> Array2<C64> {
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let e = C64::from_polar(FRAC_1_SQRT_2, -phi);
    Array2::from_shape_vec((2, 2), vec![s, e, s, -e]).expect("2x2")
}

/// Two-outcome kernel at `step`: `p(+|n) = cos²[(nθ − φ)/2]`, `p(−|n) = sin²[(nθ − φ)/2]`.
pub fn cavity_kernel(preset: &CavityPreset, step: u64) -> Result<MeasurementKernel, ModelError> {
    preset.validate()?;
    let phi = preset.phi_at(step);
    let (plus, minus): (Vec<f64>, Vec<f64>) = (0..=preset.n_max)
        .map(|n| {
            let x = (n as f64 * preset.theta - phi) / 2.0;
            (x.cos().powi(2), x.sin().powi(2))
        })
        .unzip();
    Ok(MeasurementKernel::with_labels(
        CavityPreset::outcome_labels(),
        preset.pointer_labels(),
        &[plus, minus],
        DEFAULT_DEGENERACY_TOL,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::check_nondegeneracy;
    use std::f64::consts::PI;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn identity(d: usize) -> Array2<C64> {
        Array2::from_shape_fn((d, d), |(r, k)| if r == k { c(1.0) } else { c(0.0) })
    }

    #[test]
    fn identity_evolution_is_fully_degenerate() {
        let psi = Array1::from(vec![c(1.0), c(0.0), c(0.0)]);
        let m = ProbeModel::new(psi, vec![identity(3); 3], None).unwrap();
        let k = kernel_from_model(&m).unwrap();
        for a in 0..3 {
            assert_eq!(k.column(a), &[1.0, 0.0, 0.0]);
        }
        assert_eq!(k.degenerate_pairs(), &[(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn spin_half_rotation_reproduces_cos_squared() {
        // ψ = |0⟩, U_α = R_z(αθ)·H, readout along φ
        let (theta, phi) = (0.7, 0.3);
        let h = Array2::from_shape_vec(
            (2, 2),
            vec![c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2), c(-FRAC_1_SQRT_2)],
        )
        .unwrap();
        let unitaries: Vec<Array2<C64>> = (0..4)
            .map(|a| {
                let half = a as f64 * theta / 2.0;
                let rz = Array2::from_shape_vec(
                    (2, 2),
                    vec![C64::from_polar(1.0, -half), c(0.0), c(0.0), C64::from_polar(1.0, half)],
                )
                .unwrap();
                rz.dot(&h)
            })
            .collect();
        let psi = Array1::from(vec![c(1.0), c(0.0)]);
        let m = ProbeModel::new(psi, unitaries, Some(equatorial_basis(phi))).unwrap();
        let k = kernel_from_model(&m).unwrap();
        for a in 0..4 {
            let x = (a as f64 * theta - phi) / 2.0;
            assert!((k.prob(0, a) - x.cos().powi(2)).abs() < 1e-14);
            assert!((k.prob(1, a) - x.sin().powi(2)).abs() < 1e-14);
            // columns from unitary models need no renormalization
            assert!((k.column(a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn global_phases_do_not_change_the_kernel() {
        let preset = CavityPreset { n_max: 3, theta: 0.9, phi_schedule: vec![0.4] };
        let m = &preset.probe_models().unwrap()[0];
        let phased: Vec<Array2<C64>> = m
            .unitaries()
            .iter()
            .enumerate()
            .map(|(a, u)| u.mapv(|z| z * C64::from_polar(1.0, 0.37 * a as f64)))
            .collect();
        let m2 = ProbeModel::new(m.psi().clone(), phased, m.basis().cloned()).unwrap();
        let (k1, k2) = (kernel_from_model(m).unwrap(), kernel_from_model(&m2).unwrap());
        for a in 0..4 {
            for i in 0..2 {
                assert!((k1.prob(i, a) - k2.prob(i, a)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn model_validation_errors() {
        let psi = Array1::from(vec![c(1.0), c(1.0)]);
        assert!(matches!(ProbeModel::new(psi, vec![identity(2)], None), Err(ModelError::NotNormalized(_))));
        let psi = Array1::from(vec![c(1.0), c(0.0)]);
        let mut bad = identity(2);
        bad[[0, 1]] = c(0.1);
        assert!(matches!(
            ProbeModel::new(psi.clone(), vec![identity(2), bad], None),
            Err(ModelError::NonUnitary { pointer: 1, .. })
        ));
        assert!(matches!(ProbeModel::new(psi.clone(), vec![], None), Err(ModelError::NoPointers)));
        assert!(matches!(ProbeModel::new(psi, vec![identity(3)], None), Err(ModelError::Shape { pointer: 0, .. })));
        assert!(matches!(
            ProbeModel::new(Array1::from(vec![c(1.0)]), vec![identity(1)], None),
            Err(ModelError::Dimension(1))
        ));
    }

    #[test]
    fn cavity_kernel_examples() {
        let p = CavityPreset { n_max: 3, theta: PI / 2.0, phi_schedule: vec![0.0] };
        let k = cavity_kernel(&p, 0).unwrap();
        assert_eq!(k.prob(0, 0), 1.0);
        assert!((k.prob(0, 1) - 0.5).abs() < 1e-15);

        let p = CavityPreset { n_max: 7, theta: 2.0 * PI, phi_schedule: vec![0.3] };
        let k = cavity_kernel(&p, 0).unwrap();
        assert_eq!(check_nondegeneracy(&k, 1e-10).len(), 8 * 7 / 2);
    }

    #[test]
    fn theta_pi_single_angle_confuses_zero_and_two() {
        let p = CavityPreset { n_max: 2, theta: PI, phi_schedule: vec![0.0] };
        let k = cavity_kernel(&p, 0).unwrap();
        assert_eq!(check_nondegeneracy(&k, 1e-10), vec![(0, 2)]);
    }

    #[test]
    fn second_angle_lifts_reflection_degeneracy() {
        // θ = 2π/3: cos θ = cos 2θ, so n = 1 and n = 2 look alike at φ = 0
        let theta = 2.0 * PI / 3.0;
        let single = CavityPreset { n_max: 2, theta, phi_schedule: vec![0.0] };
        assert_eq!(single.schedule().unwrap().degenerate_pairs(1e-10).unwrap(), vec![(1, 2)]);
        let two = CavityPreset { n_max: 2, theta, phi_schedule: vec![0.0, theta / 2.0] };
        assert!(two.schedule().unwrap().degenerate_pairs(1e-10).unwrap().is_empty());
        // a true period (θ = π, n = 0 vs 2) cannot be lifted by any angle
        let periodic = CavityPreset { n_max: 2, theta: PI, phi_schedule: vec![0.0, PI / 2.0] };
        assert_eq!(periodic.schedule().unwrap().degenerate_pairs(1e-10).unwrap(), vec![(0, 2)]);
        // the default preset is nondegenerate
        assert!(CavityPreset::default().schedule().unwrap().nondegenerate().unwrap());
    }

    #[test]
    fn cavity_models_match_closed_form() {
        let preset = CavityPreset::default();
        let models = preset.probe_models().unwrap();
        for (s, m) in models.iter().enumerate() {
            let from_model = kernel_from_model(m).unwrap();
            let closed = cavity_kernel(&preset, s as u64).unwrap();
            assert_eq!(from_model.outcome_labels(), closed.outcome_labels());
            for a in 0..preset.n_pointers() {
                for i in 0..2 {
                    assert!((from_model.prob(i, a) - closed.prob(i, a)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn pointer_states_stay_pointer_states() {
        let models = CavityPreset::default().probe_models().unwrap();
        let mut amps = vec![c(0.0); 8];
        amps[5] = C64::from_polar(1.0, 0.2);
        let mut a = AmplitudeState::new(amps).unwrap();
        for step in 0..20 {
            let m = &models[step % 4];
            let i = if m.amplitude(0, 5).norm_sqr() > 0.0 { 0 } else { 1 };
            a = amplitude_update(m, &a, i).unwrap();
            assert!((a.amps[5].norm() - 1.0).abs() < 1e-15);
            assert!(a.amps.iter().enumerate().all(|(k, z)| k == 5 || *z == c(0.0)));
        }
    }

    #[test]
    fn degenerate_model_preserves_ratios() {
        let psi = Array1::from(vec![c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2)]);
        let u = equatorial_basis(0.8);
        let m = ProbeModel::new(psi, vec![u.clone(), u.clone(), u], None).unwrap();
        let a = AmplitudeState::from_probabilities(&[0.2, 0.3, 0.5]).unwrap();
        let b = amplitude_update(&m, &a, 1).unwrap();
        let (pa, pb) = (a.probabilities(), b.probabilities());
        assert!((pb[0] / pb[1] - pa[0] / pa[1]).abs() < 1e-12);
        assert!((pb[2] / pb[1] - pa[2] / pa[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_amplitude_outcome() {
        let preset = CavityPreset { n_max: 1, theta: PI, phi_schedule: vec![0.0] };
        let m = &preset.probe_models().unwrap()[0];
        let a = AmplitudeState::from_probabilities(&[1.0, 0.0]).unwrap();
        assert_eq!(amplitude_update(m, &a, 1), Err(ModelError::ZeroProbabilityOutcome(1)));
    }

    mod random_models {
        use super::*;
        use crate::simplex::{bayes_update, outcome_distribution, SimplexState};
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        /// Gram–Schmidt on the columns of a random complex matrix.
        fn unitary(raw: &[(f64, f64)], d: usize) -> Array2<C64> {
            let mut cols: Vec<Vec<C64>> = Vec::with_capacity(d);
            for k in 0..d {
                let mut v: Vec<C64> = (0..d).map(|r| C64::new(raw[k * d + r].0, raw[k * d + r].1)).collect();
                for u in &cols {
                    let dot: C64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                    v.iter_mut().zip(u).for_each(|(x, a)| *x -= dot * a);
                }
                let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                cols.push(v.into_iter().map(|z| z / n).collect());
            }
            Array2::from_shape_fn((d, d), |(r, k)| cols[k][r])
        }

        fn model() -> impl Strategy<Value = ProbeModel> {
            (2usize..=3, 2usize..=4).prop_flat_map(|(d, n)| {
                let entry = (-1.0f64..1.0, -1.0f64..1.0);
                (prop::collection::vec(entry.clone(), d), prop::collection::vec(entry, d * d * (n + 1)))
                    .prop_filter_map("well-conditioned draw", move |(psi, raw)| {
                        let norm = psi.iter().map(|(a, b)| a * a + b * b).sum::<f64>().sqrt();
                        if norm < 1e-3 {
                            return None;
                        }
                        let psi = Array1::from_iter(psi.iter().map(|&(a, b)| C64::new(a / norm, b / norm)));
                        let mats: Vec<Array2<C64>> = raw.chunks(d * d).map(|c| unitary(c, d)).collect();
                        if mats.iter().any(|u| unitarity_deviation(u) > 1e-10) {
                            return None;
                        }
                        let basis = mats[n].clone();
                        ProbeModel::new(psi, mats[..n].to_vec(), Some(basis)).ok()
                    })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn columns_sum_to_one(m in model()) {
                for a in 0..m.n_pointers() {
                    let total: f64 = (0..m.dim()).map(|i| m.amplitude(i, a).norm_sqr()).sum();
                    prop_assert!((total - 1.0).abs() < 1e-12, "column {} sums to {}", a, total);
                }
            }

            #[test]
            fn amplitude_and_simplex_tracks_agree(m in model(), seed in any::<u64>()) {
                let k = kernel_from_model(&m).unwrap();
                let n = m.n_pointers();
                let mut s = SimplexState::uniform(n);
                let mut a = AmplitudeState::from_probabilities(&s.q).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..1000 {
                    let pi = outcome_distribution(&k, &s).unwrap();
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let i = pi.iter().position(|p| { acc += p; u < acc }).unwrap_or(pi.len() - 1);
                    s = bayes_update(&k, &s, i).unwrap();
                    a = amplitude_update(&m, &a, i).unwrap();
                }
                for (p, q) in a.probabilities().iter().zip(&s.q) {
                    prop_assert!((p - q).abs() < 1e-9, "{} vs {}", p, q);
                }
            }

            #[test]
            fn pointer_amplitudes_stay_one_hot(m in model(), g in 0usize..4, phase in 0.0f64..std::f64::consts::TAU) {
                let n = m.n_pointers();
                let g = g % n;
                let mut amps = vec![C64::new(0.0, 0.0); n];
                amps[g] = C64::from_polar(1.0, phase);
                let a = AmplitudeState::new(amps).unwrap();
                for i in 0..m.dim() {
                    if m.amplitude(i, g).norm_sqr() <= ZERO_PROBABILITY_THRESHOLD {
                        continue;
                    }
                    let b = amplitude_update(&m, &a, i).unwrap();
                    prop_assert!((b.amps[g].norm() - 1.0).abs() < 1e-12);
                    prop_assert!(b.amps.iter().enumerate().all(|(k, z)| k == g || z.norm() == 0.0));
                }
            }
        }
    }
}
