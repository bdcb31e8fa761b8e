//! Exhaustive enumeration of the outcome tree to a fixed depth.
//!
//! Every outcome sequence with positive probability is unrolled through the
//! Bayes recursion, giving exact path weights and terminal states. With
//! rational kernel entries the arithmetic is exact, so identities such as
//! `E[q_n(α)] = q_0(α)` can be checked with `==`.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::kernel::MeasurementKernel;

pub const DEFAULT_PATH_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("tree would hold {paths} paths (about {bytes} bytes), above the cap of {cap}")]
    TreeTooLarge { paths: u128, bytes: u128, cap: u64 },
    #[error("cannot parse {0:?} as an exact rational")]
    Parse(String),
    #[error("negative entry at outcome {outcome}, pointer {pointer}")]
    NegativeEntry { outcome: usize, pointer: usize },
    #[error("column for pointer {pointer} sums to {sum}, not exactly 1")]
    NotExactlyNormalized { pointer: usize, sum: String },
    #[error("initial state sums to {0}, not exactly 1")]
    StateNotNormalized(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no kernels given")]
    NoKernels,
}

/// Arithmetic used by the enumeration: `f64` or exact rationals.
pub trait Field: Clone + PartialEq + Send + Sync + fmt::Display {
    fn zero() -> Self;
    fn one() -> Self;
    fn add(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn div(&self, other: &Self) -> Self;
    fn is_zero(&self) -> bool;
    fn to_f64(&self) -> f64;

    fn sum<'a, I: Iterator<Item = &'a Self>>(items: I) -> Self
    where
        Self: 'a,
    {
        items.fold(Self::zero(), |acc, x| acc.add(x))
    }
}

impl Field for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn div(&self, other: &Self) -> Self {
        self / other
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn to_f64(&self) -> f64 {
        *self
    }

    /// Neumaier compensated summation.
    fn sum<'a, I: Iterator<Item = &'a Self>>(items: I) -> Self {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for &x in items {
            let t = s + x;
            if s.abs() >= x.abs() {
                c += (s - t) + x;
            } else {
                c += (x - t) + s;
            }
            s = t;
        }
        s + c
    }
}

impl Field for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn div(&self, other: &Self) -> Self {
        self / other
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Parses `"3/4"`, `"0.75"`, `"1"`, or `"2.5e-3"` as an exact rational.
pub fn parse_rational(text: &str) -> Result<BigRational, OracleError> {
    let err = || OracleError::Parse(text.to_string());
    let s = text.trim();
    if s.contains('/') {
        return BigRational::from_str(s).map_err(|_| err());
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(p) => (&s[..p], s[p + 1..].parse::<i32>().map_err(|_| err())?),
        None => (s, 0),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    let negative = int_part.starts_with('-');
    let int_digits = int_part.trim_start_matches(['-', '+']);
    let digits = format!("{int_digits}{frac_part}");
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    let mut numer = BigInt::from_str(&digits).map_err(|_| err())?;
    if negative {
        numer = -numer;
    }
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10u32);
    let value = if scale >= 0 {
        BigRational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    Ok(value)
}

/// The shortest decimal that round-trips to `x`, as an exact rational.
pub fn decimal_rational(x: f64) -> Result<BigRational, OracleError> {
    parse_rational(&x.to_string())
}

/// Kernel in the enumeration's arithmetic, column-major by pointer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactKernel<T> {
    n_outcomes: usize,
    n_pointers: usize,
    probs: Vec<T>,
}

impl<T: Field> ExactKernel<T> {
    pub fn n_outcomes(&self) -> usize {
        self.n_outcomes
    }

    pub fn n_pointers(&self) -> usize {
        self.n_pointers
    }

    pub fn prob(&self, outcome: usize, pointer: usize) -> &T {
        &self.probs[pointer * self.n_outcomes + outcome]
    }
}

impl ExactKernel<f64> {
    pub fn from_kernel(kernel: &MeasurementKernel) -> Self {
        let probs = (0..kernel.n_pointers()).flat_map(|a| kernel.column(a).to_vec()).collect();
        ExactKernel { n_outcomes: kernel.n_outcomes(), n_pointers: kernel.n_pointers(), probs }
    }
}

impl ExactKernel<BigRational> {
    /// Rows = outcomes, columns = pointers; columns must sum to exactly 1.
    pub fn from_rows(rows: &[Vec<BigRational>]) -> Result<Self, OracleError> {
        let n_out = rows.len();
        let n_ptr = rows.first().map_or(0, Vec::len);
        if n_out == 0 || n_ptr == 0 || rows.iter().any(|r| r.len() != n_ptr) {
            return Err(OracleError::Shape("kernel rows must be non-empty and rectangular".into()));
        }
        let mut probs = Vec::with_capacity(n_out * n_ptr);
        for a in 0..n_ptr {
            let mut sum = <BigRational as Zero>::zero();
            for (i, row) in rows.iter().enumerate() {
                if row[a].is_negative() {
                    return Err(OracleError::NegativeEntry { outcome: i, pointer: a });
                }
                sum += &row[a];
                probs.push(row[a].clone());
            }
            if !sum.is_one() {
                return Err(OracleError::NotExactlyNormalized { pointer: a, sum: sum.to_string() });
            }
        }
        Ok(ExactKernel { n_outcomes: n_out, n_pointers: n_ptr, probs })
    }

    pub fn from_strings(rows: &[Vec<String>]) -> Result<Self, OracleError> {
        let parsed = rows
            .iter()
            .map(|r| r.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_rows(&parsed)
    }

    /// Reads each float entry as the decimal it prints as (`0.1` becomes `1/10`).
    pub fn from_kernel_decimal(kernel: &MeasurementKernel) -> Result<Self, OracleError> {
        let rows = kernel
            .rows()
            .iter()
            .map(|r| r.iter().map(|&x| decimal_rational(x)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_rows(&rows)
    }
}

/// Initial state as exact rationals; must sum to exactly 1.
pub fn exact_state(q: &[BigRational]) -> Result<Vec<BigRational>, OracleError> {
    let sum: BigRational = q.iter().sum();
    if !sum.is_one() || q.iter().any(|v| v.is_negative()) {
        return Err(OracleError::StateNotNormalized(sum.to_string()));
    }
    Ok(q.to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathNode<T> {
    pub outcomes: Vec<usize>,
    pub weight: T,
    pub state: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTree<T> {
    pub depth: usize,
    pub paths: Vec<PathNode<T>>,
}

/// Number of leaves before pruning and a rough memory estimate in bytes.
pub fn tree_size(n_outcomes: usize, n_pointers: usize, depth: usize) -> (u128, u128) {
    let paths = (n_outcomes as u128).checked_pow(depth as u32).unwrap_or(u128::MAX);
    let per_path = (depth * 8 + (n_pointers + 1) * 32 + 64) as u128;
    (paths, paths.saturating_mul(per_path))
}

/// Unrolls the recursion `depth` times, using `kernels[n % kernels.len()]` at step `n`.
pub fn enumerate<T: Field>(
    kernels: &[ExactKernel<T>],
    q0: &[T],
    depth: usize,
    cap: u64,
) -> Result<OutcomeTree<T>, OracleError> {
    let first = kernels.first().ok_or(OracleError::NoKernels)?;
    let (n_out, n_ptr) = (first.n_outcomes, first.n_pointers);
    if kernels.iter().any(|k| k.n_outcomes != n_out || k.n_pointers != n_ptr) {
        return Err(OracleError::Shape("kernels in the schedule differ in shape".into()));
    }
    if q0.len() != n_ptr {
        return Err(OracleError::Shape(format!("q0 has {} entries, kernel has {n_ptr} pointers", q0.len())));
    }
    let (paths, bytes) = tree_size(n_out, n_ptr, depth);
    if paths > cap as u128 {
        return Err(OracleError::TreeTooLarge { paths, bytes, cap });
    }

    let mut frontier = vec![PathNode { outcomes: Vec::new(), weight: T::one(), state: q0.to_vec() }];
    for level in 0..depth {
        let kernel = &kernels[level % kernels.len()];
        frontier = frontier.into_par_iter().flat_map_iter(|node| expand(kernel, node)).collect();
    }
    Ok(OutcomeTree { depth, paths: frontier })
}

fn expand<T: Field>(kernel: &ExactKernel<T>, node: PathNode<T>) -> Vec<PathNode<T>> {
    let mut children = Vec::with_capacity(kernel.n_outcomes);
    for i in 0..kernel.n_outcomes {
        let joint: Vec<T> = node.state.iter().enumerate().map(|(a, q)| q.mul(kernel.prob(i, a))).collect();
        let pi = T::sum(joint.iter());
        // zero-probability branches are dropped
        if pi.is_zero() {
            continue;
        }
        let mut outcomes = node.outcomes.clone();
        outcomes.push(i);
        children.push(PathNode {
            outcomes,
            weight: node.weight.mul(&pi),
            state: joint.iter().map(|j| j.div(&pi)).collect(),
        });
    }
    children
}

impl<T: Field> OutcomeTree<T> {
    pub fn total_weight(&self) -> T {
        T::sum(self.paths.iter().map(|p| &p.weight))
    }

    /// CSV with one row per path: index, space-separated outcome labels, weight, terminal state.
    pub fn to_csv(&self, outcome_labels: &[String], pointer_labels: &[String]) -> String {
        let mut out = String::from("path,outcomes,weight");
        for l in pointer_labels {
            out.push_str(&format!(",q_{l}"));
        }
        out.push('\n');
        for (k, p) in self.paths.iter().enumerate() {
            let seq: Vec<&str> = p.outcomes.iter().map(|&i| outcome_labels[i].as_str()).collect();
            out.push_str(&format!("{k},{},{}", seq.join(" "), p.weight));
            for q in &p.state {
                out.push_str(&format!(",{q}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `Σ_paths weight · q_n(α)`.
pub fn exact_expectation<T: Field>(tree: &OutcomeTree<T>, alpha: usize) -> T {
    let terms: Vec<T> = tree.paths.iter().map(|p| p.weight.mul(&p.state[alpha])).collect();
    T::sum(terms.iter())
}

/// Total weight of paths whose terminal state satisfies `predicate`.
pub fn exact_event_probability<T: Field>(tree: &OutcomeTree<T>, predicate: impl Fn(&[T]) -> bool) -> T {
    T::sum(tree.paths.iter().filter(|p| predicate(&p.state)).map(|p| &p.weight))
}

/// Event probability given that the system sits in pointer `gamma`.
///
/// Uses `weight · q_n(γ) / q_0(γ) = Π_k p(i_k|γ)` along each path; `q0_gamma` must be nonzero.
pub fn exact_conditional_event_probability<T: Field>(
    tree: &OutcomeTree<T>,
    gamma: usize,
    q0_gamma: &T,
    predicate: impl Fn(&[T]) -> bool,
) -> T {
    let terms: Vec<T> = tree
        .paths
        .iter()
        .filter(|p| predicate(&p.state))
        .map(|p| p.weight.mul(&p.state[gamma]).div(q0_gamma))
        .collect();
    T::sum(terms.iter())
}
