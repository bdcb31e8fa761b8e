//! Relative entropies and Chernoff exponents between kernel columns.
//!
//! `S(γ|α) = Σ_i p(i|γ) ln[p(i|γ)/p(i|α)]` is the mean per-step decay rate of
//! `ln q_n(α)` once the chain sits near pointer `γ`, and
//! `λ* = min_{s>0} Σ_i p(i|γ) (p(i|α)/p(i|γ))^s` is the per-step order of
//! magnitude of the probability that `q_n(α)` fails to decay. All logarithms
//! are natural.

use std::fmt::Write as _;

use crate::kernel::{KernelError, KernelSchedule, MeasurementKernel};

/// Upper end of the search for the minimizing `s`.
pub const S_MAX: f64 = 50.0;

/// KL divergence `D(p‖q)` in nats with `0 ln 0 = 0`; `+inf` when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return f64::INFINITY;
        }
        sum += pi * (pi / qi).ln();
    }
    sum.max(0.0)
}

/// `S(γ|α)`; exactly zero for pairs the kernel reports as degenerate.
pub fn relative_entropy(kernel: &MeasurementKernel, gamma: usize, alpha: usize) -> f64 {
    if gamma == alpha || is_degenerate_pair(kernel, gamma, alpha) {
        return 0.0;
    }
    kl_divergence(kernel.column(gamma), kernel.column(alpha))
}

fn is_degenerate_pair(kernel: &MeasurementKernel, a: usize, b: usize) -> bool {
    let pair = (a.min(b), a.max(b));
    kernel.degenerate_pairs().contains(&pair)
}

/// `λ(s)` for two outcome distributions; outcomes with `p(i|γ) = 0` contribute nothing.
pub fn lambda_of(p_gamma: &[f64], p_alpha: &[f64], s: f64) -> f64 {
    p_gamma
        .iter()
        .zip(p_alpha)
        .filter(|(g, _)| **g > 0.0)
        .map(|(g, a)| if *a > 0.0 { g * (a / g).powf(s) } else { 0.0 })
        .sum()
}

fn lambda_derivative(p_gamma: &[f64], p_alpha: &[f64], s: f64) -> f64 {
    p_gamma
        .iter()
        .zip(p_alpha)
        .filter(|(g, a)| **g > 0.0 && **a > 0.0)
        .map(|(g, a)| {
            let r = a / g;
            g * r.powf(s) * r.ln()
        })
        .sum()
}

pub fn chernoff_lambda(kernel: &MeasurementKernel, gamma: usize, alpha: usize, s: f64) -> f64 {
    lambda_of(kernel.column(gamma), kernel.column(alpha), s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChernoffExponent {
    pub lambda_star: f64,
    /// Minimizer; `None` for degenerate pairs.
    pub s_star: Option<f64>,
    /// The minimum sits at an end of the search interval rather than in its interior.
    pub boundary: bool,
    pub degenerate: bool,
}

impl ChernoffExponent {
    fn degenerate() -> Self {
        ChernoffExponent { lambda_star: 1.0, s_star: None, boundary: false, degenerate: true }
    }
}

pub fn chernoff_exponent(kernel: &MeasurementKernel, gamma: usize, alpha: usize) -> ChernoffExponent {
    if gamma == alpha || is_degenerate_pair(kernel, gamma, alpha) {
        return ChernoffExponent::degenerate();
    }
    minimize_cycle(&[(kernel.column(gamma), kernel.column(alpha))])
}

/// Exponent for a cycle of kernels: minimizes the geometric mean of the
/// per-phase `λ_k(s)`, i.e. the per-step rate of the product over one period.
pub fn chernoff_exponent_cycle(kernels: &[&MeasurementKernel], gamma: usize, alpha: usize) -> ChernoffExponent {
    if gamma == alpha || kernels.iter().all(|k| is_degenerate_pair(k, gamma, alpha)) {
        return ChernoffExponent::degenerate();
    }
    let pairs: Vec<(&[f64], &[f64])> = kernels.iter().map(|k| (k.column(gamma), k.column(alpha))).collect();
    minimize_cycle(&pairs)
}

/// Bisection on the derivative of the convex `h(s) = mean_k ln λ_k(s)`.
fn minimize_cycle(pairs: &[(&[f64], &[f64])]) -> ChernoffExponent {
    let l = pairs.len() as f64;
    let h = |s: f64| pairs.iter().map(|(g, a)| lambda_of(g, a, s).ln()).sum::<f64>() / l;
    let dh = |s: f64| pairs.iter().map(|(g, a)| lambda_derivative(g, a, s) / lambda_of(g, a, s)).sum::<f64>() / l;

    let (mut lo, mut hi) = if dh(1.0) >= 0.0 { (0.0, 1.0) } else { (1.0, S_MAX) };
    if hi == S_MAX && dh(S_MAX) < 0.0 {
        return ChernoffExponent {
            lambda_star: h(S_MAX).exp(),
            s_star: Some(S_MAX),
            boundary: true,
            degenerate: false,
        };
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dh(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    ChernoffExponent { lambda_star: h(s).exp(), s_star: Some(s), boundary: s < 1e-9, degenerate: false }
}

/// `S` and `λ*` for every ordered pointer pair.
#[derive(Debug, Clone)]
pub struct RateTable {
    pub pointers: Vec<String>,
    /// `entropy[γ][α] = S(γ|α)`, zero on the diagonal.
    pub entropy: Vec<Vec<f64>>,
    pub exponents: Vec<Vec<ChernoffExponent>>,
}

pub fn rate_table(kernel: &MeasurementKernel) -> RateTable {
    let n = kernel.n_pointers();
    RateTable {
        pointers: kernel.pointer_labels().to_vec(),
        entropy: (0..n).map(|g| (0..n).map(|a| relative_entropy(kernel, g, a)).collect()).collect(),
        exponents: (0..n).map(|g| (0..n).map(|a| chernoff_exponent(kernel, g, a)).collect()).collect(),
    }
}

/// Schedule-averaged table: `S` is the mean over one period, `λ*` comes from
/// [`chernoff_exponent_cycle`].
pub fn rate_table_schedule(schedule: &KernelSchedule) -> Result<RateTable, KernelError> {
    let kernels = schedule.kernels_over_period()?;
    let refs: Vec<&MeasurementKernel> = kernels.iter().map(|k| k.as_ref()).collect();
    let n = schedule.n_pointers();
    let l = refs.len() as f64;
    Ok(RateTable {
        pointers: schedule.base().pointer_labels().to_vec(),
        entropy: (0..n)
            .map(|g| (0..n).map(|a| refs.iter().map(|k| relative_entropy(k, g, a)).sum::<f64>() / l).collect())
            .collect(),
        exponents: (0..n).map(|g| (0..n).map(|a| chernoff_exponent_cycle(&refs, g, a)).collect()).collect(),
    })
}

impl RateTable {
    /// One row per ordered pair `γ ≠ α`; infinite entropies are written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma,alpha,S,lambda_star,s_star,boundary,degenerate\n");
        for (g, row) in self.exponents.iter().enumerate() {
            for (a, e) in row.iter().enumerate() {
                if g == a {
                    continue;
                }
                let s_star = e.s_star.map(|s| s.to_string()).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    self.pointers[g],
                    self.pointers[a],
                    fmt_f64(self.entropy[g][a]),
                    e.lambda_star,
                    s_star,
                    e.boundary,
                    e.degenerate
                )
                .expect("write to string");
            }
        }
        out
    }
}

fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else {
        x.to_string()
    }
}
