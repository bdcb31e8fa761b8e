//! Repeated indirect quantum non-demolition measurements as a Markov chain on
//! the probability simplex over pointer states.
//!
//! The chain is driven by a [`kernel::MeasurementKernel`] `p(i|α)`; each probe
//! outcome updates the pointer distribution by Bayes' rule
//! ([`simplex::bayes_update`]). Around it sit an explicit unitary probe layer,
//! information-theoretic rates, a parallel trajectory engine, an exact
//! enumeration oracle and pointer-state inference.

pub mod config;
pub mod ensemble;
pub mod inference;
pub mod info;
pub mod kernel;
pub mod oracle;
pub mod records;
pub mod simplex;
pub mod trajectory;
pub mod unitary;

pub use kernel::{check_nondegeneracy, validate_kernel, KernelError, KernelSchedule, MeasurementKernel};
pub use simplex::{bayes_update, outcome_distribution, SimplexState};
