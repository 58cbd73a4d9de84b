//! Quantum work statistics for driven finite-dimensional systems.
//!
//! The crate covers the whole chain from Hamiltonians to free energies:
//!
//! - [`spectral`]: Hermitian eigendecompositions, propagators, Gibbs states
//!   and seeded GUE Hamiltonians with a bounded spectral window.
//! - [`work`]: the two-point-measurement work distribution, the work POVM
//!   with explicit Kraus operators, post-measurement states and the exact
//!   Jarzynski identity.
//! - [`phase_estimation`]: a statevector simulation of the phase-estimation
//!   work sampler on an `M`-qubit ancilla, the equivalent analytic
//!   filter-convolution path, rectangular binning and seeded sampling.
//! - [`estimators`]: Jarzynski free-energy estimates from sampled work,
//!   work moments and convergence tables.
//! - [`scenarios`]: canonical quench protocols (GUE quench, two-level
//!   Stern-Gerlach quench, user-supplied matrices).

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod phase_estimation;
pub mod scenarios;
pub mod spectral;
pub mod work;

pub use error::{Error, Result};
pub use faer::{Mat, MatRef};

/// Double-precision complex scalar used throughout.
#[allow(non_camel_case_types)]
pub type c64 = faer::c64;
