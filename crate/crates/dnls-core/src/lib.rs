//! Numerical laboratory for ground states of the discrete nonlinear
//! Schrödinger equation (DNLS) on the integer lattice,
//!
//! ```text
//!     i u_t(n) - (H u)(n) + |u(n)|^6 u(n) = 0,      (H u)(n) = -(Δu)(n) + q(n) u(n),
//! ```
//!
//! for potentials q with exactly two bound states, one below the band [0,4]
//! and one above it.  In that configuration the linearization about a small
//! standing wave `e^{iωt} φ_ω` carries an internal mode ±λ(ω) whose integer
//! multiples never meet the continuous spectrum, so the mode cannot shed its
//! energy into radiation: the wave is orbitally stable but never converges
//! to a single member of the family.  The crate builds every ingredient of
//! that story so it can be checked by direct simulation:
//!
//! * [`lattice`]    — truncated-lattice fields, weighted norms, Δ and H;
//! * [`tridiag`]    — symmetric tridiagonal eigensolvers (Sturm bisection, QL);
//! * [`potential`]  — construction and certification of admissible potentials;
//! * [`scattering`] — Jost functions, Wronskians, resolvent kernels and the
//!   limiting-absorption projection for the scalar operator H;
//! * [`ground_state`] — Newton continuation of the standing-wave branch;
//! * [`linearization`] — the non-self-adjoint block operator, its discrete
//!   spectrum, and spectral projections;
//! * [`evolution`]  — split-step integration, exact linear propagators,
//!   conserved quantities and dispersive-decay measurement;
//! * [`modulation`] — decomposition of trajectories into (ω, γ, z, f) and the
//!   stability diagnostics built on it;
//! * [`normal_form`] — finite-order normal-form transformations that decouple
//!   the internal mode from radiation.

pub mod banded;
pub mod bessel;
pub mod error;
pub mod evolution;
pub mod ground_state;
pub mod lattice;
pub mod linearization;
pub mod modulation;
pub mod normal_form;
pub mod potential;
pub mod scattering;
pub mod tridiag;

pub use error::Error;
pub use lattice::{Boundary, Lattice, LatticeField, RealField, WeightedNormSpec};

/// Convenience alias used throughout the crate.
pub type Complex = num_complex::Complex64;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
