//! Random compositions of positive maps on matrix algebras.
//!
//! This crate simulates products `Phi_n = phi_n . phi_{n-1} . ... . phi_1` of
//! random positive linear maps on the D x D complex matrices, driven by a
//! stationary ergodic process (i.i.d. draws, a finite-state Markov chain, an
//! irrational rotation, or a constant sequence).  It provides the projective
//! (Hilbert-type) metric on positive-semidefinite matrices, contraction
//! diagnostics for positive maps, overflow-free scaled products, estimators
//! for the top Lyapunov exponent and its Gaussian fluctuations, and the
//! mixing-condition checks under which those fluctuation results apply.
//!
//! Modules are layered bottom-up:
//!
//! * [`matrix`]: Hermitian and density matrices, Hilbert-Schmidt pairing,
//!   trace norm, eigendecomposition.
//! * [`maps`]: positive maps in Kraus or superoperator form, positivity and
//!   irreducibility certificates, Perron eigenpairs, named map families.
//! * [`metric`]: the projective metric `d(A,B)` on states, weight
//!   coefficients `m(A,B)`, and contraction coefficients of maps.
//! * [`drivers`]: stationary ergodic map-valued processes with reproducible
//!   two-sided sampling.
//! * [`cocycle`]: scaled forward/backward products along a path, stopping
//!   times, Perron sequences, and backward-limit state estimation.
//! * [`stats`]: Lyapunov exponent and contraction-rate estimators, law of
//!   large numbers diagnostics, central limit theorem sampling, variance
//!   estimators, normality tests, and the mixing-condition gate.

pub mod cocycle;
pub mod drivers;
pub mod error;
pub mod maps;
pub mod matrix;
pub mod metric;
pub mod rng;
pub mod stats;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
