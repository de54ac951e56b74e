//! Error type shared by every module of the crate.

use num_complex::Complex64;
use thiserror::Error;

/// Everything that can go wrong across the crate.
///
/// Numerical failures carry the quantity that violated its bound so callers
/// can report how far off the input was, not only that it was rejected.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A matrix or vector had the wrong shape.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    /// Matrix entries deviate from Hermitian symmetry beyond tolerance.
    #[error("matrix is not Hermitian: max entry deviation {deviation:.3e}")]
    NotHermitian { deviation: f64 },

    /// A claimed positive-semidefinite matrix has a negative eigenvalue.
    #[error("matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:.3e}")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    /// A claimed state has trace away from one.
    #[error("trace is {trace:.17e}, expected 1 within tolerance")]
    TraceNotOne { trace: f64 },

    /// Normalization was requested for a matrix of non-positive trace.
    #[error("cannot normalize: trace {trace:.3e} is not positive")]
    DegenerateTrace { trace: f64 },

    /// The Hermitian eigensolver did not meet its residual bound in the
    /// allowed number of sweeps.
    #[error("eigendecomposition did not converge after {sweeps} sweeps, residual {residual:.3e}")]
    EighNonConvergence { sweeps: usize, residual: f64 },

    /// A fixed-point or power iteration stalled; the last residual is kept.
    #[error("iteration did not converge after {iterations} steps, residual {residual:.3e}")]
    NonConvergence { iterations: usize, residual: f64 },

    /// A map representation is structurally invalid.
    #[error("invalid map: {0}")]
    InvalidMap(String),

    /// A named map expression could not be parsed.
    #[error("cannot parse map expression: {0}")]
    ParseFamily(String),

    /// A map annihilated a state it was applied to projectively.
    #[error("map sent a state to trace {trace:.3e}; projective action undefined")]
    DestructiveImage {
        trace: f64,
        /// Unit vector u whose pure state uu* was annihilated.
        witness: Vec<Complex64>,
    },

    /// A driver description is invalid (bad probabilities, bad transition
    /// matrix, wrong table length, ...).
    #[error("invalid driver: {0}")]
    InvalidDriver(String),

    /// The rotation angle is too close to a rational with small denominator
    /// for the orbit to equidistribute over usable horizons.
    #[error("rotation angle within {distance:.3e} of a rational with denominator {denominator}")]
    NearRational { denominator: u64, distance: f64 },

    /// A path window would materialize more maps than the configured limit.
    #[error("window of {requested} maps exceeds limit {limit}; use streaming access")]
    WindowTooLarge { requested: u64, limit: u64 },

    /// The driver kind cannot shift its seed stream explicitly.
    #[error("driver kind {kind} does not support explicit shifts")]
    UnsupportedShift { kind: &'static str },

    /// Too many replicas of an ensemble experiment failed.
    #[error("{failed} of {total} replicas failed; above the tolerated fraction")]
    ReplicaFailures { failed: usize, total: usize },

    /// A statistic was requested whose validity gate did not pass.
    #[error("mixing gate not passed: {reason}")]
    GateNotApplicable { reason: String },

    /// A stopping time was not observed within the search horizon.
    #[error("stopping time not reached within horizon {horizon}")]
    HorizonExhausted { horizon: u64 },

    /// The operation was called in a way its contract forbids.
    #[error("usage: {0}")]
    Usage(String),
}
