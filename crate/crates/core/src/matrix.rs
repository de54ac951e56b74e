//! Hermitian matrices, density matrices, and their spectral primitives.
//!
//! The state space is `S_D`, the density matrices: positive-semidefinite
//! Hermitian `D x D` complex matrices of unit trace.  Everything downstream
//! measures sizes in the trace norm `||A||_1 = tr sqrt(A* A)` and pairs
//! observables with the Hilbert-Schmidt inner product `<A, B> = tr(A* B)`,
//! so those two primitives live here together with a verified Hermitian
//! eigendecomposition.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::Error;
use crate::Result;

/// Entrywise tolerance for accepting a matrix as Hermitian.
///
/// Inputs are either exact by construction or produced by arithmetic whose
/// asymmetry stays within a few ulps; anything larger signals a bug upstream.
pub const HERMITICITY_TOL: f64 = 1e-12;

/// Density matrices may have eigenvalues this far below zero: rounding from
/// map applications and renormalization, never genuine negativity.
pub const PSD_TOL: f64 = 1e-10;

/// Allowed deviation of a density-matrix trace from one.
pub const TRACE_TOL: f64 = 1e-12;

/// Reconstruction bound for the eigendecomposition, `||A - V L V*||_1`
/// relative to the Frobenius norm of the input.  Nearly degenerate spectra
/// legitimately leave residuals a few orders above machine precision.
pub const EIGH_RESIDUAL_TOL: f64 = 1e-10;

/// Iteration budget of the eigensolver, in sweeps per matrix dimension.
pub const EIGH_SWEEPS_PER_DIM: usize = 100;

/// A Hermitian matrix of dimension at least two.
///
/// Construction symmetrizes the entries after verifying that the input is
/// Hermitian to within [`HERMITICITY_TOL`], so stored matrices are exactly
/// equal to their adjoints.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    mat: DMatrix<Complex64>,
}

impl HermitianMatrix {
    /// Validates shape and Hermiticity, then stores `(M + M*)/2`.
    pub fn new(mat: DMatrix<Complex64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() < 2 {
            return Err(Error::Dimension {
                expected: mat.nrows().max(2),
                found: mat.ncols(),
            });
        }
        let dev = hermiticity_deviation(&mat);
        if dev > HERMITICITY_TOL {
            return Err(Error::NotHermitian { deviation: dev });
        }
        Ok(Self::symmetrize(mat))
    }

    /// Stores `(M + M*)/2` without checking how far `M` was from Hermitian.
    ///
    /// For matrices Hermitian by construction (sums of `K X K*`, convex
    /// combinations of states) where the deviation is rounding noise.
    pub fn symmetrize(mat: DMatrix<Complex64>) -> Self {
        let adj = mat.adjoint();
        let mat = (mat + adj).scale(0.5);
        Self { mat }
    }

    /// Builds from an entry function; the result is validated as in `new`.
    pub fn from_fn(d: usize, f: impl Fn(usize, usize) -> Complex64) -> Result<Self> {
        Self::new(DMatrix::from_fn(d, d, f))
    }

    /// Real diagonal matrix.
    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        let d = entries.len();
        Self::from_fn(d, |i, j| {
            if i == j {
                Complex64::new(entries[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// Identity matrix.
    pub fn identity(d: usize) -> Self {
        Self {
            mat: DMatrix::identity(d, d),
        }
    }

    /// Matrix dimension D.
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// The underlying complex matrix.
    pub fn raw(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    /// Consumes the wrapper.
    pub fn into_raw(self) -> DMatrix<Complex64> {
        self.mat
    }

    /// Trace; real because the matrix is Hermitian.
    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    /// Eigendecomposition, eigenvalues ascending.
    pub fn eigh(&self) -> Result<Eigh> {
        eigh_raw(&self.mat)
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigh()?.eigenvalues[0])
    }

    /// Whether all eigenvalues exceed `tol`.
    pub fn is_strictly_positive(&self, tol: f64) -> Result<bool> {
        Ok(self.min_eigenvalue()? > tol)
    }
}

/// A density matrix: Hermitian, positive semidefinite within [`PSD_TOL`],
/// unit trace within [`TRACE_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    inner: HermitianMatrix,
}

impl DensityMatrix {
    /// Validates positivity and trace on top of Hermiticity.
    pub fn new(inner: HermitianMatrix) -> Result<Self> {
        let min = inner.min_eigenvalue()?;
        if min < -PSD_TOL {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min,
            });
        }
        let tr = inner.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::TraceNotOne { trace: tr });
        }
        Ok(Self { inner })
    }

    /// Wraps a matrix that is positive and unit-trace by construction
    /// (images of states under positive maps divided by their trace).
    /// Symmetrizes but skips the spectral check.
    pub(crate) fn trusted(mat: DMatrix<Complex64>) -> Self {
        Self {
            inner: HermitianMatrix::symmetrize(mat),
        }
    }

    /// The maximally mixed state I/D.
    pub fn maximally_mixed(d: usize) -> Self {
        Self {
            inner: HermitianMatrix {
                mat: DMatrix::identity(d, d).scale(1.0 / d as f64),
            },
        }
    }

    /// Pure state `uu*` from a (not necessarily normalized) vector.
    pub fn pure(v: &[Complex64]) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::Dimension {
                expected: 2,
                found: v.len(),
            });
        }
        let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if n2 <= 0.0 {
            return Err(Error::DegenerateTrace { trace: n2 });
        }
        let d = v.len();
        let mat = DMatrix::from_fn(d, d, |i, j| v[i] * v[j].conj() / n2);
        Ok(Self::trusted(mat))
    }

    /// Basis projector `|k><k|`.
    pub fn basis_projector(d: usize, k: usize) -> Result<Self> {
        if k >= d || d < 2 {
            return Err(Error::Dimension { expected: d, found: k });
        }
        let mut v = vec![Complex64::new(0.0, 0.0); d];
        v[k] = Complex64::new(1.0, 0.0);
        Self::pure(&v)
    }

    /// The Hermitian view.
    pub fn hermitian(&self) -> &HermitianMatrix {
        &self.inner
    }

    /// The underlying complex matrix.
    pub fn raw(&self) -> &DMatrix<Complex64> {
        self.inner.raw()
    }

    /// Matrix dimension D.
    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Trace, equal to one within [`TRACE_TOL`].
    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    /// Whether the state is strictly positive (all eigenvalues > `tol`).
    pub fn is_strictly_positive(&self, tol: f64) -> Result<bool> {
        self.inner.is_strictly_positive(tol)
    }
}

/// Eigendecomposition of a Hermitian matrix.
///
/// `vectors` has orthonormal eigenvector columns ordered to match
/// `eigenvalues`, which ascend.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub eigenvalues: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

/// Maximum entrywise distance between `M` and `M*`.
pub fn hermiticity_deviation(mat: &DMatrix<Complex64>) -> f64 {
    let d = mat.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in i..d {
            let dev = (mat[(i, j)] - mat[(j, i)].conj()).norm();
            worst = worst.max(dev);
        }
    }
    worst
}

/// Eigendecomposition of a raw matrix assumed Hermitian.
///
/// Backed by a tridiagonalize-and-iterate solver; the result is accepted
/// only if `||A - V L V*||_1` meets [`EIGH_RESIDUAL_TOL`], so a returned
/// decomposition is always certified, independent of how it was computed.
pub fn eigh_raw(mat: &DMatrix<Complex64>) -> Result<Eigh> {
    let d = mat.nrows();
    if d == 2 {
        return Ok(eigh_closed_2x2(mat));
    }
    let sweeps = EIGH_SWEEPS_PER_DIM * d;
    let decomp = mat
        .clone()
        .try_symmetric_eigen(f64::EPSILON, sweeps)
        .ok_or(Error::EighNonConvergence {
            sweeps,
            residual: f64::INFINITY,
        })?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| decomp.eigenvalues[a].total_cmp(&decomp.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| decomp.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(d, d);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &decomp.eigenvectors.column(i));
    }
    let mut recon = DMatrix::zeros(d, d);
    for k in 0..d {
        let v = vectors.column(k);
        let scaled = v.scale(eigenvalues[k]);
        recon += scaled * v.adjoint();
    }
    let residual = trace_norm_of_eigenvalues(&(mat - recon))?;
    if residual > EIGH_RESIDUAL_TOL * (1.0 + mat.norm()) {
        return Err(Error::EighNonConvergence { sweeps, residual });
    }
    Ok(Eigh {
        eigenvalues,
        vectors,
    })
}

// Dimension two has an exact closed form: with midpoint m and half-gap
// r = sqrt(((a - c) / 2)^2 + |b|^2), the eigenvalues are m -+ r and the
// eigenvector comes from whichever matrix row is better conditioned.
fn eigh_closed_2x2(mat: &DMatrix<Complex64>) -> Eigh {
    let a = mat[(0, 0)].re;
    let c = mat[(1, 1)].re;
    let b = (mat[(0, 1)] + mat[(1, 0)].conj()).scale(0.5);
    let mid = 0.5 * (a + c);
    let delta = 0.5 * (a - c);
    let r = delta.hypot(b.norm());
    let (x, y) = if r < f64::MIN_POSITIVE {
        (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    } else if delta >= 0.0 {
        (b, Complex64::new(-(delta + r), 0.0))
    } else {
        (Complex64::new(r - delta, 0.0), -b.conj())
    };
    let norm = (x.norm_sqr() + y.norm_sqr()).sqrt();
    let (x, y) = if norm < f64::MIN_POSITIVE {
        (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    } else {
        (x / norm, y / norm)
    };
    let vectors = DMatrix::from_column_slice(2, 2, &[x, y, -y.conj(), x.conj()]);
    Eigh {
        eigenvalues: vec![mid - r, mid + r],
        vectors,
    }
}

// Trace norm of a (nearly) Hermitian difference, via its own decomposition.
// Used only for residual certification, where the second decomposition is
// trusted to a few ulps because the argument is tiny.
fn trace_norm_of_eigenvalues(mat: &DMatrix<Complex64>) -> Result<f64> {
    let sym = (mat + mat.adjoint()).scale(0.5);
    let d = sym.nrows();
    if d == 2 {
        let e = eigh_closed_2x2(&sym);
        return Ok(e.eigenvalues[0].abs() + e.eigenvalues[1].abs());
    }
    let decomp = sym
        .try_symmetric_eigen(f64::EPSILON, EIGH_SWEEPS_PER_DIM * d)
        .ok_or(Error::EighNonConvergence {
            sweeps: EIGH_SWEEPS_PER_DIM * d,
            residual: f64::INFINITY,
        })?;
    Ok(decomp.eigenvalues.iter().map(|l| l.abs()).sum())
}

/// Hilbert-Schmidt inner product `tr(A* B)`, real for Hermitian arguments.
pub fn hs_inner(a: &HermitianMatrix, b: &HermitianMatrix) -> f64 {
    hs_inner_raw(a.raw(), b.raw())
}

/// `tr(A* B)` on raw matrices, real part.
pub fn hs_inner_raw(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        // Entrywise conj(A) . B sums to tr(A* B).
        acc += x.re * y.re + x.im * y.im;
    }
    acc
}

/// Trace norm `||A||_1 = sum |lambda_i|`.
pub fn trace_norm(a: &HermitianMatrix) -> Result<f64> {
    Ok(a.eigh()?.eigenvalues.iter().map(|l| l.abs()).sum())
}

/// Trace norm of a raw matrix assumed Hermitian.
pub fn trace_norm_raw(a: &DMatrix<Complex64>) -> Result<f64> {
    Ok(eigh_raw(a)?.eigenvalues.iter().map(|l| l.abs()).sum())
}

/// Normalizes a positive-semidefinite matrix to unit trace.
pub fn normalize_state(a: &HermitianMatrix) -> Result<DensityMatrix> {
    let min = a.min_eigenvalue()?;
    if min < -PSD_TOL {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
        });
    }
    let tr = a.trace();
    if tr <= 0.0 {
        return Err(Error::DegenerateTrace { trace: tr });
    }
    let mat = a.raw().scale(1.0 / tr);
    DensityMatrix::new(HermitianMatrix::symmetrize(mat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{haar_unit, keyed_rng};
    use nalgebra::DMatrix;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn rejects_non_square_and_small_dimensions() {
        let m = DMatrix::from_row_slice(2, 3, &[c(1.0, 0.0); 6]);
        assert!(HermitianMatrix::new(m).is_err());
        let one = DMatrix::from_row_slice(1, 1, &[c(1.0, 0.0)]);
        assert!(HermitianMatrix::new(one).is_err());
    }

    #[test]
    fn rejects_non_hermitian_entries() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[c(1.0, 0.0), c(0.5, 0.1), c(0.5, 0.1), c(2.0, 0.0)],
        );
        match HermitianMatrix::new(m) {
            Err(Error::NotHermitian { deviation }) => {
                assert!((deviation - 0.2).abs() < 1e-14, "deviation {deviation}")
            }
            other => panic!("expected Hermiticity rejection, got {other:?}"),
        }
    }

    #[test]
    fn rejects_imaginary_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 1e-6), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(HermitianMatrix::new(m).is_err());
    }

    #[test]
    fn eigh_matches_hand_computed_pauli_x() {
        // sigma_x has eigenvalues -1, +1 with eigenvectors (1, -1)/sqrt2 and (1, 1)/sqrt2.
        let m = HermitianMatrix::from_fn(2, |i, j| {
            if i != j {
                c(1.0, 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
        .unwrap();
        let e = m.eigh().unwrap();
        assert!((e.eigenvalues[0] + 1.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
        let v0 = e.vectors.column(0);
        assert!((v0[0].norm_sqr() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eigh_reconstructs_random_hermitians_to_tolerance() {
        let mut rng = keyed_rng(11, 0, 0);
        for d in [2usize, 3, 5, 8, 16] {
            let g = DMatrix::from_fn(d, d, |_, _| crate::rng::standard_complex(&mut rng));
            let h = HermitianMatrix::symmetrize(g);
            let e = h.eigh().unwrap();
            let mut recon = DMatrix::zeros(d, d);
            for k in 0..d {
                let col = e.vectors.column(k);
                recon += col.scale(e.eigenvalues[k]) * col.adjoint();
            }
            let res = trace_norm_raw(&(h.raw() - recon)).unwrap();
            let bound = EIGH_RESIDUAL_TOL * (1.0 + h.raw().norm());
            assert!(res <= bound, "residual {res} above {bound} at d = {d}");
            for k in 1..d {
                assert!(e.eigenvalues[k] >= e.eigenvalues[k - 1]);
            }
            // Columns orthonormal.
            let gram = e.vectors.adjoint() * &e.vectors;
            let dev = (&gram - DMatrix::<Complex64>::identity(d, d)).norm();
            assert!(dev < 1e-12, "gram deviation {dev}");
        }
    }

    #[test]
    fn trace_norm_sums_absolute_eigenvalues() {
        let m = HermitianMatrix::diagonal(&[3.0, -1.5, 0.25]).unwrap();
        assert!((trace_norm(&m).unwrap() - 4.75).abs() < 1e-14);
    }

    #[test]
    fn hs_inner_on_diagonals_is_dot_product() {
        let a = HermitianMatrix::diagonal(&[0.7, 0.3]).unwrap();
        let b = HermitianMatrix::diagonal(&[0.5, 0.5]).unwrap();
        assert!((hs_inner(&a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hs_inner_is_real_for_hermitian_pairs() {
        let mut rng = keyed_rng(3, 0, 1);
        let d = 4;
        let a = HermitianMatrix::symmetrize(DMatrix::from_fn(d, d, |_, _| {
            crate::rng::standard_complex(&mut rng)
        }));
        let b = HermitianMatrix::symmetrize(DMatrix::from_fn(d, d, |_, _| {
            crate::rng::standard_complex(&mut rng)
        }));
        let full = (a.raw().adjoint() * b.raw()).trace();
        assert!(full.im.abs() < 1e-12);
        assert!((hs_inner(&a, &b) - full.re).abs() < 1e-12);
    }

    #[test]
    fn density_matrix_rejects_negative_eigenvalue() {
        let m = HermitianMatrix::diagonal(&[1.1, -0.1]).unwrap();
        match DensityMatrix::new(m) {
            Err(Error::NotPositiveSemidefinite { min_eigenvalue }) => {
                assert!((min_eigenvalue + 0.1).abs() < 1e-12)
            }
            other => panic!("expected PSD rejection, got {other:?}"),
        }
    }

    #[test]
    fn density_matrix_rejects_wrong_trace() {
        let m = HermitianMatrix::diagonal(&[0.7, 0.2]).unwrap();
        assert!(matches!(
            DensityMatrix::new(m),
            Err(Error::TraceNotOne { .. })
        ));
    }

    #[test]
    fn density_matrix_accepts_tiny_negative_rounding() {
        let m = HermitianMatrix::diagonal(&[1.0 + 0.5e-10, -0.5e-10]).unwrap();
        assert!(DensityMatrix::new(m).is_ok());
    }

    #[test]
    fn normalize_state_gives_unit_trace() {
        let m = HermitianMatrix::diagonal(&[3.0, 1.0, 0.5]).unwrap();
        let s = normalize_state(&m).unwrap();
        assert!((s.trace() - 1.0).abs() <= TRACE_TOL);
        assert!((s.raw()[(0, 0)].re - 3.0 / 4.5).abs() < 1e-14);
    }

    #[test]
    fn normalize_state_rejects_zero_and_indefinite() {
        let zero = HermitianMatrix::diagonal(&[0.0, 0.0]).unwrap();
        assert!(matches!(
            normalize_state(&zero),
            Err(Error::DegenerateTrace { .. })
        ));
        let indef = HermitianMatrix::diagonal(&[2.0, -1.0]).unwrap();
        assert!(matches!(
            normalize_state(&indef),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn pure_states_are_rank_one_projectors() {
        let mut rng = keyed_rng(5, 0, 2);
        let v = haar_unit(&mut rng, 3);
        let p = DensityMatrix::pure(&v).unwrap();
        assert!((p.trace() - 1.0).abs() < 1e-12);
        let sq = p.raw() * p.raw();
        let dev = (&sq - p.raw()).norm();
        assert!(dev < 1e-12, "projector deviation {dev}");
    }

    #[test]
    fn maximally_mixed_state_is_valid() {
        let s = DensityMatrix::maximally_mixed(4);
        assert!(DensityMatrix::new(s.hermitian().clone()).is_ok());
        assert!(s.is_strictly_positive(1e-3).unwrap());
    }
}
