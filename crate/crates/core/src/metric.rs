//! The projective metric on states and contraction coefficients of maps.
//!
//! For states `A, B` the weight coefficient is `m(A, B) = sup { l >= 0 :
//! l B <= A }`, and the metric is
//!
//! ```text
//! d(A, B) = (1 - m(A,B) m(B,A)) / (1 + m(A,B) m(B,A))
//! ```
//!
//! `d` is a metric on the strictly positive states, extended to boundary
//! pairs where it saturates at 1 whenever exactly one argument is singular.
//! It relates to the logarithmic (Hilbert-type) metric `h = -ln(m m')` by
//! `d = tanh(h / 2)`, dominates half the trace-norm distance, and never
//! exceeds 1.
//!
//! The contraction coefficient of a positive map,
//!
//! ```text
//! c(phi) = sup { d(phi.A, phi.B) : A, B in S_D }
//! ```
//!
//! (`phi.A` the projective action), is estimated from below by sampling
//! pure-state pairs with local ascent, or, for qubits, by brute force over a
//! Bloch-sphere grid, where a closed form for `m` in Bloch coordinates makes
//! the quarter-billion pair evaluations affordable.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::Error;
use crate::maps::PositiveMap;
use crate::matrix::{self, DensityMatrix, Eigh, HermitianMatrix};
use crate::rng::{haar_unit, keyed_rng, DOMAIN_CONTRACTION};
use crate::Result;

/// Eigenvalues above this are treated as support; below, as kernel.  Sits an
/// order of magnitude above the density-matrix PSD slack so rounding debris
/// is never mistaken for support.
pub const SUPPORT_TOL: f64 = 1e-9;

/// Traces at or below this mark a projective image as destroyed.
pub const DESTRUCTIVE_TOL: f64 = 1e-12;

/// Residual bound for the cross-term condition in the singular-support
/// branch of `m`; violations beyond it mean the input was not positive
/// semidefinite to working precision.
const CROSS_TERM_TOL: f64 = 1e-7;

/// Azimuth count of the exhaustive qubit grid.
pub const EXHAUSTIVE_AZIMUTH: usize = 200;
/// Polar count of the exhaustive qubit grid (cell centers, poles excluded).
pub const EXHAUSTIVE_POLAR: usize = 100;
/// Ascent steps refining the best exhaustive grid pair; together with the
/// grid this resolves the supremum to about 1e-3 or better.
pub const EXHAUSTIVE_REFINE: usize = 30;

/// The metric value together with both weight coefficients.
#[derive(Debug, Clone, Copy)]
pub struct MetricValue {
    /// `d(A, B)`.
    pub value: f64,
    /// `m(A, B)`.
    pub m_ab: f64,
    /// `m(B, A)`.
    pub m_ba: f64,
    /// Set when exactly one argument is strictly positive, which forces
    /// `value = 1` through a vanishing weight product.
    pub boundary: bool,
}

/// `m(A, B) = sup { l >= 0 : l B <= A }`, clamped to `[0, 1]` (states).
///
/// Strictly positive `B` reduces to `lambda_min(B^{-1/2} A B^{-1/2})`.
/// Otherwise any kernel vector of `A` carrying `B`-weight forces 0, and the
/// remaining case restricts to the support of `B`, eliminating the kernel
/// block of `A` through its Schur complement.
pub fn m_coeff(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let ae = a.hermitian().eigh()?;
    let be = b.hermitian().eigh()?;
    m_coeff_with(a, &ae, b, &be)
}

fn m_coeff_with(a: &DensityMatrix, ae: &Eigh, b: &DensityMatrix, be: &Eigh) -> Result<f64> {
    let d = a.dim();
    if be.eigenvalues[0] > SUPPORT_TOL {
        // B strictly positive: generalized eigenvalue bound.
        let inv_half = spectral_power(be, -0.5, d);
        let core = HermitianMatrix::symmetrize(&inv_half * a.raw() * &inv_half);
        let lo = core.min_eigenvalue()?;
        return Ok(lo.clamp(0.0, 1.0));
    }
    // Any kernel direction of A seen by B forces the supremum to zero.
    for (idx, &lam) in ae.eigenvalues.iter().enumerate() {
        if lam > SUPPORT_TOL {
            break;
        }
        let v = ae.vectors.column(idx);
        let bv = (v.adjoint() * b.raw() * v)[(0, 0)].re;
        if bv > SUPPORT_TOL {
            return Ok(0.0);
        }
    }
    // Restrict to supp(B) in B's eigenbasis; fold A's action on ker(B)
    // through the Schur complement.
    let support: Vec<usize> = (0..d).filter(|&i| be.eigenvalues[i] > SUPPORT_TOL).collect();
    let kernel: Vec<usize> = (0..d).filter(|&i| be.eigenvalues[i] <= SUPPORT_TOL).collect();
    let r = support.len();
    if r == 0 {
        return Err(Error::DegenerateTrace { trace: b.trace() });
    }
    let u_s = select_columns(&be.vectors, &support);
    let u_k = select_columns(&be.vectors, &kernel);
    let a11 = u_s.adjoint() * a.raw() * &u_s;
    let a12 = u_s.adjoint() * a.raw() * &u_k;
    let a22 = HermitianMatrix::symmetrize(u_k.adjoint() * a.raw() * &u_k);
    let a22e = a22.eigh()?;
    // Pseudoinverse of the kernel block, and the cross-term residual
    // ||(I - A22 A22+) A21||: nonzero only for inputs that were not PSD.
    let a22_pinv = spectral_pinv(&a22e, kernel.len());
    let projector = &a22.into_raw() * &a22_pinv;
    let ident = DMatrix::<Complex64>::identity(kernel.len().max(1), kernel.len().max(1));
    if !kernel.is_empty() {
        let residual = ((&ident - &projector) * a12.adjoint()).norm();
        if residual > CROSS_TERM_TOL {
            return Ok(0.0);
        }
    }
    let schur = if kernel.is_empty() {
        a11.clone()
    } else {
        &a11 - &a12 * &a22_pinv * a12.adjoint()
    };
    // B restricted to its support is diagonal in this basis.
    let scale = DMatrix::from_fn(r, r, |i, j| {
        if i == j {
            Complex64::new(be.eigenvalues[support[i]].sqrt().recip(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let core = HermitianMatrix::symmetrize(&scale * schur * &scale);
    let lo = matrix::eigh_raw(core.raw())?.eigenvalues[0];
    Ok(lo.clamp(0.0, 1.0))
}

/// The metric `d(A, B)` with its weight coefficients.
pub fn dist(a: &DensityMatrix, b: &DensityMatrix) -> Result<MetricValue> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let ae = a.hermitian().eigh()?;
    let be = b.hermitian().eigh()?;
    let m_ab = m_coeff_with(a, &ae, b, &be)?;
    let m_ba = m_coeff_with(b, &be, a, &ae)?;
    let product = m_ab * m_ba;
    let value = (1.0 - product) / (1.0 + product);
    let a_interior = ae.eigenvalues[0] > SUPPORT_TOL;
    let b_interior = be.eigenvalues[0] > SUPPORT_TOL;
    Ok(MetricValue {
        value,
        m_ab,
        m_ba,
        boundary: a_interior != b_interior,
    })
}

/// The logarithmic metric `h(A, B) = -ln(m(A,B) m(B,A))`, infinite on
/// boundary pairs; satisfies `d = tanh(h/2)`.
pub fn hilbert_metric(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    let mv = dist(a, b)?;
    let product = mv.m_ab * mv.m_ba;
    if product <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-product.ln())
}

fn select_columns(m: &DMatrix<Complex64>, cols: &[usize]) -> DMatrix<Complex64> {
    let d = m.nrows();
    DMatrix::from_fn(d, cols.len(), |i, j| m[(i, cols[j])])
}

fn spectral_power(e: &Eigh, p: f64, d: usize) -> DMatrix<Complex64> {
    let mut acc = DMatrix::zeros(d, d);
    for k in 0..d {
        let col = e.vectors.column(k);
        acc += col.scale(e.eigenvalues[k].powf(p)) * col.adjoint();
    }
    acc
}

fn spectral_pinv(e: &Eigh, d: usize) -> DMatrix<Complex64> {
    let mut acc = DMatrix::zeros(d, d);
    for k in 0..d {
        if e.eigenvalues[k].abs() > SUPPORT_TOL {
            let col = e.vectors.column(k);
            acc += col.scale(e.eigenvalues[k].recip()) * col.adjoint();
        }
    }
    acc
}

/// How to search for the contraction coefficient.
#[derive(Debug, Clone)]
pub enum ContractionStrategy {
    /// Haar pure-state pairs with local ascent; a lower bound at any D.
    Sampled {
        n_pairs: usize,
        n_refine: usize,
        seed: u64,
    },
    /// Brute force over the qubit Bloch grid
    /// ([`EXHAUSTIVE_AZIMUTH`] x [`EXHAUSTIVE_POLAR`] per state) with
    /// [`EXHAUSTIVE_REFINE`] ascent steps; D = 2 only.
    ExhaustiveQubit,
}

impl ContractionStrategy {
    /// Exhaustive on qubits, sampled defaults elsewhere.
    pub fn default_for_dim(d: usize) -> Self {
        if d == 2 {
            Self::ExhaustiveQubit
        } else {
            Self::Sampled {
                n_pairs: 500,
                n_refine: 30,
                seed: 0,
            }
        }
    }
}

/// Estimated contraction coefficient.
#[derive(Debug, Clone)]
pub struct ContractionEstimate {
    /// Best observed `d(phi.A, phi.B)`; a certified supremum only up to grid
    /// resolution when `exhaustive`, otherwise a plain lower bound.
    pub lower: f64,
    /// Whether the qubit grid search produced this value.
    pub exhaustive: bool,
    /// The pure argument pair attaining `lower`; re-evaluating
    /// `d(phi.A, phi.B)` on it reproduces `lower` within 1e-12.
    pub attained_at: (DensityMatrix, DensityMatrix),
    /// Pairs examined before refinement.
    pub n_pairs: usize,
}

/// Estimates `c(phi) = sup d(phi.A, phi.B)`.
///
/// Fails with the annihilated witness if the map destroys a sampled pure
/// state (trace at or below [`DESTRUCTIVE_TOL`]).
pub fn contraction_coeff(
    phi: &PositiveMap,
    strategy: &ContractionStrategy,
) -> Result<ContractionEstimate> {
    match strategy {
        ContractionStrategy::Sampled {
            n_pairs,
            n_refine,
            seed,
        } => contraction_sampled(phi, *n_pairs, *n_refine, *seed),
        ContractionStrategy::ExhaustiveQubit => contraction_exhaustive_qubit(phi),
    }
}

/// Contraction estimate with the default strategy for the map's dimension.
pub fn contraction_default(phi: &PositiveMap) -> Result<ContractionEstimate> {
    contraction_coeff(phi, &ContractionStrategy::default_for_dim(phi.dim()))
}

fn project_checked(phi: &PositiveMap, u: &[Complex64]) -> Result<DensityMatrix> {
    let state = DensityMatrix::pure(u)?;
    let image = phi.apply_raw(state.raw());
    let tr = image.trace().re;
    if tr <= DESTRUCTIVE_TOL {
        return Err(Error::DestructiveImage {
            trace: tr,
            witness: u.to_vec(),
        });
    }
    Ok(DensityMatrix::trusted(image.scale(1.0 / tr)))
}

fn contraction_sampled(
    phi: &PositiveMap,
    n_pairs: usize,
    n_refine: usize,
    seed: u64,
) -> Result<ContractionEstimate> {
    let d = phi.dim();
    let mut rng = keyed_rng(seed, DOMAIN_CONTRACTION, 0);
    let mut best = f64::NEG_INFINITY;
    let mut best_pair = (vec![], vec![]);
    for _ in 0..n_pairs {
        let u = haar_unit(&mut rng, d);
        let v = haar_unit(&mut rng, d);
        let val = dist(&project_checked(phi, &u)?, &project_checked(phi, &v)?)?.value;
        if val > best {
            best = val;
            best_pair = (u, v);
        }
    }
    let mut radius = 0.2;
    for _ in 0..n_refine {
        let mut improved = false;
        for _ in 0..4 {
            let cu = perturb(&best_pair.0, radius, &mut rng);
            let cv = perturb(&best_pair.1, radius, &mut rng);
            let val = dist(&project_checked(phi, &cu)?, &project_checked(phi, &cv)?)?.value;
            if val > best {
                best = val;
                best_pair = (cu, cv);
                improved = true;
            }
        }
        radius *= if improved { 1.1 } else { 0.65 };
    }
    let a = DensityMatrix::pure(&best_pair.0)?;
    let b = DensityMatrix::pure(&best_pair.1)?;
    let lower = dist(
        &project_checked(phi, &best_pair.0)?,
        &project_checked(phi, &best_pair.1)?,
    )?
    .value;
    Ok(ContractionEstimate {
        lower,
        exhaustive: false,
        attained_at: (a, b),
        n_pairs,
    })
}

fn perturb(u: &[Complex64], radius: f64, rng: &mut rand_chacha::ChaCha12Rng) -> Vec<Complex64> {
    let mut cand: Vec<Complex64> = u
        .iter()
        .map(|z| z + crate::rng::standard_complex(rng) * radius)
        .collect();
    let norm: f64 = cand.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for z in &mut cand {
            *z /= norm;
        }
        cand
    } else {
        u.to_vec()
    }
}

// ---------------------------------------------------------------------------
// Qubit Bloch machinery.

/// Bloch vector `(tr(sigma_x A), tr(sigma_y A), tr(sigma_z A))` of a qubit
/// state.
pub fn bloch_vector(a: &DensityMatrix) -> [f64; 3] {
    let m = a.raw();
    [
        2.0 * m[(0, 1)].re,
        -2.0 * m[(0, 1)].im,
        (m[(0, 0)] - m[(1, 1)]).re,
    ]
}

/// Weight coefficient `m(A, B)` from Bloch vectors.
///
/// With `e1 = 1 - |a|^2`, `e2 = 1 - |b|^2`, `c1 = 1 - a.b` and
/// `s = sqrt(c1^2 - e1 e2)`, the supremum is `min(e1 / (c1 + s), 1)`;
/// the rationalized form stays stable as either state approaches purity.
pub fn m_bloch(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let aa = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).min(1.0);
    let bb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).min(1.0);
    let c1 = 1.0 - (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]);
    let e1 = 1.0 - aa;
    let e2 = 1.0 - bb;
    let s = (c1 * c1 - e1 * e2).max(0.0).sqrt();
    let denom = c1 + s;
    if denom < 1e-15 {
        // Identical pure states.
        return 1.0;
    }
    (e1 / denom).min(1.0)
}

/// Weight product `m(A,B) m(B,A)` from Bloch vectors; `d = (1-p)/(1+p)`.
pub fn weight_product_bloch(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    m_bloch(a, b) * m_bloch(b, a)
}

/// Pauli transfer matrix of a qubit map: `T[nu][mu] = tr(sigma_nu
/// phi(sigma_mu)) / 2` over the basis `(I, sigma_x, sigma_y, sigma_z)`.
pub fn pauli_transfer(phi: &PositiveMap) -> Result<[[f64; 4]; 4]> {
    if phi.dim() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            found: phi.dim(),
        });
    }
    let basis = pauli_basis();
    let mut t = [[0.0; 4]; 4];
    for mu in 0..4 {
        let image = phi.apply_raw(&basis[mu]);
        for nu in 0..4 {
            t[nu][mu] = 0.5 * matrix::hs_inner_raw(&basis[nu], &image);
        }
    }
    Ok(t)
}

fn pauli_basis() -> [DMatrix<Complex64>; 4] {
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    [
        DMatrix::from_row_slice(2, 2, &[one, z, z, one]),
        DMatrix::from_row_slice(2, 2, &[z, one, one, z]),
        DMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        DMatrix::from_row_slice(2, 2, &[one, z, z, -one]),
    ]
}

fn unit_from_angles(az: f64, pol: f64) -> [f64; 3] {
    let (saz, caz) = az.sin_cos();
    let (spol, cpol) = pol.sin_cos();
    [spol * caz, spol * saz, cpol]
}

fn pure_from_angles(az: f64, pol: f64) -> Vec<Complex64> {
    let half = pol / 2.0;
    vec![
        Complex64::new(half.cos(), 0.0),
        Complex64::new(half.sin() * az.cos(), half.sin() * az.sin()),
    ]
}

fn contraction_exhaustive_qubit(phi: &PositiveMap) -> Result<ContractionEstimate> {
    use rand::Rng;
    let t = pauli_transfer(phi)?;
    let n_az = EXHAUSTIVE_AZIMUTH;
    let n_pol = EXHAUSTIVE_POLAR;
    let n = n_az * n_pol;
    // Image Bloch vector and purity deficit 1 - |v|^2 per grid direction.
    let mut points: Vec<([f64; 3], f64)> = Vec::with_capacity(n);
    let mut angles = Vec::with_capacity(n);
    for j in 0..n_pol {
        let pol = std::f64::consts::PI * (j as f64 + 0.5) / n_pol as f64;
        for i in 0..n_az {
            let az = 2.0 * std::f64::consts::PI * i as f64 / n_az as f64;
            let r = unit_from_angles(az, pol);
            let (tr, v) = transfer_apply(&t, &r);
            if tr <= DESTRUCTIVE_TOL {
                return Err(Error::DestructiveImage {
                    trace: tr,
                    witness: pure_from_angles(az, pol),
                });
            }
            let e = (1.0 - (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).max(0.0);
            points.push((v, e));
            angles.push((az, pol));
        }
    }
    // Minimize the weight product over all pairs; d is monotone in it.
    // Ties break lexicographically on indices so the winner is independent
    // of thread count.
    let best = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut local = (f64::INFINITY, 0usize, 0usize);
            let (pi, ei) = points[i];
            for (off, &(pj, ej)) in points[i + 1..].iter().enumerate() {
                let c1 = 1.0 - (pi[0] * pj[0] + pi[1] * pj[1] + pi[2] * pj[2]);
                let s = (c1 * c1 - ei * ej).max(0.0).sqrt();
                let denom = c1 + s;
                let p = if denom < 1e-15 {
                    1.0
                } else {
                    (ei / denom).min(1.0) * (ej / denom).min(1.0)
                };
                let j = i + 1 + off;
                if (p, i, j) < local {
                    local = (p, i, j);
                }
            }
            local
        })
        .min_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or((f64::INFINITY, 0, 0));
    let (mut best_product, bi, bj) = best;
    let mut best_angles = [angles[bi].0, angles[bi].1, angles[bj].0, angles[bj].1];
    // Angular ascent from the best grid cell.
    let mut rng = keyed_rng(0, DOMAIN_CONTRACTION, 1);
    let mut radius = 2.0 * std::f64::consts::PI / n_az as f64;
    for _ in 0..EXHAUSTIVE_REFINE {
        let mut improved = false;
        for _ in 0..6 {
            let mut cand = best_angles;
            for c in &mut cand {
                *c += radius * rng.gen_range(-1.0..1.0);
            }
            let ra = unit_from_angles(cand[0], cand[1]);
            let rb = unit_from_angles(cand[2], cand[3]);
            let (ta, va) = transfer_apply(&t, &ra);
            let (tb, vb) = transfer_apply(&t, &rb);
            if ta <= DESTRUCTIVE_TOL || tb <= DESTRUCTIVE_TOL {
                continue;
            }
            let p = weight_product_bloch(&va, &vb);
            if p < best_product {
                best_product = p;
                best_angles = cand;
                improved = true;
            }
        }
        radius *= if improved { 1.05 } else { 0.6 };
    }
    let ua = pure_from_angles(best_angles[0], best_angles[1]);
    let ub = pure_from_angles(best_angles[2], best_angles[3]);
    let a = DensityMatrix::pure(&ua)?;
    let b = DensityMatrix::pure(&ub)?;
    let lower = dist(&project_checked(phi, &ua)?, &project_checked(phi, &ub)?)?.value;
    Ok(ContractionEstimate {
        lower,
        exhaustive: true,
        attained_at: (a, b),
        n_pairs: n * (n - 1) / 2,
    })
}

fn transfer_apply(t: &[[f64; 4]; 4], r: &[f64; 3]) -> (f64, [f64; 3]) {
    let tr = t[0][0] + t[0][1] * r[0] + t[0][2] * r[1] + t[0][3] * r[2];
    let v = [
        (t[1][0] + t[1][1] * r[0] + t[1][2] * r[1] + t[1][3] * r[2]) / tr,
        (t[2][0] + t[2][1] * r[0] + t[2][2] * r[1] + t[2][3] * r[2]) / tr,
        (t[3][0] + t[3][1] * r[0] + t[3][2] * r[1] + t[3][3] * r[2]) / tr,
    ];
    (tr, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::families::{
        amplitude_damping, depolarizing, kraus_conjugation, random_strictly_positive,
    };
    use crate::matrix::trace_norm_raw;
    use approx::assert_abs_diff_eq;

    fn diag_state(entries: &[f64]) -> DensityMatrix {
        DensityMatrix::new(HermitianMatrix::diagonal(entries).unwrap()).unwrap()
    }

    fn random_interior_state(d: usize, seed: u64, index: i64) -> DensityMatrix {
        let mut rng = keyed_rng(seed, DOMAIN_CONTRACTION, index);
        let g = DMatrix::from_fn(d, d, |_, _| crate::rng::standard_complex(&mut rng));
        let mut m = &g * g.adjoint();
        // A floor keeps the sample away from the boundary.
        for i in 0..d {
            m[(i, i)] += Complex64::new(0.05 * d as f64, 0.0);
        }
        let tr = m.trace().re;
        DensityMatrix::new(HermitianMatrix::symmetrize(m.scale(1.0 / tr))).unwrap()
    }

    fn random_unitary(d: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = keyed_rng(seed, DOMAIN_CONTRACTION, 77);
        let g = DMatrix::from_fn(d, d, |_, _| crate::rng::standard_complex(&mut rng));
        g.qr().q()
    }

    #[test]
    fn diagonal_pair_has_exact_value() {
        let a = diag_state(&[0.7, 0.3]);
        let b = diag_state(&[0.5, 0.5]);
        let mv = dist(&a, &b).unwrap();
        assert_abs_diff_eq!(mv.m_ab, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(mv.m_ba, 5.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mv.value, 0.4, epsilon = 1e-12);
        assert!(!mv.boundary);
    }

    #[test]
    fn equal_support_singular_pair_uses_support_restriction() {
        let a = diag_state(&[0.5, 0.5, 0.0]);
        let b = diag_state(&[0.3, 0.7, 0.0]);
        let mv = dist(&a, &b).unwrap();
        assert_abs_diff_eq!(mv.m_ab, 5.0 / 7.0, epsilon = 1e-10);
        assert_abs_diff_eq!(mv.m_ba, 0.6, epsilon = 1e-10);
        assert_abs_diff_eq!(mv.value, 0.4, epsilon = 1e-10);
        assert!(!mv.boundary, "neither argument is strictly positive");
    }

    #[test]
    fn kernel_mismatch_saturates_the_metric() {
        let pure = DensityMatrix::basis_projector(2, 0).unwrap();
        let mixed = DensityMatrix::maximally_mixed(2);
        let mv = dist(&pure, &mixed).unwrap();
        assert_eq!(mv.m_ab, 0.0);
        assert_abs_diff_eq!(mv.m_ba, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(mv.value, 1.0, epsilon = 1e-15);
        assert!(mv.boundary);
        assert_eq!(hilbert_metric(&pure, &mixed).unwrap(), f64::INFINITY);
    }

    #[test]
    fn distinct_pure_states_are_at_maximal_distance() {
        let u = DensityMatrix::pure(&[
            Complex64::new(0.8, 0.0),
            Complex64::new(0.0, 0.6),
        ])
        .unwrap();
        let v = DensityMatrix::basis_projector(2, 0).unwrap();
        let mv = dist(&u, &v).unwrap();
        assert_eq!(mv.value, 1.0);
        assert!(!mv.boundary, "both arguments are singular");
    }

    // The supremum has a variational twin: m(A, B) is the infimum of
    // tr[X A] / tr[X B] over states X with tr[X B] > 0.  Sampling the
    // ratio can only sit above m, and the transformed bottom eigenvector
    // attains it.
    #[test]
    fn variational_characterization_agrees() {
        for idx in 0..4 {
            let d = if idx % 2 == 0 { 2 } else { 3 };
            let a = random_interior_state(d, 11, idx);
            let b = random_interior_state(d, 12, idx);
            let m = m_coeff(&a, &b).unwrap();
            let mut rng = keyed_rng(21, DOMAIN_CONTRACTION, idx);
            let mut sampled = f64::INFINITY;
            for _ in 0..4000 {
                let x = DensityMatrix::pure(&haar_unit(&mut rng, d)).unwrap();
                let num = matrix::hs_inner_raw(x.raw(), a.raw());
                let den = matrix::hs_inner_raw(x.raw(), b.raw());
                if den > 1e-12 {
                    sampled = sampled.min(num / den);
                }
            }
            assert!(
                sampled >= m - 1e-12,
                "sampled ratio {sampled} undercuts supremum {m}"
            );
            assert!(sampled <= m + 0.05, "sampling far from tight: {sampled} vs {m}");
            // Exact witness: X = B^{-1/2} w w* B^{-1/2} for the bottom
            // eigenvector w of B^{-1/2} A B^{-1/2}.
            let be = b.hermitian().eigh().unwrap();
            let inv_half = spectral_power(&be, -0.5, d);
            let core = HermitianMatrix::symmetrize(&inv_half * a.raw() * &inv_half);
            let ce = core.eigh().unwrap();
            let w = ce.vectors.column(0);
            let x_raw = &inv_half * (w * w.adjoint()) * &inv_half;
            let num = matrix::hs_inner_raw(&x_raw, a.raw());
            let den = matrix::hs_inner_raw(&x_raw, b.raw());
            assert_abs_diff_eq!(num / den, m, epsilon = 1e-9);
        }
    }

    #[test]
    fn metric_axioms_hold_on_interior_states() {
        for idx in 0..6 {
            let d = if idx % 2 == 0 { 2 } else { 3 };
            let a = random_interior_state(d, 31, idx);
            let b = random_interior_state(d, 32, idx);
            let c = random_interior_state(d, 33, idx);
            let dab = dist(&a, &b).unwrap();
            let dba = dist(&b, &a).unwrap();
            let dac = dist(&a, &c).unwrap();
            let dcb = dist(&c, &b).unwrap();
            assert_abs_diff_eq!(dab.value, dba.value, epsilon = 1e-13);
            assert!(dab.value >= 0.0 && dab.value <= 1.0);
            assert!(
                dab.value <= dac.value + dcb.value + 1e-9,
                "triangle violated: {} > {} + {}",
                dab.value,
                dac.value,
                dcb.value
            );
            assert_abs_diff_eq!(dist(&a, &a).unwrap().value, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn metric_dominates_half_trace_distance() {
        for idx in 0..6 {
            let d = if idx % 2 == 0 { 2 } else { 4 };
            let a = random_interior_state(d, 41, idx);
            let b = random_interior_state(d, 42, idx);
            let tn = trace_norm_raw(&(a.raw() - b.raw())).unwrap();
            let val = dist(&a, &b).unwrap().value;
            assert!(
                val >= 0.5 * tn - 1e-12,
                "d = {val} below half trace distance {}",
                0.5 * tn
            );
            assert!(val <= 1.0);
        }
    }

    #[test]
    fn log_metric_relates_through_tanh() {
        for idx in 0..5 {
            let a = random_interior_state(3, 51, idx);
            let b = random_interior_state(3, 52, idx);
            let h = hilbert_metric(&a, &b).unwrap();
            let v = dist(&a, &b).unwrap().value;
            assert_abs_diff_eq!((h / 2.0).tanh(), v, epsilon = 1e-12);
        }
    }

    #[test]
    fn unitary_conjugation_preserves_the_metric() {
        let a = random_interior_state(3, 61, 0);
        let b = random_interior_state(3, 62, 0);
        let u = random_unitary(3, 63);
        let phi = kraus_conjugation(u).unwrap();
        let ua = phi.project(&a).unwrap();
        let ub = phi.project(&b).unwrap();
        assert_abs_diff_eq!(
            dist(&ua, &ub).unwrap().value,
            dist(&a, &b).unwrap().value,
            epsilon = 1e-12
        );
    }

    #[test]
    fn bloch_formula_matches_generic_coefficient() {
        for idx in 0..40 {
            let mut rng = keyed_rng(71, DOMAIN_CONTRACTION, idx);
            use rand::Rng;
            // Radii biased toward the boundary to stress the stable form.
            let ra: f64 = 1.0 - rng.gen_range(0.0f64..1.0).powi(3);
            let rb: f64 = 1.0 - rng.gen_range(0.0f64..1.0).powi(3);
            let dir = |rng: &mut rand_chacha::ChaCha12Rng| {
                let v = [
                    rng.gen_range(-1.0f64..1.0),
                    rng.gen_range(-1.0f64..1.0),
                    rng.gen_range(-1.0f64..1.0),
                ];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-9);
                [v[0] / n, v[1] / n, v[2] / n]
            };
            let da = dir(&mut rng);
            let db = dir(&mut rng);
            let av = [ra * da[0], ra * da[1], ra * da[2]];
            let bv = [rb * db[0], rb * db[1], rb * db[2]];
            let state_of = |v: &[f64; 3]| {
                DensityMatrix::new(
                    HermitianMatrix::from_fn(2, |i, j| match (i, j) {
                        (0, 0) => Complex64::new(0.5 * (1.0 + v[2]), 0.0),
                        (1, 1) => Complex64::new(0.5 * (1.0 - v[2]), 0.0),
                        (0, 1) => Complex64::new(0.5 * v[0], -0.5 * v[1]),
                        _ => Complex64::new(0.5 * v[0], 0.5 * v[1]),
                    })
                    .unwrap(),
                )
                .unwrap()
            };
            let a = state_of(&av);
            let b = state_of(&bv);
            assert_abs_diff_eq!(bloch_vector(&a)[0], av[0], epsilon = 1e-14);
            assert_abs_diff_eq!(bloch_vector(&a)[2], av[2], epsilon = 1e-14);
            let generic = m_coeff(&a, &b).unwrap();
            let closed = m_bloch(&av, &bv);
            // Radii within the support tolerance of 1 fall to the singular
            // branch generically; skip the comparison there.
            if 1.0 - ra > 1e-7 && 1.0 - rb > 1e-7 {
                assert_abs_diff_eq!(generic, closed, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn depolarizing_contraction_matches_closed_form() {
        // Bloch scale s = 1 - p gives c = 2s / (1 + s^2).
        for &(p, expected) in &[(0.5, 0.8), (0.2, 1.6 / 1.64), (0.8, 0.4 / 1.04)] {
            let phi = depolarizing(2, p).unwrap();
            let est = contraction_default(&phi).unwrap();
            assert!(est.exhaustive);
            assert_abs_diff_eq!(est.lower, expected, epsilon = 1e-3);
            // The reported value is reproducible from the witness pair.
            let ia = phi.project(&est.attained_at.0).unwrap();
            let ib = phi.project(&est.attained_at.1).unwrap();
            assert_abs_diff_eq!(dist(&ia, &ib).unwrap().value, est.lower, epsilon = 1e-12);
        }
    }

    #[test]
    fn sampled_search_agrees_with_exhaustive_on_qubits() {
        let phi = depolarizing(2, 0.5).unwrap();
        let exh = contraction_default(&phi).unwrap();
        let smp = contraction_coeff(
            &phi,
            &ContractionStrategy::Sampled {
                n_pairs: 200,
                n_refine: 40,
                seed: 5,
            },
        )
        .unwrap();
        assert!(!smp.exhaustive);
        assert!(smp.lower <= exh.lower + 1e-9);
        assert!(smp.lower >= exh.lower - 0.02, "{} vs {}", smp.lower, exh.lower);
    }

    #[test]
    fn sampled_search_handles_larger_dimensions() {
        let phi = depolarizing(3, 0.5).unwrap();
        let est = contraction_coeff(
            &phi,
            &ContractionStrategy::Sampled {
                n_pairs: 150,
                n_refine: 30,
                seed: 3,
            },
        )
        .unwrap();
        assert!(est.lower > 0.3 && est.lower < 1.0, "lower = {}", est.lower);
        let ia = phi.project(&est.attained_at.0).unwrap();
        let ib = phi.project(&est.attained_at.1).unwrap();
        assert_abs_diff_eq!(dist(&ia, &ib).unwrap().value, est.lower, epsilon = 1e-12);
    }

    #[test]
    fn contraction_is_submultiplicative() {
        let phi = depolarizing(2, 0.3).unwrap();
        let psi = amplitude_damping(0.4)
            .unwrap()
            .compose(&depolarizing(2, 0.2).unwrap())
            .unwrap();
        let c_phi = contraction_default(&phi).unwrap().lower;
        let c_psi = contraction_default(&psi).unwrap().lower;
        let c_comp = contraction_default(&phi.compose(&psi).unwrap()).unwrap().lower;
        assert!(
            c_comp <= c_phi * c_psi + 3e-3,
            "c(comp) = {c_comp} exceeds {c_phi} * {c_psi}"
        );
    }

    #[test]
    fn adjoint_has_the_same_contraction() {
        let phi = depolarizing(2, 0.3)
            .unwrap()
            .compose(&amplitude_damping(0.5).unwrap())
            .unwrap();
        let fwd = contraction_default(&phi).unwrap().lower;
        let adj = contraction_default(&phi.adjoint()).unwrap().lower;
        assert_abs_diff_eq!(fwd, adj, epsilon = 3e-3);
    }

    #[test]
    fn image_distance_never_exceeds_contraction() {
        let phi = random_strictly_positive(2, 9, 0.3).unwrap();
        let c = contraction_default(&phi).unwrap().lower;
        for idx in 0..8 {
            let a = random_interior_state(2, 91, idx);
            let b = random_interior_state(2, 92, idx);
            let img = dist(&phi.project(&a).unwrap(), &phi.project(&b).unwrap())
                .unwrap()
                .value;
            assert!(
                img <= c + 2e-3,
                "mixed pair image distance {img} above estimate {c}"
            );
        }
    }

    #[test]
    fn annihilating_direction_is_reported() {
        // X -> X00 E00 - X11 E11 preserves Hermiticity but sends half the
        // sphere to negative-trace images.
        let mut s = DMatrix::<Complex64>::zeros(4, 4);
        s[(0, 0)] = Complex64::new(1.0, 0.0);
        s[(3, 3)] = Complex64::new(-1.0, 0.0);
        let phi = PositiveMap::superop(s).unwrap();
        let err = contraction_coeff(
            &phi,
            &ContractionStrategy::Sampled {
                n_pairs: 50,
                n_refine: 5,
                seed: 1,
            },
        )
        .unwrap_err();
        match err {
            Error::DestructiveImage { trace, witness } => {
                assert!(trace <= DESTRUCTIVE_TOL);
                assert_eq!(witness.len(), 2);
            }
            other => panic!("expected a destroyed image, got {other:?}"),
        }
    }

    #[test]
    fn exhaustive_strategy_requires_qubits() {
        let phi = depolarizing(3, 0.5).unwrap();
        assert!(matches!(
            contraction_coeff(&phi, &ContractionStrategy::ExhaustiveQubit),
            Err(Error::Dimension { .. })
        ));
    }
}
