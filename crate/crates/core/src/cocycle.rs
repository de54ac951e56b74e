//! Products of maps along a path: orbits, materialized compositions,
//! limit operators and stopping times.
//!
//! The composition over positions `from..=to` of a window acts with later
//! positions on the outside, `phi_to o ... o phi_from`.  Orbits track a
//! normalized state together with the accumulated logarithm of the trace,
//! so `ln tr` of a deeply iterated image never over- or underflows.  When
//! a map rescales the trace uniformly, the per-step increment is taken
//! from that factor rather than from floating-point accumulation, which
//! keeps trace-preserving dynamics at an increment of exactly zero.
//!
//! Backward adjoint orbits converge projectively to a limit operator; the
//! truncation error is bounded by the product of per-map contraction
//! coefficients, estimated once per table entry.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::drivers::PathWindow;
use crate::error::Error;
use crate::maps::families::kraus_scaled;
use crate::maps::{CertificateParams, CertificateVerdict, PositiveMap, PositivityCertificate};
use crate::matrix::{self, DensityMatrix, HermitianMatrix};
use crate::metric::{self, ContractionEstimate};
use crate::Result;

/// Tail bound at which a limit-operator estimate is considered converged.
pub const Z_TOL: f64 = 1e-8;

/// Hard cap on the depth of a limit-operator estimate.
pub const Z_MAX_DEPTH: usize = 1000;

const Z_MIN_DEPTH: usize = 16;

/// A composition of window maps with its scale factored out:
/// the represented product is `exp(log_scale)` times `map`.
#[derive(Debug, Clone)]
pub struct ScaledProduct {
    pub map: PositiveMap,
    pub log_scale: f64,
    pub steps: usize,
}

/// Materializes `phi_to o ... o phi_from`, rescaling after every step so
/// the stored map keeps `tr[map(I)] = dim`.
pub fn scaled_product(window: &PathWindow, from: i64, to: i64) -> Result<ScaledProduct> {
    if from > to {
        return Err(Error::InvalidDriver(format!(
            "product range [{from}, {to}] is reversed"
        )));
    }
    let mut acc: Option<(PositiveMap, f64)> = None;
    for k in from..=to {
        let step = window.map_at(k).as_ref();
        let (composed, mut log_scale) = match acc {
            None => (step.clone(), 0.0),
            Some((prev, ls)) => (step.compose(&prev)?, ls),
        };
        let d = composed.dim();
        let ident = DMatrix::<Complex64>::identity(d, d);
        let mass = composed.apply_raw(&ident).trace().re / d as f64;
        if mass <= 0.0 {
            return Err(Error::DegenerateTrace { trace: mass });
        }
        let normalized = kraus_scaled(1.0 / mass, composed)?;
        log_scale += mass.ln();
        acc = Some((normalized, log_scale));
    }
    let (map, log_scale) = acc.unwrap();
    Ok(ScaledProduct {
        map,
        log_scale,
        steps: (to - from + 1) as usize,
    })
}

pub(crate) fn orbit_step(
    map: &PositiveMap,
    state: &DensityMatrix,
) -> Result<(f64, DensityMatrix)> {
    let image = map.apply_raw(state.raw());
    let t = image.trace().re;
    if t <= 0.0 {
        return Err(Error::DegenerateTrace { trace: t });
    }
    let g = match map.uniform_trace_factor() {
        Some(factor) => factor.ln(),
        None => t.ln(),
    };
    Ok((g, DensityMatrix::trusted(image.scale(1.0 / t))))
}

/// Drives `x0` forward through the maps at `start, start + 1, ...`,
/// consuming `steps` of them.
///
/// After each step the visitor receives the position just consumed, the
/// increment `ln tr[phi_k(state)]`, and the renormalized state.  Returns
/// the summed increments and the final state; with `tr x0 = 1` the sum is
/// `ln tr` of the unnormalized image.
pub fn forward_orbit<F>(
    window: &PathWindow,
    start: i64,
    steps: usize,
    x0: &DensityMatrix,
    mut visit: F,
) -> Result<(f64, DensityMatrix)>
where
    F: FnMut(i64, f64, &DensityMatrix),
{
    let mut state = x0.clone();
    let mut total = 0.0;
    for off in 0..steps {
        let k = start + off as i64;
        let (g, next) = orbit_step(window.map_at(k), &state)?;
        total += g;
        state = next;
        visit(k, g, &state);
    }
    Ok((total, state))
}

/// Drives `y` backward through the adjoints of the maps at
/// `end, end - 1, ...`, consuming `steps` of them.
///
/// This materializes `(phi_{end-steps+1} o ... o phi_end)^* (y)` one
/// adjoint at a time; the visitor sees the position just consumed, the
/// increment, and the renormalized operator.
pub fn adjoint_orbit<F>(
    window: &PathWindow,
    end: i64,
    steps: usize,
    y: &DensityMatrix,
    mut visit: F,
) -> Result<(f64, DensityMatrix)>
where
    F: FnMut(i64, f64, &DensityMatrix),
{
    let mut state = y.clone();
    let mut total = 0.0;
    for off in 0..steps {
        let k = end - off as i64;
        let (g, next) = orbit_step(window.adjoint_at(k), &state)?;
        total += g;
        state = next;
        visit(k, g, &state);
    }
    Ok((total, state))
}

/// Per-table-entry contraction coefficients, for truncation bounds.
#[derive(Debug, Clone)]
pub struct ContractionBounds {
    coeffs: Vec<f64>,
    estimates: Vec<ContractionEstimate>,
    /// Whether every coefficient came from the exhaustive qubit search.
    pub certified: bool,
}

impl ContractionBounds {
    /// Coefficient of table entry `idx`, clamped to at most 1.
    pub fn coeff(&self, idx: usize) -> f64 {
        self.coeffs[idx]
    }

    /// The full estimate for table entry `idx`.
    pub fn estimate(&self, idx: usize) -> &ContractionEstimate {
        &self.estimates[idx]
    }

    /// Product of coefficients over the positions `from..=to`.
    pub fn product(&self, window: &PathWindow, from: i64, to: i64) -> f64 {
        let mut p = 1.0;
        for k in from..=to {
            p *= self.coeffs[window.index_at(k)];
        }
        p
    }
}

/// Estimates the contraction coefficient of every table entry once.
pub fn contraction_bounds(table: &[Arc<PositiveMap>]) -> Result<ContractionBounds> {
    let mut coeffs = Vec::with_capacity(table.len());
    let mut estimates = Vec::with_capacity(table.len());
    let mut certified = true;
    for map in table {
        let est = metric::contraction_default(map)?;
        certified &= est.exhaustive;
        coeffs.push(est.lower.min(1.0));
        estimates.push(est);
    }
    Ok(ContractionBounds {
        coeffs,
        estimates,
        certified,
    })
}

/// A projective limit of backward adjoint products.
#[derive(Debug, Clone)]
pub struct LimitOperator {
    /// The normalized limit operator at the requested position.
    pub operator: DensityMatrix,
    /// Adjoint applications actually consumed.
    pub depth: usize,
    /// Contraction-product bound on the truncation error.
    pub tail_bound: f64,
    /// Whether the bound rests on exhaustive coefficients.
    pub certified: bool,
    /// Set when the bound never reached the tolerance.
    pub truncated: bool,
    /// Projective distance between the last two doublings.
    pub residual: f64,
}

/// Estimates the limit of `(phi_{at+1} o ... o phi_{at+n})^*` applied to
/// the maximally mixed state, doubling `n` until the contraction product
/// over the consumed positions is at most `tol` or the depth budget is
/// exhausted.
pub fn limit_operator(
    window: &PathWindow,
    at: i64,
    bounds: &ContractionBounds,
    tol: f64,
    max_depth: usize,
) -> Result<LimitOperator> {
    let available = (window.hi() - at).max(0) as usize;
    let cap = max_depth.min(available);
    if cap == 0 {
        return Err(Error::InvalidDriver(format!(
            "no window positions beyond {at} to build a limit from"
        )));
    }
    let y = DensityMatrix::maximally_mixed(window.table()[0].dim());
    let mut depth = Z_MIN_DEPTH.min(cap);
    let mut previous: Option<DensityMatrix> = None;
    loop {
        let (_, z) = adjoint_orbit(window, at + depth as i64, depth, &y, |_, _, _| {})?;
        let tail = bounds.product(window, at + 1, at + depth as i64);
        let residual = match &previous {
            Some(p) => metric::dist(p, &z)?.value,
            None => f64::NAN,
        };
        if tail <= tol || depth == cap {
            return Ok(LimitOperator {
                operator: z,
                depth,
                tail_bound: tail,
                certified: bounds.certified,
                truncated: tail > tol,
                residual,
            });
        }
        previous = Some(z);
        depth = (depth * 2).min(cap);
    }
}

/// Outcome of scanning compositions for a stopping rule.
#[derive(Debug, Clone)]
pub struct PositivityStopping {
    /// First length at which the composition was certified strictly
    /// positive, if any within the horizon.
    pub time: Option<u64>,
    /// One certificate per scanned length, in order.
    pub certificates: Vec<PositivityCertificate>,
    pub horizon: u64,
}

/// First `n` with `phi_n o ... o phi_1` certified strictly positive.
pub fn strict_positivity_time(
    window: &PathWindow,
    params: &CertificateParams,
    horizon: u64,
) -> Result<PositivityStopping> {
    scan_positivity(window, params, horizon, |n| (1, n as i64))
}

/// Two-sided variant: first `n` with `phi_n o ... o phi_{1-n}` certified
/// strictly positive.
pub fn two_sided_positivity_time(
    window: &PathWindow,
    params: &CertificateParams,
    horizon: u64,
) -> Result<PositivityStopping> {
    scan_positivity(window, params, horizon, |n| (1 - n as i64, n as i64))
}

fn scan_positivity(
    window: &PathWindow,
    params: &CertificateParams,
    horizon: u64,
    range_of: impl Fn(u64) -> (i64, i64),
) -> Result<PositivityStopping> {
    let mut certificates = Vec::new();
    let mut time = None;
    for n in 1..=horizon {
        let (from, to) = range_of(n);
        let product = scaled_product(window, from, to)?;
        let cert = product.map.strict_positivity(params)?;
        let verdict = cert.verdict;
        certificates.push(cert);
        if verdict == CertificateVerdict::CertifiedYes {
            time = Some(n);
            break;
        }
    }
    Ok(PositivityStopping {
        time,
        certificates,
        horizon,
    })
}

/// Outcome of the contraction-product stopping rule.
#[derive(Debug, Clone)]
pub struct ContractionStopping {
    /// First `n` with the running product at or below the threshold.
    pub time: Option<u64>,
    /// Running products for `n = 1..` up to where the scan stopped.
    pub products: Vec<f64>,
    pub threshold: f64,
    pub horizon: u64,
    /// Whether the per-step coefficients are exhaustive.
    pub certified: bool,
}

/// First `n` with `c(phi_1) ... c(phi_n) <= r`; the product bounds the
/// contraction coefficient of the composition from above through
/// submultiplicativity.
pub fn contraction_time(
    window: &PathWindow,
    bounds: &ContractionBounds,
    r: f64,
    horizon: u64,
) -> Result<ContractionStopping> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Usage(format!(
            "contraction threshold {r} outside [0, 1)"
        )));
    }
    let mut products = Vec::new();
    let mut running = 1.0;
    let mut time = None;
    for n in 1..=horizon {
        running *= bounds.coeff(window.index_at(n as i64));
        products.push(running);
        if running <= r {
            time = Some(n);
            break;
        }
    }
    Ok(ContractionStopping {
        time,
        products,
        threshold: r,
        horizon,
        certified: bounds.certified,
    })
}

/// Perron data of a materialized composition.
#[derive(Debug, Clone)]
pub struct PerronPoint {
    pub n: u64,
    /// `ln` of the Perron root of `phi_n o ... o phi_1`.
    pub log_lambda: f64,
    pub right: DensityMatrix,
    pub left: DensityMatrix,
    /// Relative deviation of `<L, Phi(I)>` from the Perron root, with `L`
    /// trace-normalized; an exact identity for the true eigenpair.
    pub identity_residual: f64,
}

/// Perron eigendata of `phi_n o ... o phi_1` for each requested `n`.
///
/// Entries fail individually when the power iteration does not converge.
pub fn perron_sequence(
    window: &PathWindow,
    lengths: &[u64],
    tol: f64,
    max_iter: usize,
) -> Vec<(u64, Result<PerronPoint>)> {
    lengths
        .iter()
        .map(|&n| (n, perron_point(window, n, tol, max_iter)))
        .collect()
}

fn perron_point(window: &PathWindow, n: u64, tol: f64, max_iter: usize) -> Result<PerronPoint> {
    if n == 0 {
        return Err(Error::Usage("composition length must be positive".into()));
    }
    let product = scaled_product(window, 1, n as i64)?;
    let right = product.map.perron_right(tol, max_iter)?;
    let left = product.map.perron_left(tol, max_iter)?;
    let d = product.map.dim();
    let ident = DMatrix::<Complex64>::identity(d, d);
    let image = product.map.apply_raw(&ident);
    let pairing = matrix::hs_inner_raw(left.matrix.raw(), &image);
    let identity_residual = (pairing - right.lambda).abs() / right.lambda.max(f64::MIN_POSITIVE);
    Ok(PerronPoint {
        n,
        log_lambda: product.log_scale + right.lambda.ln(),
        right: right.matrix,
        left: left.matrix,
        identity_residual,
    })
}

/// `ln tr[Y Phi^(n)(X)]`-style pairings evaluated against a forward orbit
/// state: `ln <Y, Phi(X)> = log_norm + ln <Y, state>` for unit-trace `X`.
pub fn log_pairing(log_norm: f64, state: &DensityMatrix, y: &HermitianMatrix) -> f64 {
    let overlap = matrix::hs_inner_raw(y.raw(), state.raw());
    if overlap <= 0.0 {
        return f64::NEG_INFINITY;
    }
    log_norm + overlap.ln()
}
