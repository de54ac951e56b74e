//! Estimators and diagnostics for the limit behavior of map products.
//!
//! The quantities estimated here are the exponential growth rate `l` of
//! the products, the decay rate `kappa` of their contraction
//! coefficients, the finite-n deviation curves behind the law of large
//! numbers, the fluctuation samples `Q` behind the central limit
//! behavior together with three estimators of their limiting variance,
//! a Kolmogorov-Smirnov normality check, and the mixing-condition gate
//! that decides whether the Gaussian limit is expected to apply at all.
//!
//! Every estimator draws its randomness through keyed streams, so a
//! fixed driver and seed reproduce results bitwise regardless of thread
//! count.  Calibration constants (`l` references) always come from a
//! seed stream disjoint from the one generating the evaluated samples.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cocycle::{
    self, adjoint_orbit, contraction_bounds, forward_orbit, limit_operator, scaled_product,
    ContractionBounds, LimitOperator,
};
use crate::drivers::{Driver, PathWindow};
use crate::error::Error;
use crate::matrix::{hs_inner_raw, DensityMatrix};
use crate::metric::{contraction_coeff, contraction_default, ContractionStrategy};
use crate::rng::{haar_unit, keyed_rng, replica_seed, DOMAIN_PROBES};
use crate::Result;

/// Fraction of a trajectory discarded before time averaging.
pub const BURN_IN_DENOMINATOR: u64 = 5;

/// Replica-index offset reserved for calibration runs, keeping their
/// seed stream disjoint from the evaluated replicas.
pub const REFERENCE_STREAM: u64 = 1 << 32;

/// Tail-bound tolerance for backward-limit operators in estimators.
pub const Z_ENSEMBLE_TOL: f64 = 1e-8;

/// Depth budget for backward-limit operators in estimators.
pub const Z_ENSEMBLE_DEPTH: usize = 256;

/// A backward orbit whose last two doublings sit closer than this is
/// accepted as converged even without a certified tail bound.
pub const Z_RESIDUAL_TOL: f64 = 1e-9;

/// Coarser tail tolerance used when sampling many fluctuation terms.
pub const Z_STAT_TOL: f64 = 1e-6;

/// Replica failure fraction beyond which an experiment errors out.
pub const MAX_DROP_FRACTION: f64 = 0.2;

/// Absolute slack added to agreement checks so that exact deterministic
/// branches with zero standard error do not fail on rounding noise.
pub const AGREEMENT_FLOOR: f64 = 1e-9;

/// Default series truncation for the martingale variance estimator.
pub const SIGMA_KMAX_DEFAULT: usize = 50;

/// Trailing term count inspected by the truncation-tail flag.
pub const TAIL_REPORT_TERMS: usize = 10;

/// Tail fraction above which the truncation flag is raised.
pub const TAIL_REPORT_FRACTION: f64 = 0.01;

/// Threshold for |Q| in the degenerate (sigma = 0) branch.
pub const DEGENERATE_EPSILON: f64 = 1e-6;

/// Minimum sample count for the normality test.
pub const KS_MIN_SAMPLES: usize = 100;

/// Terms of the asymptotic Kolmogorov series.
pub const KS_SERIES_TERMS: usize = 100;

/// Series terms below this magnitude are dropped.
pub const KS_TERM_CUTOFF: f64 = 1e-10;

/// Horizon of the mixing-gate partial sums.
pub const GATE_HORIZON: u64 = 1000;

/// Partial sums are recorded at these lengths.
pub const GATE_CHECKPOINTS: [u64; 5] = [10, 50, 100, 500, 1000];

/// The alpha series counts as summable when the second half of the
/// partial-sum horizon adds at most this much.
pub const GATE_CAUCHY_TOL: f64 = 1e-9;

/// Normalize-and-square iterations of the spectral radius evaluation.
pub const GELFAND_SQUARINGS: usize = 48;

// Contraction estimates at or below this are treated as a collapsed
// product whose log is excluded from slope fits.
const COLLAPSE_FLOOR: f64 = 1e-15;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    (m, (sample_variance(xs) / xs.len() as f64).sqrt())
}

/// Ordinary least squares line through `points`, as `(intercept, slope)`.
///
/// Requires at least two points with distinct abscissas.
pub fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::Usage(format!(
            "line fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    if sxx == 0.0 {
        return Err(Error::Usage("line fit needs distinct abscissas".into()));
    }
    let sxy = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

/// Kendall rank correlation of a sequence against its index: +1 for a
/// strictly increasing sequence, -1 for strictly decreasing, 0-ish for
/// trendless data.  Ties contribute nothing.
pub fn kendall_tau(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            if values[j] > values[i] {
                s += 1;
            } else if values[j] < values[i] {
                s -= 1;
            }
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

fn reference_seed(seed: u64) -> u64 {
    replica_seed(seed, REFERENCE_STREAM)
}

/// One estimator branch of a cross-checked quantity.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorBranch {
    pub value: f64,
    /// Standard error of the mean across kept replicas.
    pub stderr: f64,
    pub kept: usize,
}

/// Cross-checked estimate of the exponential growth rate.
#[derive(Debug, Clone)]
pub struct LyapunovEstimate {
    /// Headline value, taken from the time-average branch.
    pub l_hat: f64,
    pub stderr: f64,
    /// Differenced time average of the forward cocycle, past burn-in.
    pub time_average: EstimatorBranch,
    /// Ensemble average of `ln tr[phi_0^*(Z_1)]` over replicas.
    pub ensemble: EstimatorBranch,
    /// Whether the branches agree within three combined standard errors.
    pub branches_agree: bool,
    pub dropped: usize,
}

fn burn_in(n: u64) -> u64 {
    n / BURN_IN_DENOMINATOR
}

// Differenced time average over one forward trajectory: the cumulative
// log norm between burn-in and n, divided by the elapsed steps.  Exact
// zero for trace-preserving paths because every increment is.
fn differenced_time_average(window: &PathWindow, n: u64) -> Result<f64> {
    let d = window.table()[0].dim();
    let x0 = DensityMatrix::maximally_mixed(d);
    let k0 = burn_in(n);
    let mut running = 0.0;
    let mut at_burn_in = 0.0;
    let (total, _) = forward_orbit(window, 1, n as usize, &x0, |k, g, _| {
        running += g;
        if k == k0 as i64 {
            at_burn_in = running;
        }
    })?;
    Ok((total - at_burn_in) / (n - k0) as f64)
}

/// Time-average growth-rate estimate over independent replicas, without
/// the ensemble cross-check.  Used as the calibration reference for
/// fluctuation sampling.
pub fn time_average_rate(
    driver: &Driver,
    seed: u64,
    n: u64,
    n_replicas: usize,
) -> Result<EstimatorBranch> {
    if n < 2 || n_replicas == 0 {
        return Err(Error::Usage(
            "time average needs n >= 2 and at least one replica".into(),
        ));
    }
    let runs: Vec<Result<f64>> = (0..n_replicas)
        .into_par_iter()
        .map(|i| {
            let w = driver.window(replica_seed(seed, i as u64), 1, n as i64)?;
            differenced_time_average(&w, n)
        })
        .collect();
    let values: Vec<f64> = runs.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    check_drops(n_replicas - values.len(), n_replicas)?;
    let (value, stderr) = mean_and_stderr(&values);
    Ok(EstimatorBranch {
        value,
        stderr,
        kept: values.len(),
    })
}

fn check_drops(dropped: usize, total: usize) -> Result<()> {
    if dropped as f64 > MAX_DROP_FRACTION * total as f64 {
        return Err(Error::ReplicaFailures {
            failed: dropped,
            total,
        });
    }
    Ok(())
}

fn limit_converged(z: &LimitOperator) -> bool {
    !z.truncated || z.residual <= Z_RESIDUAL_TOL
}

/// Estimates the growth rate by two routes and cross-checks them.
///
/// The time-average branch differences the forward cocycle past a 20%
/// burn-in; the ensemble branch averages `ln tr[phi_0^*(Z_1)]` with the
/// backward-limit operator `Z_1` estimated per replica.  A replica whose
/// backward orbit fails to converge within the depth budget counts as
/// dropped; more than [`MAX_DROP_FRACTION`] drops is an error.
pub fn lyapunov(driver: &Driver, seed: u64, n: u64, n_replicas: usize) -> Result<LyapunovEstimate> {
    if n < 2 || n_replicas == 0 {
        return Err(Error::Usage(
            "lyapunov needs n >= 2 and at least one replica".into(),
        ));
    }
    let hi = (n as i64).max(Z_ENSEMBLE_DEPTH as i64 + 4);
    let probe_w = driver.window(seed, 0, 4)?;
    let bounds = contraction_bounds(probe_w.table())?;
    let runs: Vec<Result<(f64, f64)>> = (0..n_replicas)
        .into_par_iter()
        .map(|i| {
            let w = driver.window(replica_seed(seed, i as u64), 0, hi)?;
            let ta = differenced_time_average(&w, n)?;
            let z = limit_operator(&w, 0, &bounds, Z_ENSEMBLE_TOL, Z_ENSEMBLE_DEPTH)?;
            if !limit_converged(&z) {
                return Err(Error::HorizonExhausted {
                    horizon: Z_ENSEMBLE_DEPTH as u64,
                });
            }
            let (g, _) = cocycle::orbit_step(w.adjoint_at(0), &z.operator)?;
            Ok((ta, g))
        })
        .collect();
    let mut time_values = Vec::with_capacity(n_replicas);
    let mut ens_values = Vec::with_capacity(n_replicas);
    let mut dropped = 0usize;
    for run in runs {
        match run {
            Ok((ta, g)) => {
                time_values.push(ta);
                ens_values.push(g);
            }
            Err(_) => dropped += 1,
        }
    }
    check_drops(dropped, n_replicas)?;
    let (ta_mean, ta_se) = mean_and_stderr(&time_values);
    let (en_mean, en_se) = mean_and_stderr(&ens_values);
    let combined = ta_se.hypot(en_se);
    let branches_agree = (ta_mean - en_mean).abs() <= 3.0 * combined + AGREEMENT_FLOOR;
    Ok(LyapunovEstimate {
        l_hat: ta_mean,
        stderr: ta_se,
        time_average: EstimatorBranch {
            value: ta_mean,
            stderr: ta_se,
            kept: time_values.len(),
        },
        ensemble: EstimatorBranch {
            value: en_mean,
            stderr: en_se,
            kept: ens_values.len(),
        },
        branches_agree,
        dropped,
    })
}

/// One term of the fluctuation series.
#[derive(Debug, Clone, Copy)]
pub struct XiSample {
    pub k: i64,
    /// `ln tr[phi_k^*(Z_{k+1})] - l_used`.
    pub xi: f64,
    /// Contraction-product bound on the truncation error of `Z_{k+1}`.
    pub z_trunc_bound: f64,
    pub l_used: f64,
}

/// Samples the fluctuation terms at the given window positions, each
/// with its own backward-limit estimate.  Deterministic in the window:
/// recomputing with identical arguments reproduces every sample.
pub fn xi_samples(
    window: &PathWindow,
    bounds: &ContractionBounds,
    positions: &[i64],
    l_hat: f64,
    z_tol: f64,
    max_depth: usize,
) -> Result<Vec<XiSample>> {
    let mut out = Vec::with_capacity(positions.len());
    for &k in positions {
        let z = limit_operator(window, k, bounds, z_tol, max_depth)?;
        let (g, _) = cocycle::orbit_step(window.adjoint_at(k), &z.operator)?;
        out.push(XiSample {
            k,
            xi: g - l_hat,
            z_trunc_bound: z.tail_bound,
            l_used: l_hat,
        });
    }
    Ok(out)
}

/// Finite-n deviation curves behind the law of large numbers.
#[derive(Debug, Clone)]
pub struct LlnCurves {
    pub ns: Vec<u64>,
    /// Probe supremum of `|ln<Y, Phi(X)> - ln tr[Phi^*(Y)]|`.
    pub d_n: Vec<f64>,
    /// Probe supremum of `|ln tr[Phi^*(Y)] - sum of xi-type increments|`.
    pub e_n: Vec<f64>,
    /// Probe supremum of `|(1/n) ln<Y, Phi(X)> - l_hat|`.
    pub sup_dev: Vec<f64>,
    pub l_used: f64,
    pub l_stderr: f64,
    /// Pairings that vanished (or whose orbit died) and were excluded.
    pub excluded: usize,
    /// Contraction-product bound on the suffix states feeding `e_n`.
    pub suffix_tail_bound: f64,
}

fn sorted_grid(grid: &[u64]) -> Result<Vec<u64>> {
    if grid.is_empty() {
        return Err(Error::Usage("the length grid is empty".into()));
    }
    let mut ns: Vec<u64> = grid.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns[0] == 0 {
        return Err(Error::Usage("grid lengths must be positive".into()));
    }
    Ok(ns)
}

fn probe_states(driver: &Driver, seed: u64, n_random: usize, stream: i64) -> Vec<DensityMatrix> {
    let d = driver.dim();
    let mut probes = Vec::with_capacity(d + 1 + n_random);
    for k in 0..d {
        probes.push(DensityMatrix::basis_projector(d, k).unwrap());
    }
    probes.push(DensityMatrix::maximally_mixed(d));
    for j in 0..n_random {
        let mut rng = keyed_rng(seed, DOMAIN_PROBES, stream + 2 * j as i64);
        let u = haar_unit(&mut rng, d);
        probes.push(DensityMatrix::pure(&u).unwrap());
    }
    probes
}

// Suffix depth whose contraction product past `n_max` is below the
// ensemble tolerance, or the cap when the table does not contract.
fn suffix_depth(bounds: &ContractionBounds, window: &PathWindow, n_max: u64) -> (usize, f64) {
    let mut depth = 16usize;
    loop {
        let tail = bounds.product(window, n_max as i64 + 1, n_max as i64 + depth as i64);
        if tail <= Z_ENSEMBLE_TOL || depth >= 1024 {
            return (depth, tail);
        }
        depth *= 2;
    }
}

/// Evaluates the deviation curves on a probe set: all basis projectors,
/// the maximally mixed state, and `n_probe_pairs` Haar-random pure
/// states on each side, paired exhaustively.
///
/// Vanishing pairings are excluded and counted rather than propagated,
/// matching their role as finitely-many early exceptions.
pub fn lln_curves(
    driver: &Driver,
    seed: u64,
    grid: &[u64],
    n_probe_pairs: usize,
) -> Result<LlnCurves> {
    let ns = sorted_grid(grid)?;
    let n_max = *ns.last().unwrap();
    let reference = time_average_rate(
        driver,
        reference_seed(seed),
        (2 * n_max).max(4000),
        8,
    )?;
    let w = driver.window(seed, 1, n_max as i64 + 1024)?;
    let bounds = contraction_bounds(w.table())?;
    let (depth, suffix_tail) = suffix_depth(&bounds, &w, n_max);
    let xs = probe_states(driver, seed, n_probe_pairs, 0);
    let ys = probe_states(driver, seed, n_probe_pairs, 1);
    let mut excluded = 0usize;

    // Forward orbits, one per X probe, with checkpoints at the grid.
    let mut forwards: Vec<Vec<Option<(f64, DensityMatrix)>>> = Vec::with_capacity(xs.len());
    for x in &xs {
        let mut row = Vec::with_capacity(ns.len());
        let mut state = x.clone();
        let mut log_norm = 0.0;
        let mut alive = true;
        let mut grid_iter = ns.iter().peekable();
        for k in 1..=n_max {
            if alive {
                match cocycle::orbit_step(w.map_at(k as i64), &state) {
                    Ok((g, next)) => {
                        log_norm += g;
                        state = next;
                    }
                    Err(_) => alive = false,
                }
            }
            if grid_iter.peek() == Some(&&k) {
                grid_iter.next();
                row.push(alive.then(|| (log_norm, state.clone())));
            }
        }
        forwards.push(row);
    }

    // Backward totals, one per (Y probe, grid length).
    let mut adjoint_totals: Vec<Vec<Option<f64>>> = Vec::with_capacity(ys.len());
    for y in &ys {
        let mut row = Vec::with_capacity(ns.len());
        for &n in &ns {
            let total = adjoint_orbit(&w, n as i64, n as usize, y, |_, _, _| {})
                .map(|(t, _)| t)
                .ok();
            row.push(total);
        }
        adjoint_totals.push(row);
    }

    // One deep suffix pass approximates every Z_{k+1} at once; its
    // increments are the xi-type terms entering E_n.
    let d = driver.dim();
    let mixed = DensityMatrix::maximally_mixed(d);
    let mut increments = vec![0.0f64; n_max as usize + 1];
    let steps = n_max as usize + depth;
    adjoint_orbit(&w, n_max as i64 + depth as i64, steps, &mixed, |k, g, _| {
        if k >= 1 && k <= n_max as i64 {
            increments[k as usize] = g;
        }
    })?;
    let mut cumulative = vec![0.0f64; n_max as usize + 1];
    for k in 1..=n_max as usize {
        cumulative[k] = cumulative[k - 1] + increments[k];
    }

    let mut d_n = Vec::with_capacity(ns.len());
    let mut e_n = Vec::with_capacity(ns.len());
    let mut sup_dev = Vec::with_capacity(ns.len());
    for (gi, &n) in ns.iter().enumerate() {
        let mut d_best = f64::NEG_INFINITY;
        let mut e_best = f64::NEG_INFINITY;
        let mut dev_best = f64::NEG_INFINITY;
        for (yi, _) in ys.iter().enumerate() {
            if let Some(a) = adjoint_totals[yi][gi] {
                e_best = e_best.max((a - cumulative[n as usize]).abs());
            }
        }
        for forward in &forwards {
            let Some((log_norm, state)) = &forward[gi] else {
                excluded += ys.len();
                continue;
            };
            for (yi, y) in ys.iter().enumerate() {
                let overlap = hs_inner_raw(y.raw(), state.raw());
                if overlap <= 0.0 {
                    excluded += 1;
                    continue;
                }
                let pairing = log_norm + overlap.ln();
                dev_best = dev_best.max((pairing / n as f64 - reference.value).abs());
                if let Some(a) = adjoint_totals[yi][gi] {
                    d_best = d_best.max((pairing - a).abs());
                } else {
                    excluded += 1;
                }
            }
        }
        let finite = |v: f64| if v.is_finite() { v } else { f64::NAN };
        d_n.push(finite(d_best));
        e_n.push(finite(e_best));
        sup_dev.push(finite(dev_best));
    }
    Ok(LlnCurves {
        ns,
        d_n,
        e_n,
        sup_dev,
        l_used: reference.value,
        l_stderr: reference.stderr,
        excluded,
        suffix_tail_bound: suffix_tail,
    })
}

/// Windowed variant data of the contraction-decay fit.
#[derive(Debug, Clone)]
pub struct WindowedKappa {
    pub alpha: f64,
    /// `(n, ln c)` of the composition over the trailing `alpha` fraction.
    pub per_n: Vec<(u64, f64)>,
    /// Fitted slope; the decay model predicts `alpha ln kappa`.
    pub slope: f64,
}

/// Contraction decay rate of the composition along one path.
#[derive(Debug, Clone)]
pub struct KappaEstimate {
    pub kappa_hat: f64,
    /// Fitted slope of `ln c` against `n`.
    pub slope: f64,
    pub per_n: Vec<(u64, f64)>,
    /// Whether every contraction value came from the exhaustive search.
    pub exhaustive: bool,
    pub windowed: Option<WindowedKappa>,
}

fn log_contraction(map: &crate::maps::PositiveMap) -> Result<(f64, bool)> {
    let est = contraction_default(map)?;
    let c = est.lower.min(1.0);
    let ln_c = if c <= COLLAPSE_FLOOR {
        f64::NEG_INFINITY
    } else {
        c.ln()
    };
    Ok((ln_c, est.exhaustive))
}

fn slope_of(per_n: &[(u64, f64)]) -> f64 {
    let finite: Vec<(f64, f64)> = per_n
        .iter()
        .filter(|(_, v)| v.is_finite())
        .map(|&(n, v)| (n as f64, v))
        .collect();
    if finite.len() < 2 {
        return f64::NEG_INFINITY;
    }
    fit_line(&finite).map(|(_, s)| s).unwrap_or(f64::NEG_INFINITY)
}

/// Fits `kappa` as the exponential decay rate of the contraction
/// coefficient of `Phi^(n)` over the length grid; a collapsed product
/// (a constant map anywhere in it) reports `kappa_hat = 0`.
///
/// With `window_alpha` set, also fits the trailing-window variant whose
/// slope approaches `alpha ln kappa`.
pub fn kappa(
    driver: &Driver,
    seed: u64,
    grid: &[u64],
    window_alpha: Option<f64>,
) -> Result<KappaEstimate> {
    let ns = sorted_grid(grid)?;
    if let Some(alpha) = window_alpha {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Usage(format!(
                "window fraction {alpha} outside (0, 1]"
            )));
        }
    }
    let n_max = *ns.last().unwrap() as i64;
    let w = driver.window(seed, 1, n_max)?;
    let mut per_n = Vec::with_capacity(ns.len());
    let mut exhaustive = true;
    for &n in &ns {
        let prod = scaled_product(&w, 1, n as i64)?;
        let (ln_c, ex) = log_contraction(&prod.map)?;
        exhaustive &= ex;
        per_n.push((n, ln_c));
    }
    let slope = slope_of(&per_n);
    let kappa_hat = if slope == f64::NEG_INFINITY {
        0.0
    } else {
        slope.exp().min(1.0)
    };
    let windowed = match window_alpha {
        None => None,
        Some(alpha) => {
            let mut win_per_n = Vec::with_capacity(ns.len());
            for &n in &ns {
                let n_alpha = ((1.0 - alpha) * n as f64).floor() as i64;
                let prod = scaled_product(&w, n_alpha + 1, n as i64)?;
                let (ln_c, ex) = log_contraction(&prod.map)?;
                exhaustive &= ex;
                win_per_n.push((n, ln_c));
            }
            let slope = slope_of(&win_per_n);
            Some(WindowedKappa {
                alpha,
                per_n: win_per_n,
                slope,
            })
        }
    };
    Ok(KappaEstimate {
        kappa_hat,
        slope,
        per_n,
        exhaustive,
        windowed,
    })
}

/// Mean contraction coefficient of the composition across seeds, per
/// grid length, with the fitted log-log slope of the decay.
///
/// A negative slope is the empirical signature of the polynomial decay
/// of `E[c(Phi^(n))]` expected from mixing drivers.
pub fn mean_contraction_curve(
    driver: &Driver,
    n_seeds: u64,
    grid: &[u64],
    strategy: &ContractionStrategy,
) -> Result<(Vec<f64>, f64)> {
    let ns = sorted_grid(grid)?;
    if n_seeds == 0 {
        return Err(Error::Usage("mean contraction needs at least one seed".into()));
    }
    let n_max = *ns.last().unwrap() as i64;
    let mut means = Vec::with_capacity(ns.len());
    for &n in &ns {
        let per_seed: Result<Vec<f64>> = (0..n_seeds)
            .into_par_iter()
            .map(|s| {
                let w = driver.window(s, 1, n_max)?;
                let prod = scaled_product(&w, 1, n as i64)?;
                Ok(contraction_coeff(&prod.map, strategy)?.lower.min(1.0))
            })
            .collect();
        means.push(mean(&per_seed?));
    }
    let points: Vec<(f64, f64)> = ns
        .iter()
        .zip(means.iter())
        .filter(|(_, m)| **m > COLLAPSE_FLOOR)
        .map(|(&n, &m)| ((n as f64).ln(), m.ln()))
        .collect();
    let slope = if points.len() < 2 {
        f64::NEG_INFINITY
    } else {
        fit_line(&points)?.1
    };
    Ok((means, slope))
}

/// How the endpoint operators of a fluctuation sample are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeStyle {
    /// The first computational-basis projector.
    BasisProjector,
    /// A Haar-random pure state per replica.
    RandomPure,
    /// The maximally mixed state.
    MaximallyMixed,
}

fn realize_probe(style: ProbeStyle, d: usize, seed: u64, stream: i64) -> DensityMatrix {
    match style {
        ProbeStyle::BasisProjector => DensityMatrix::basis_projector(d, 0).unwrap(),
        ProbeStyle::MaximallyMixed => DensityMatrix::maximally_mixed(d),
        ProbeStyle::RandomPure => {
            let mut rng = keyed_rng(seed, DOMAIN_PROBES, stream);
            DensityMatrix::pure(&haar_unit(&mut rng, d)).unwrap()
        }
    }
}

/// Centered and scaled fluctuation samples across replicas.
#[derive(Debug, Clone)]
pub struct CltSamples {
    pub q: Vec<f64>,
    pub n: u64,
    /// Centering rate, calibrated on a disjoint seed stream.
    pub l_hat: f64,
    pub l_stderr: f64,
    /// `sqrt(n) * l_stderr`: how far plug-in centering can shift Q.
    pub bias_bound: f64,
    pub dropped: usize,
    pub gate: CltGate,
    pub gate_overridden: bool,
}

/// Draws `Q = (ln<Y, Phi^(n)(X)> - n l_hat) / sqrt(n)` across replicas.
///
/// The centering rate comes from [`time_average_rate`] on a disjoint
/// seed stream; its standard error is propagated as `bias_bound`.  The
/// mixing gate is evaluated first and a non-applicable verdict is an
/// error unless `override_gate` is set.
#[allow(clippy::too_many_arguments)]
pub fn clt_samples(
    driver: &Driver,
    seed: u64,
    n: u64,
    n_replicas: usize,
    x_style: ProbeStyle,
    y_style: ProbeStyle,
    p: f64,
    override_gate: bool,
) -> Result<CltSamples> {
    if n < 2 || n_replicas == 0 {
        return Err(Error::Usage(
            "fluctuation sampling needs n >= 2 and at least one replica".into(),
        ));
    }
    let gate = clt_gate(driver, p)?;
    let gate_overridden = gate.verdict != GateVerdict::Applicable;
    if gate_overridden && !override_gate {
        return Err(Error::GateNotApplicable {
            reason: gate.reason.clone(),
        });
    }
    // The plug-in bias in Q scales as sqrt(n) times the calibration
    // error, so the calibration gets a step budget well above the
    // evaluated ensemble's.
    let n_ref = (4 * n).max(2000);
    let reps_ref = ((4_000_000 / n_ref) as usize).clamp(16, 512);
    let reference = time_average_rate(driver, reference_seed(seed), n_ref, reps_ref)?;
    let d = driver.dim();
    let runs: Vec<Option<f64>> = (0..n_replicas)
        .into_par_iter()
        .map(|i| {
            let x = realize_probe(x_style, d, seed, 2 * i as i64);
            let y = realize_probe(y_style, d, seed, 2 * i as i64 + 1);
            let w = driver.window(replica_seed(seed, i as u64), 1, n as i64).ok()?;
            let (total, state) = forward_orbit(&w, 1, n as usize, &x, |_, _, _| {}).ok()?;
            let pairing = cocycle::log_pairing(total, &state, y.hermitian());
            pairing
                .is_finite()
                .then(|| (pairing - n as f64 * reference.value) / (n as f64).sqrt())
        })
        .collect();
    let q: Vec<f64> = runs.iter().filter_map(|r| *r).collect();
    let dropped = n_replicas - q.len();
    check_drops(dropped, n_replicas)?;
    Ok(CltSamples {
        q,
        n,
        l_hat: reference.value,
        l_stderr: reference.stderr,
        bias_bound: (n as f64).sqrt() * reference.stderr,
        dropped,
        gate,
        gate_overridden,
    })
}

/// Which estimator produced a variance figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMethod {
    Direct,
    BatchMeans,
    MartingaleSeries,
}

impl SigmaMethod {
    pub fn name(self) -> &'static str {
        match self {
            SigmaMethod::Direct => "direct",
            SigmaMethod::BatchMeans => "batch_means",
            SigmaMethod::MartingaleSeries => "martingale_series",
        }
    }
}

/// A limiting-variance estimate with its sampling error.
#[derive(Debug, Clone)]
pub struct SigmaEstimate {
    pub method: SigmaMethod,
    /// The variance estimate, clamped below at zero.
    pub value: f64,
    pub stderr: f64,
    /// Series truncation (martingale method only).
    pub k_max: Option<usize>,
    /// Conditional-expectation Monte Carlo size (martingale only).
    pub mc_inner: Option<usize>,
    /// Per-lag diagonal contributions (martingale only).
    pub per_term: Option<Vec<f64>>,
    /// Bound on the backward-limit truncation inside each term.
    pub truncation_tail: Option<f64>,
    /// Raised when the trailing terms still carry weight.
    pub tail_flagged: bool,
}

/// Sample variance of the fluctuation samples, with the normal-theory
/// standard error `value * sqrt(2 / (m - 1))`.
pub fn sigma_direct(q: &[f64]) -> Result<SigmaEstimate> {
    if q.len() < 2 {
        return Err(Error::Usage(format!(
            "variance needs at least 2 samples, got {}",
            q.len()
        )));
    }
    let value = sample_variance(q);
    let stderr = value * (2.0 / (q.len() - 1) as f64).sqrt();
    Ok(SigmaEstimate {
        method: SigmaMethod::Direct,
        value,
        stderr,
        k_max: None,
        mc_inner: None,
        per_term: None,
        truncation_tail: None,
        tail_flagged: false,
    })
}

/// Batch-means variance of the cocycle increments along one trajectory.
///
/// The first 20% of the trajectory is discarded, the rest is split into
/// `floor(sqrt(len))` equal batches, and the variance of the batch means
/// is scaled back by the batch length.
pub fn sigma_batch_means(driver: &Driver, seed: u64, n_steps: u64) -> Result<SigmaEstimate> {
    if n_steps < 100 {
        return Err(Error::Usage(format!(
            "batch means needs at least 100 steps, got {n_steps}"
        )));
    }
    let burn = burn_in(n_steps);
    let keep = n_steps - burn;
    let n_batches = (keep as f64).sqrt().floor() as u64;
    let batch_len = keep / n_batches;
    let used = burn + n_batches * batch_len;
    let w = driver.window(seed, 1, used as i64)?;
    let d = driver.dim();
    let x0 = DensityMatrix::maximally_mixed(d);
    let mut sums = vec![0.0f64; n_batches as usize];
    forward_orbit(&w, 1, used as usize, &x0, |k, g, _| {
        if k > burn as i64 {
            let idx = (k - 1 - burn as i64) as u64 / batch_len;
            sums[idx as usize] += g;
        }
    })?;
    let means: Vec<f64> = sums.iter().map(|s| s / batch_len as f64).collect();
    let value = batch_len as f64 * sample_variance(&means);
    let stderr = value * (2.0 / (n_batches - 1) as f64).sqrt();
    Ok(SigmaEstimate {
        method: SigmaMethod::BatchMeans,
        value,
        stderr,
        k_max: None,
        mc_inner: None,
        per_term: None,
        truncation_tail: None,
        tail_flagged: false,
    })
}

// xi terms at positions -k_max..=0 from one path realization, each
// computed against the suffix approximation of its limit operator.
fn xi_row(window: &PathWindow, depth: usize, k_max: usize, l_hat: f64) -> Result<Vec<f64>> {
    let d = window.table()[0].dim();
    let mixed = DensityMatrix::maximally_mixed(d);
    let mut row = vec![0.0f64; k_max + 1];
    adjoint_orbit(window, depth as i64, depth + k_max + 1, &mixed, |k, g, _| {
        if k <= 0 {
            row[(-k) as usize] = g - l_hat;
        }
    })?;
    Ok(row)
}

/// Monte Carlo of the martingale series variance.
///
/// Each outer replica freezes one path and estimates, for every lag
/// `k <= k_max`, the gap between the conditional expectations of the
/// fluctuation term given the maps from position 0 onward versus from
/// position 1 onward.  Conditioning is realized by resampling the maps
/// below the boundary `mc_inner` times; two independent inner halves
/// are multiplied so the squared sum is estimated without Monte Carlo
/// bias.  Limit operators are truncated at the [`Z_STAT_TOL`] bound.
pub fn sigma_martingale(
    driver: &Driver,
    seed: u64,
    l_hat: Option<f64>,
    k_max: usize,
    mc_inner: usize,
    n_outer: usize,
) -> Result<SigmaEstimate> {
    if !driver.is_mixing() {
        return Err(Error::Usage(
            "the martingale series needs resamplable conditional laws; the rotation driver has none".into(),
        ));
    }
    if mc_inner == 0 || n_outer == 0 {
        return Err(Error::Usage(
            "martingale series needs mc_inner >= 1 and n_outer >= 1".into(),
        ));
    }
    let l_hat = match l_hat {
        Some(l) => l,
        None => time_average_rate(driver, reference_seed(seed), 2000, 8)?.value,
    };
    let probe_w = driver.window(seed, 0, 4)?;
    let bounds = contraction_bounds(probe_w.table())?;
    let c_max = (0..driver.table_len())
        .map(|i| bounds.coeff(i))
        .fold(0.0f64, f64::max);
    let (depth, trunc) = if c_max < 1.0 - 1e-9 {
        let depth = ((Z_STAT_TOL.ln() / c_max.ln()).ceil() as usize).clamp(16, 256);
        (depth, c_max.powi(depth as i32))
    } else {
        (256, 1.0)
    };
    let lo = -(k_max as i64) - 1;
    let hi = depth as i64 + 1;
    let outer: Result<Vec<(f64, Vec<f64>)>> = (0..n_outer)
        .into_par_iter()
        .map(|o| {
            let seed_o = replica_seed(seed, o as u64);
            let base = driver.window(seed_o, lo, hi)?;
            // halves[h][b][k] = inner average of xi_{-k} with maps below
            // boundary b resampled, inner stream h.
            let zero = || vec![0.0f64; k_max + 1];
            let mut halves = [[zero(), zero()], [zero(), zero()]];
            for (h, per_boundary) in halves.iter_mut().enumerate() {
                for (b, acc) in per_boundary.iter_mut().enumerate() {
                    let stream = replica_seed(seed_o, 1 + 2 * b as u64 + h as u64);
                    for j in 0..mc_inner {
                        let wj =
                            driver.conditional_resample(&base, b as i64, stream, j as u64)?;
                        let row = xi_row(&wj, depth, k_max, l_hat)?;
                        for (a, r) in acc.iter_mut().zip(row.iter()) {
                            *a += r / mc_inner as f64;
                        }
                    }
                }
            }
            let gap = |h: usize, k: usize| halves[h][0][k] - halves[h][1][k];
            let g_a: f64 = (0..=k_max).map(|k| gap(0, k)).sum();
            let g_b: f64 = (0..=k_max).map(|k| gap(1, k)).sum();
            let per_term: Vec<f64> = (0..=k_max).map(|k| gap(0, k) * gap(1, k)).collect();
            Ok((g_a * g_b, per_term))
        })
        .collect();
    let outer = outer?;
    let samples: Vec<f64> = outer.iter().map(|(s, _)| *s).collect();
    let (raw, stderr) = mean_and_stderr(&samples);
    let mut per_term = vec![0.0f64; k_max + 1];
    for (_, terms) in &outer {
        for (acc, t) in per_term.iter_mut().zip(terms.iter()) {
            *acc += t / n_outer as f64;
        }
    }
    // The flag only means something when the series extends past the
    // inspected tail; short series are judged by their stderr instead.
    let tail_flagged = if k_max + 1 > TAIL_REPORT_TERMS {
        let total_weight: f64 = per_term.iter().map(|t| t.abs()).sum();
        let tail_weight: f64 = per_term[k_max + 1 - TAIL_REPORT_TERMS..]
            .iter()
            .map(|t| t.abs())
            .sum();
        total_weight > 0.0 && tail_weight > TAIL_REPORT_FRACTION * total_weight
    } else {
        false
    };
    Ok(SigmaEstimate {
        method: SigmaMethod::MartingaleSeries,
        value: raw.max(0.0),
        stderr,
        k_max: Some(k_max),
        mc_inner: Some(mc_inner),
        per_term: Some(per_term),
        truncation_tail: Some(trunc),
        tail_flagged,
    })
}

/// Outcome of the normality check.
#[derive(Debug, Clone)]
pub enum KsOutcome {
    Test { statistic: f64, p_value: f64 },
    /// The reference variance was zero; reports how many samples exceed
    /// [`DEGENERATE_EPSILON`] in magnitude instead of a p-value.
    Degenerate { fraction_above: f64, epsilon: f64 },
}

/// A one-sample Kolmogorov-Smirnov report.
#[derive(Debug, Clone)]
pub struct KsReport {
    pub n: usize,
    pub sigma: f64,
    pub outcome: KsOutcome,
}

fn ks_asymptotic_p(d: f64, n: f64) -> f64 {
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    let mut sign = 1.0;
    for j in 1..=KS_SERIES_TERMS {
        let term = 2.0 * (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        if term < KS_TERM_CUTOFF {
            break;
        }
        p += sign * term;
        sign = -sign;
    }
    p.clamp(0.0, 1.0)
}

/// Tests the samples against a centered normal with standard deviation
/// `sigma_hat`, via the asymptotic Kolmogorov series.  A zero reference
/// deviation switches to the degenerate branch.
pub fn ks_normality(samples: &[f64], sigma_hat: f64) -> Result<KsReport> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::Usage(format!(
            "the normality test needs at least {KS_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if !sigma_hat.is_finite() || sigma_hat < 0.0 {
        return Err(Error::Usage(format!(
            "reference deviation {sigma_hat} must be finite and nonnegative"
        )));
    }
    let n = samples.len();
    if sigma_hat == 0.0 {
        let above = samples
            .iter()
            .filter(|q| q.abs() > DEGENERATE_EPSILON)
            .count();
        return Ok(KsReport {
            n,
            sigma: sigma_hat,
            outcome: KsOutcome::Degenerate {
                fraction_above: above as f64 / n as f64,
                epsilon: DEGENERATE_EPSILON,
            },
        });
    }
    let normal = Normal::new(0.0, sigma_hat)
        .map_err(|e| Error::Usage(format!("invalid reference distribution: {e}")))?;
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = normal.cdf(*x);
        let lo = f - i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64 - f;
        d = d.max(lo).max(hi);
    }
    Ok(KsReport {
        n,
        sigma: sigma_hat,
        outcome: KsOutcome::Test {
            statistic: d,
            p_value: ks_asymptotic_p(d, n as f64),
        },
    })
}

/// Verdict of the mixing-condition gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateVerdict {
    Applicable,
    NotApplicable,
    Unknown,
}

impl GateVerdict {
    pub fn name(self) -> &'static str {
        match self {
            GateVerdict::Applicable => "applicable",
            GateVerdict::NotApplicable => "not_applicable",
            GateVerdict::Unknown => "unknown",
        }
    }
}

/// Whether the summability condition behind the Gaussian limit holds
/// for a driver at integrability exponent `p`.
#[derive(Debug, Clone)]
pub struct CltGate {
    pub p: f64,
    pub verdict: GateVerdict,
    pub reason: String,
    /// `(N, sum of alpha_n^((p-2)/p) for n <= N)` at the checkpoints.
    pub partial_sums: Vec<(u64, f64)>,
    /// Mass added over the second half of the horizon.
    pub tail_gap: f64,
}

/// Evaluates the dependence-decay summability gate.
///
/// For `p > 2` the partial sums of `alpha_n^((p-2)/p)` are accumulated
/// from the driver's mixing bounds and declared summable when the
/// second half of the horizon adds at most [`GATE_CAUCHY_TOL`].  The
/// `p = 2` branch would need correlation-decay data the shipped drivers
/// do not carry, and the rotation driver is declared non-mixing.
pub fn clt_gate(driver: &Driver, p: f64) -> Result<CltGate> {
    if !(p >= 2.0) {
        return Err(Error::Usage(format!("integrability exponent {p} below 2")));
    }
    if !driver.is_mixing() {
        return Ok(CltGate {
            p,
            verdict: GateVerdict::NotApplicable,
            reason: "driver not mixing".into(),
            partial_sums: Vec::new(),
            tail_gap: f64::INFINITY,
        });
    }
    if p == 2.0 {
        return Ok(CltGate {
            p,
            verdict: GateVerdict::Unknown,
            reason: "correlation-decay coefficients are not available for the shipped drivers"
                .into(),
            partial_sums: Vec::new(),
            tail_gap: f64::NAN,
        });
    }
    let exponent = (p - 2.0) / p;
    let mut sum = 0.0f64;
    let mut partial_sums = Vec::with_capacity(GATE_CHECKPOINTS.len());
    let mut at_half = 0.0f64;
    for n in 1..=GATE_HORIZON {
        sum += driver.alpha_bound(n as usize).powf(exponent);
        if n == GATE_HORIZON / 2 {
            at_half = sum;
        }
        if GATE_CHECKPOINTS.contains(&n) {
            partial_sums.push((n, sum));
        }
    }
    let tail_gap = sum - at_half;
    let (verdict, reason) = if tail_gap <= GATE_CAUCHY_TOL {
        (
            GateVerdict::Applicable,
            format!("alpha series Cauchy within {GATE_CAUCHY_TOL:.0e} over the second half of the horizon"),
        )
    } else {
        (
            GateVerdict::NotApplicable,
            format!("alpha partial sums still grow by {tail_gap:.3e} over the second half of the horizon"),
        )
    };
    Ok(CltGate {
        p,
        verdict,
        reason,
        partial_sums,
        tail_gap,
    })
}

/// `ln` of the spectral radius by iterated normalize-and-square.
///
/// Each step squares the Frobenius-normalized matrix, so after `k`
/// steps the accumulated `sum of ln norm / 2^j` telescopes to
/// `(1/2^k) ln norm(S^(2^k))`, which converges to the log spectral
/// radius.  Forty-eight squarings leave the non-normal transient far
/// below usable precision.  A nilpotent input returns negative
/// infinity.
pub fn spectral_radius_log(s: &DMatrix<Complex64>) -> f64 {
    let mut t = s.clone();
    let mut acc = 0.0f64;
    let mut scale = 1.0f64;
    for _ in 0..GELFAND_SQUARINGS {
        let a = t.norm();
        if a == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += scale * a.ln();
        t.unscale_mut(a);
        t = &t * &t;
        scale *= 0.5;
    }
    let a = t.norm();
    if a == 0.0 {
        return f64::NEG_INFINITY;
    }
    acc + scale * a.ln()
}
