//! Stationary drivers selecting which map acts at each step.
//!
//! A driver holds a finite table of positive maps and a stationary,
//! ergodic rule assigning a table index to every integer position.  Four
//! rules are provided: independent draws, a primitive finite-state Markov
//! chain started from its stationary law, an irrational circle rotation
//! read through equal cells, and a fixed periodic schedule.
//!
//! Realizations are materialized as two-sided [`PathWindow`]s.  Index
//! generation is keyed per position, so overlapping windows of the same
//! seed agree wherever they overlap, and re-basing the origin implements
//! the shift map pathwise for the rules that allow random access.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::Error;
use crate::maps::PositiveMap;
use crate::rng::{keyed_rng, replica_seed, DOMAIN_PATH, DOMAIN_RESAMPLE};
use crate::Result;

/// Largest number of positions a single window may hold.
pub const WINDOW_LIMIT: usize = 1 << 24;

/// Fractional part of the golden ratio; the canonical badly approximable
/// rotation angle.
pub const DEFAULT_ROTATION_BETA: f64 = 0.618_033_988_749_894_9;

/// Rotation angles this close to a fraction with denominator up to
/// [`NEAR_RATIONAL_MAX_DEN`] are rejected.
pub const NEAR_RATIONAL_TOL: f64 = 1e-8;

/// Largest denominator screened by the rationality guard.
pub const NEAR_RATIONAL_MAX_DEN: u64 = 1000;

/// Convergence threshold for the stationary distribution.
pub const STATIONARY_TOL: f64 = 1e-13;

const STATIONARY_MAX_ITER: usize = 200_000;

#[derive(Debug, Clone)]
enum Rule {
    Iid {
        cumulative: Vec<f64>,
        weights: Vec<f64>,
    },
    Markov {
        transition: DMatrix<f64>,
        reversed: DMatrix<f64>,
        stationary: Vec<f64>,
    },
    Rotation {
        beta: f64,
    },
    Deterministic {
        schedule: Vec<usize>,
    },
}

/// A stationary rule over a table of positive maps.
#[derive(Debug, Clone)]
pub struct Driver {
    table: Arc<[Arc<PositiveMap>]>,
    adjoints: Arc<[Arc<PositiveMap>]>,
    rule: Rule,
    dim: usize,
}

/// A realized assignment of table indices to the positions `lo..=hi`.
#[derive(Debug, Clone)]
pub struct PathWindow {
    lo: i64,
    indices: Vec<usize>,
    table: Arc<[Arc<PositiveMap>]>,
    adjoints: Arc<[Arc<PositiveMap>]>,
}

impl PathWindow {
    /// First position covered.
    pub fn lo(&self) -> i64 {
        self.lo
    }

    /// Last position covered.
    pub fn hi(&self) -> i64 {
        self.lo + self.indices.len() as i64 - 1
    }

    /// Table index acting at position `k`.
    ///
    /// # Panics
    /// Outside `lo..=hi`.
    pub fn index_at(&self, k: i64) -> usize {
        assert!(
            k >= self.lo && k <= self.hi(),
            "position {k} outside window [{}, {}]",
            self.lo,
            self.hi()
        );
        self.indices[(k - self.lo) as usize]
    }

    /// The map acting at position `k`.
    pub fn map_at(&self, k: i64) -> &Arc<PositiveMap> {
        &self.table[self.index_at(k)]
    }

    /// The adjoint of the map acting at position `k`.
    pub fn adjoint_at(&self, k: i64) -> &Arc<PositiveMap> {
        &self.adjoints[self.index_at(k)]
    }

    /// The shared map table, indexed by [`Self::index_at`].
    pub fn table(&self) -> &[Arc<PositiveMap>] {
        &self.table
    }

    /// Adjoints of the table entries, in matching order.
    pub fn adjoint_table(&self) -> &[Arc<PositiveMap>] {
        &self.adjoints
    }
}

fn validate_table(maps: &[PositiveMap]) -> Result<usize> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidDriver("the map table is empty".into()))?;
    let dim = first.dim();
    for m in maps {
        if m.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: m.dim(),
            });
        }
    }
    Ok(dim)
}

fn arc_table(maps: Vec<PositiveMap>) -> (Arc<[Arc<PositiveMap>]>, Arc<[Arc<PositiveMap>]>) {
    let adjoints: Vec<Arc<PositiveMap>> = maps.iter().map(|m| Arc::new(m.adjoint())).collect();
    let table: Vec<Arc<PositiveMap>> = maps.into_iter().map(Arc::new).collect();
    (table.into(), adjoints.into())
}

impl Driver {
    /// Independent draws with the given probability weights.
    pub fn iid(maps: Vec<PositiveMap>, weights: Vec<f64>) -> Result<Self> {
        let dim = validate_table(&maps)?;
        if weights.len() != maps.len() {
            return Err(Error::InvalidDriver(format!(
                "{} weights for {} maps",
                weights.len(),
                maps.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDriver("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDriver(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cumulative = Vec::with_capacity(normalized.len());
        let mut acc = 0.0;
        for w in &normalized {
            acc += w;
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        let (table, adjoints) = arc_table(maps);
        Ok(Self {
            table,
            adjoints,
            rule: Rule::Iid {
                cumulative,
                weights: normalized,
            },
            dim,
        })
    }

    /// A primitive Markov chain over the table, started from its
    /// stationary law; the past is generated by the reversed chain.
    pub fn markov(maps: Vec<PositiveMap>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let dim = validate_table(&maps)?;
        let m = maps.len();
        if transition.len() != m || transition.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidDriver(format!(
                "transition matrix must be {m} x {m}"
            )));
        }
        let mut p = DMatrix::<f64>::zeros(m, m);
        for (i, row) in transition.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidDriver(format!(
                    "transition row {i} has a negative or non-finite entry"
                )));
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidDriver(format!(
                    "transition row {i} sums to {total}"
                )));
            }
            for (j, x) in row.iter().enumerate() {
                p[(i, j)] = x / total;
            }
        }
        let stationary = stationary_dist(&p)?;
        // Reversed kernel: P~(i, j) = pi_j P(j, i) / pi_i.
        let mut reversed = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                reversed[(i, j)] = stationary[j] * p[(j, i)] / stationary[i];
            }
        }
        let (table, adjoints) = arc_table(maps);
        Ok(Self {
            table,
            adjoints,
            rule: Rule::Markov {
                transition: p,
                reversed,
                stationary,
            },
            dim,
        })
    }

    /// Circle rotation by `beta`, read through `maps.len()` equal cells of
    /// the unit interval; the phase is drawn uniformly per seed.
    pub fn rotation(maps: Vec<PositiveMap>, beta: f64) -> Result<Self> {
        let dim = validate_table(&maps)?;
        if !beta.is_finite() {
            return Err(Error::InvalidDriver("rotation angle must be finite".into()));
        }
        let frac = beta.fract().rem_euclid(1.0);
        near_rational_guard(frac)?;
        let (table, adjoints) = arc_table(maps);
        Ok(Self {
            table,
            adjoints,
            rule: Rule::Rotation { beta: frac },
            dim,
        })
    }

    /// A fixed periodic schedule of table indices.
    pub fn deterministic(maps: Vec<PositiveMap>, schedule: Vec<usize>) -> Result<Self> {
        let dim = validate_table(&maps)?;
        if schedule.is_empty() {
            return Err(Error::InvalidDriver("the schedule is empty".into()));
        }
        if let Some(&bad) = schedule.iter().find(|&&i| i >= maps.len()) {
            return Err(Error::InvalidDriver(format!(
                "schedule entry {bad} outside table of {} maps",
                maps.len()
            )));
        }
        let (table, adjoints) = arc_table(maps);
        Ok(Self {
            table,
            adjoints,
            rule: Rule::Deterministic { schedule },
            dim,
        })
    }

    /// Dimension of the underlying matrix algebra.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of maps in the table.
    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    /// The table entry at `idx`.
    pub fn map(&self, idx: usize) -> &Arc<PositiveMap> {
        &self.table[idx]
    }

    /// The adjoint of the table entry at `idx`.
    pub fn adjoint_map(&self, idx: usize) -> &Arc<PositiveMap> {
        &self.adjoints[idx]
    }

    /// Short name of the rule, for reports.
    pub fn kind_name(&self) -> &'static str {
        match &self.rule {
            Rule::Iid { .. } => "iid",
            Rule::Markov { .. } => "markov",
            Rule::Rotation { .. } => "rotation",
            Rule::Deterministic { .. } => "deterministic",
        }
    }

    /// Stationary law of the index at a fixed position.
    pub fn index_marginal(&self) -> Vec<f64> {
        match &self.rule {
            Rule::Iid { weights, .. } => weights.clone(),
            Rule::Markov { stationary, .. } => stationary.clone(),
            Rule::Rotation { .. } => {
                vec![1.0 / self.table.len() as f64; self.table.len()]
            }
            Rule::Deterministic { schedule } => {
                let mut freq = vec![0.0; self.table.len()];
                for &i in schedule {
                    freq[i] += 1.0 / schedule.len() as f64;
                }
                freq
            }
        }
    }

    /// Materializes the positions `lo..=hi` of the realization `seed`.
    pub fn window(&self, seed: u64, lo: i64, hi: i64) -> Result<PathWindow> {
        self.shifted_window(seed, lo, hi, 0)
    }

    /// Same realization re-based so that position `k` reads what the
    /// unshifted path holds at `k + origin`.
    ///
    /// Markov paths are generated sequentially outward from position zero
    /// and cannot be re-based pathwise.
    pub fn shifted_window(&self, seed: u64, lo: i64, hi: i64, origin: i64) -> Result<PathWindow> {
        if lo > hi {
            return Err(Error::InvalidDriver(format!(
                "window bounds [{lo}, {hi}] are reversed"
            )));
        }
        let len = (hi - lo + 1) as u128;
        if len > WINDOW_LIMIT as u128 {
            return Err(Error::WindowTooLarge {
                requested: len as u64,
                limit: WINDOW_LIMIT as u64,
            });
        }
        let len = len as usize;
        let indices = match &self.rule {
            Rule::Iid { cumulative, .. } => (0..len)
                .map(|off| {
                    let k = lo + off as i64 + origin;
                    let mut rng = keyed_rng(seed, DOMAIN_PATH, k);
                    Ok(sample_cumulative(cumulative, rng.gen::<f64>()))
                })
                .collect::<Result<Vec<_>>>()?,
            Rule::Markov {
                transition,
                reversed,
                stationary,
            } => {
                if origin != 0 {
                    return Err(Error::UnsupportedShift {
                        kind: "markov".into(),
                    });
                }
                markov_indices(transition, reversed, stationary, seed, lo, hi)
            }
            Rule::Rotation { beta } => {
                let mut rng = keyed_rng(seed, DOMAIN_PATH, 0);
                let phase: f64 = rng.gen();
                let cells = self.table.len() as f64;
                (0..len)
                    .map(|off| {
                        let k = lo + off as i64 + origin;
                        let pos = (phase + k as f64 * beta).rem_euclid(1.0);
                        ((pos * cells) as usize).min(self.table.len() - 1)
                    })
                    .collect()
            }
            Rule::Deterministic { schedule } => {
                let period = schedule.len() as i64;
                (0..len)
                    .map(|off| {
                        let k = lo + off as i64 + origin;
                        schedule[k.rem_euclid(period) as usize]
                    })
                    .collect()
            }
        };
        Ok(PathWindow {
            lo,
            indices,
            table: self.table.clone(),
            adjoints: self.adjoints.clone(),
        })
    }

    /// Redraws the positions below `boundary` from their conditional law
    /// given the frozen positions at and above it; `draw` varies the
    /// redraw randomness.
    ///
    /// Independent rules redraw freely, Markov rules run the reversed
    /// chain from the frozen boundary state, and a periodic schedule is a
    /// point mass.  Rotation cells do not admit a tractable conditional
    /// law and are rejected.
    pub fn conditional_resample(
        &self,
        window: &PathWindow,
        boundary: i64,
        seed: u64,
        draw: u64,
    ) -> Result<PathWindow> {
        if boundary > window.hi() {
            return Err(Error::InvalidDriver(format!(
                "resample boundary {boundary} beyond window end {}",
                window.hi()
            )));
        }
        if boundary <= window.lo() {
            return Ok(window.clone());
        }
        let sub_seed = replica_seed(seed, draw);
        let mut out = window.clone();
        match &self.rule {
            Rule::Iid { cumulative, .. } => {
                for k in window.lo()..boundary {
                    let mut rng = keyed_rng(sub_seed, DOMAIN_RESAMPLE, k);
                    out.indices[(k - out.lo) as usize] =
                        sample_cumulative(cumulative, rng.gen::<f64>());
                }
            }
            Rule::Markov { reversed, .. } => {
                let mut state = window.index_at(boundary);
                for k in (window.lo()..boundary).rev() {
                    let mut rng = keyed_rng(sub_seed, DOMAIN_RESAMPLE, k);
                    state = sample_row(reversed, state, rng.gen::<f64>());
                    out.indices[(k - out.lo) as usize] = state;
                }
            }
            Rule::Deterministic { .. } => {}
            Rule::Rotation { .. } => {
                return Err(Error::InvalidDriver(
                    "rotation cells do not admit conditional resampling".into(),
                ));
            }
        }
        Ok(out)
    }

    /// Upper bound on the strong mixing coefficient at lag `n`.
    ///
    /// Independent and periodic rules are exactly 0; a Markov chain is
    /// bounded through its worst-row convergence to the stationary law;
    /// a rotation is not strongly mixing, so only the trivial bound holds.
    pub fn alpha_bound(&self, n: usize) -> f64 {
        match &self.rule {
            Rule::Iid { .. } | Rule::Deterministic { .. } => 0.0,
            Rule::Rotation { .. } => 1.0,
            Rule::Markov {
                transition,
                stationary,
                ..
            } => {
                if n == 0 {
                    return 0.25;
                }
                // P^n - 1 pi^T equals (P - 1 pi^T)^n because pi is a left
                // and 1 a right fixed vector; powering the deviation keeps
                // full relative precision as the entries decay, where
                // powering P and subtracting pi would bottom out at
                // cancellation noise.
                let m = stationary.len();
                let mut dev = transition.clone();
                for i in 0..m {
                    for j in 0..m {
                        dev[(i, j)] -= stationary[j];
                    }
                }
                let devn = matrix_power(&dev, n);
                let mut worst = 0.0f64;
                for i in 0..m {
                    let l1: f64 = (0..m).map(|j| devn[(i, j)].abs()).sum();
                    worst = worst.max(l1);
                }
                (0.25 * worst).min(0.25)
            }
        }
    }

    /// Whether [`Self::alpha_bound`] decays to zero.
    pub fn is_mixing(&self) -> bool {
        !matches!(self.rule, Rule::Rotation { .. })
    }
}

fn sample_cumulative(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

fn sample_row(p: &DMatrix<f64>, row: usize, u: f64) -> usize {
    let m = p.ncols();
    let mut acc = 0.0;
    for j in 0..m {
        acc += p[(row, j)];
        if u < acc {
            return j;
        }
    }
    m - 1
}

fn markov_indices(
    transition: &DMatrix<f64>,
    reversed: &DMatrix<f64>,
    stationary: &[f64],
    seed: u64,
    lo: i64,
    hi: i64,
) -> Vec<usize> {
    let len = (hi - lo + 1) as usize;
    let mut indices = vec![0usize; len];
    // Anchor at position zero from the stationary law, then run the chain
    // outward in both directions; every position keeps its own key so the
    // draw at position k is stable across window bounds.
    let mut rng = keyed_rng(seed, DOMAIN_PATH, 0);
    let anchor = {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = stationary.len() - 1;
        for (j, &w) in stationary.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = j;
                break;
            }
        }
        pick
    };
    let store = |indices: &mut Vec<usize>, k: i64, v: usize| {
        if k >= lo && k <= hi {
            indices[(k - lo) as usize] = v;
        }
    };
    store(&mut indices, 0, anchor);
    let mut state = anchor;
    for k in 1..=hi.max(0) {
        let mut step = keyed_rng(seed, DOMAIN_PATH, k);
        state = sample_row(transition, state, step.gen::<f64>());
        store(&mut indices, k, state);
    }
    state = anchor;
    for k in (lo.min(0)..0).rev() {
        let mut step = keyed_rng(seed, DOMAIN_PATH, k);
        state = sample_row(reversed, state, step.gen::<f64>());
        store(&mut indices, k, state);
    }
    indices
}

/// Stationary distribution of a primitive row-stochastic matrix.
///
/// Primitivity is checked first through the reachability power
/// `(n-1)^2 + 1`; the distribution then comes from power iteration to
/// within [`STATIONARY_TOL`] in L1.
pub fn stationary_dist(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let m = p.nrows();
    if m != p.ncols() {
        return Err(Error::Dimension {
            expected: m,
            found: p.ncols(),
        });
    }
    if m == 1 {
        return Ok(vec![1.0]);
    }
    // Boolean reachability: a primitive matrix has a strictly positive
    // power by the Wielandt exponent.
    let mut reach = DMatrix::<f64>::from_fn(m, m, |i, j| if p[(i, j)] > 0.0 { 1.0 } else { 0.0 });
    let wielandt = (m - 1) * (m - 1) + 1;
    let mut exponent = 1usize;
    while exponent < wielandt {
        reach = &reach * &reach;
        for x in reach.iter_mut() {
            *x = if *x > 0.0 { 1.0 } else { 0.0 };
        }
        exponent *= 2;
    }
    if reach.iter().any(|&x| x == 0.0) {
        return Err(Error::InvalidDriver(
            "transition matrix is not primitive".into(),
        ));
    }
    let mut pi = vec![1.0 / m as f64; m];
    for _ in 0..STATIONARY_MAX_ITER {
        let mut next = vec![0.0; m];
        for i in 0..m {
            let w = pi[i];
            if w == 0.0 {
                continue;
            }
            for j in 0..m {
                next[j] += w * p[(i, j)];
            }
        }
        let total: f64 = next.iter().sum();
        for x in &mut next {
            *x /= total;
        }
        let diff: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if diff <= STATIONARY_TOL {
            return Ok(pi);
        }
    }
    Err(Error::NonConvergence {
        iterations: STATIONARY_MAX_ITER,
        residual: f64::NAN,
    })
}

fn matrix_power(p: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut result = DMatrix::<f64>::identity(p.nrows(), p.ncols());
    let mut base = p.clone();
    let mut k = n;
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    result
}

fn near_rational_guard(beta: f64) -> Result<()> {
    for q in 1..=NEAR_RATIONAL_MAX_DEN {
        let scaled = beta * q as f64;
        let distance = (scaled - scaled.round()).abs();
        if distance < NEAR_RATIONAL_TOL {
            return Err(Error::NearRational {
                denominator: q,
                distance,
            });
        }
    }
    Ok(())
}
