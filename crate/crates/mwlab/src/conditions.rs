//! Exact evaluation of projective-condition norms and mixing sums.
//!
//! For a Markov functional `X = f(W_0)` the conditional expectation
//! `E_0(X o theta^n)` is the state function `P^n f`, and
//! `E_0(S_n) = g_n := sum_{k<n} P^k f`. Everything in this module is exact
//! linear algebra up to floating point; Monte Carlo never enters.
//!
//! The psi-mixing coefficient (the uniform ratio-mixing coefficient over
//! event pairs) dominates rho but has no finite algorithm implemented here;
//! only the maximal-correlation coefficient `rho(n)` is computed, and the
//! reduction of `rho` to the pair `(W_0, W_n)` is recorded in the report
//! notes because it leans on the Markov property.

use crate::error::{Error, Result};
use crate::models::{FiniteMarkovModel, Observable};
use nalgebra::DMatrix;
use serde::Serialize;

/// Terms are dropped once they fall below `first_term * SERIES_STOP_REL`.
pub const SERIES_STOP_REL: f64 = 1e-14;
/// Centering is enforced up to this defect on entry to the exact operators.
pub const CENTERING_TOL: f64 = 1e-8;
/// Matvec budget for the sequential (sparse) dyadic profile route.
const SEQUENTIAL_MATVEC_BUDGET: u64 = 1 << 22;

/// Cache of dyadic transition-matrix powers `P^(2^k)` for dense models.
pub struct PowerCache {
    pows: Vec<DMatrix<f64>>,
}

impl PowerCache {
    pub fn new(model: &FiniteMarkovModel, operation: &'static str) -> Result<Self> {
        Ok(Self {
            pows: vec![model.dense(operation)?],
        })
    }

    fn ensure(&mut self, k: usize) {
        while self.pows.len() <= k {
            let last = self.pows.last().unwrap();
            let mut sq = last * last;
            // Project back onto row-stochastic matrices: squared powers are
            // stochastic exactly, and renormalizing stops the eps-per-level
            // drift from compounding through deep dyadic ladders.
            for mut row in sq.row_iter_mut() {
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row /= s;
                }
            }
            self.pows.push(sq);
        }
    }

    /// `P^(2^k)` as a dense matrix.
    pub fn dyadic(&mut self, k: usize) -> &DMatrix<f64> {
        self.ensure(k);
        &self.pows[k]
    }

    /// `P^n v` by binary decomposition of `n`.
    pub fn apply_power(&mut self, n: u64, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        let mut bit = 0usize;
        let mut rest = n;
        while rest > 0 {
            if rest & 1 == 1 {
                self.ensure(bit);
                let m = &self.pows[bit];
                let x = nalgebra::DVector::from_column_slice(&out);
                out = (m * x).iter().copied().collect();
            }
            rest >>= 1;
            bit += 1;
        }
        out
    }

    /// Apply `P^(2^k)` to each column.
    pub fn apply_dyadic_multi(&mut self, k: usize, cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.ensure(k);
        let m = &self.pows[k];
        cols.iter()
            .map(|v| {
                let x = nalgebra::DVector::from_column_slice(v);
                (m * x).iter().copied().collect()
            })
            .collect()
    }
}

/// Advance `g_(2^k) -> g_(2^(k+1)) = g + P^(2^k) g` in place, re-projecting
/// onto the centered subspace: `pi(g_n) = 0` exactly in real arithmetic, so
/// subtracting the float drift is a pure stabilization.
pub(crate) fn advance_g_dyadic(
    model: &FiniteMarkovModel,
    cache: &mut PowerCache,
    cols: &mut [Vec<f64>],
    k: usize,
) {
    let shifted = cache.apply_dyadic_multi(k, cols);
    for (a, b) in cols.iter_mut().zip(&shifted) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
    for c in cols.iter_mut() {
        let mean = model.pi_mean(c);
        for x in c.iter_mut() {
            *x -= mean;
        }
    }
}

fn require_centered(model: &FiniteMarkovModel, f: &Observable, context: &'static str) -> Result<()> {
    if f.centering_defect(model) > CENTERING_TOL {
        return Err(Error::UncenteredObservable { context });
    }
    Ok(())
}

/// `g_n = sum_{k=0}^{n-1} P^k f` as an observable of the same kind as `f`:
/// the state function realizing `E_0(S_n)`.
///
/// Uses the doubling recursion `g_{2n} = g_n + P^n g_n` through cached dense
/// dyadic powers when the model admits them, and sequential accumulation
/// otherwise.
pub fn conditional_sum_profile(
    model: &FiniteMarkovModel,
    f: &Observable,
    n: u64,
) -> Result<Observable> {
    require_centered(model, f, "conditional_sum_profile: E_0(S_n) would drift linearly")?;
    if n < 1 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "must be >= 1".into(),
        });
    }
    let cols = match PowerCache::new(model, "conditional sum profile") {
        Ok(mut cache) => g_cols_doubling(&mut cache, &f.components(), n),
        Err(Error::TooLargeForDense { .. }) => {
            if n > SEQUENTIAL_MATVEC_BUDGET {
                return Err(Error::TooLargeForDense {
                    states: model.state_count(),
                    operation: "conditional sum profile at this horizon",
                });
            }
            g_cols_sequential(model, &f.components(), n)
        }
        Err(e) => return Err(e),
    };
    Ok(f.from_components(cols, true))
}

fn g_cols_doubling(cache: &mut PowerCache, f_cols: &[Vec<f64>], n: u64) -> Vec<Vec<f64>> {
    if n == 1 {
        return f_cols.to_vec();
    }
    if n % 2 == 0 {
        let half = g_cols_doubling(cache, f_cols, n / 2);
        let shifted: Vec<Vec<f64>> = half.iter().map(|c| cache.apply_power(n / 2, c)).collect();
        half.iter()
            .zip(&shifted)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect()
    } else {
        let prev = g_cols_doubling(cache, f_cols, n - 1);
        let tail: Vec<Vec<f64>> = f_cols.iter().map(|c| cache.apply_power(n - 1, c)).collect();
        prev.iter()
            .zip(&tail)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect()
    }
}

fn g_cols_sequential(model: &FiniteMarkovModel, f_cols: &[Vec<f64>], n: u64) -> Vec<Vec<f64>> {
    let mut acc = f_cols.to_vec();
    let mut pk = f_cols.to_vec(); // P^k f
    for _ in 1..n {
        pk = model.apply_multi(&pk);
        for (a, b) in acc.iter_mut().zip(&pk) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    acc
}

/// Surrogate pregaussian norm `|f|_G = |f|_2 + |G(f)|_2`.
///
/// For scalars `|G(f)|_2 = |f|_2`, so the norm is `2 |f|_2`. For grid
/// observables the gaussian part is the explicit branch formula: the
/// `L^p(mu)` norm of the per-point L2 norms when `p <= 2`, and the Bochner
/// L2 norm itself when `p >= 2`; equivalence constants are treated as 1.
pub fn gaussian_norm(model: &FiniteMarkovModel, f: &Observable) -> Result<f64> {
    if f.p < 1.0 {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: format!("{} < 1", f.p),
        });
    }
    require_centered(model, f, "gaussian_norm")?;
    match &f.data {
        crate::models::ObservableData::Scalar(v) => Ok(2.0 * model.pi_l2(v)),
        crate::models::ObservableData::Grid { per_state, grid } => {
            let p = f.p;
            let l2x = per_state
                .iter()
                .enumerate()
                .map(|(w, row)| model.pi()[w] * grid.p_norm(row, p).powi(2))
                .sum::<f64>()
                .max(0.0)
                .sqrt();
            let gpart = if p <= 2.0 {
                let k = grid.len();
                (0..k)
                    .map(|i| {
                        let second: f64 = per_state
                            .iter()
                            .enumerate()
                            .map(|(w, row)| model.pi()[w] * row[i] * row[i])
                            .sum();
                        grid.weights[i] * second.max(0.0).powf(p / 2.0)
                    })
                    .sum::<f64>()
                    .powf(1.0 / p)
            } else {
                l2x
            };
            Ok(l2x + gpart)
        }
    }
}

/// One truncated nonnegative series with its partial sums and, when the
/// term ratios have stabilized geometrically, a certified tail bound.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesProfile {
    pub name: String,
    /// Index of the first term (0 or 1 depending on the series convention).
    pub first_index: u64,
    pub terms: Vec<f64>,
    pub partials: Vec<f64>,
    /// Upper bound on the dropped tail, present only when certified by
    /// ratio stabilization over five consecutive terms.
    pub tail_bound: Option<f64>,
    /// True when truncation happened through the relative-size stop rule
    /// rather than the requested length.
    pub stopped_early: bool,
}

impl SeriesProfile {
    fn build(name: &str, first_index: u64, max_terms: usize, mut term_fn: impl FnMut(u64) -> Result<f64>) -> Result<Self> {
        let mut terms = Vec::new();
        let mut partials = Vec::new();
        let mut acc = 0.0;
        let mut first = None;
        let mut stopped_early = false;
        for j in 0..max_terms {
            let n = first_index + j as u64;
            let t = term_fn(n)?;
            let scale = *first.get_or_insert(t.abs().max(f64::MIN_POSITIVE));
            acc += t;
            terms.push(t);
            partials.push(acc);
            if j > 0 && t.abs() < SERIES_STOP_REL * scale {
                stopped_early = true;
                break;
            }
        }
        let tail_bound = Self::certify_tail(&terms);
        Ok(Self {
            name: name.to_string(),
            first_index,
            terms,
            partials,
            tail_bound,
            stopped_early,
        })
    }

    /// Geometric tail bound from the last five term ratios, when they are
    /// stable and strictly contracting.
    fn certify_tail(terms: &[f64]) -> Option<f64> {
        if terms.len() < 6 {
            return None;
        }
        let last = &terms[terms.len() - 6..];
        if last.iter().any(|&t| t <= 0.0) {
            return if terms.last().copied() == Some(0.0) {
                Some(0.0)
            } else {
                None
            };
        }
        let ratios: Vec<f64> = last.windows(2).map(|w| w[1] / w[0]).collect();
        let rmax = ratios.iter().copied().fold(0.0, f64::max);
        let rmin = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        if rmax < 0.999 && (rmax - rmin) <= 0.05 * rmax.max(1e-300) {
            let t_last = *terms.last().unwrap();
            Some(t_last * rmax / (1.0 - rmax))
        } else {
            None
        }
    }

    pub fn total(&self) -> f64 {
        self.partials.last().copied().unwrap_or(0.0)
    }

    pub fn last_term(&self) -> f64 {
        self.terms.last().copied().unwrap_or(0.0)
    }
}

/// Dyadic Maxwell-Woodroofe norm partial sums:
/// `sum_{n=0}^{depth} |g_(2^n)|_G / 2^(n/2)`.
pub fn mw2_norm(model: &FiniteMarkovModel, f: &Observable, depth: usize) -> Result<SeriesProfile> {
    require_centered(model, f, "mw2_norm")?;
    let mut cols = f.components();
    match PowerCache::new(model, "MW2 dyadic profile") {
        Ok(mut cache) => SeriesProfile::build("mw2", 0, depth + 1, |n| {
            if n > 0 {
                advance_g_dyadic(model, &mut cache, &mut cols, (n - 1) as usize);
            }
            let g = f.from_components(cols.clone(), true);
            Ok(gaussian_norm(model, &g)? / 2f64.powf(n as f64 / 2.0))
        }),
        Err(Error::TooLargeForDense { .. }) => {
            if depth >= 63 || (1u64 << (depth + 1)) > SEQUENTIAL_MATVEC_BUDGET {
                return Err(Error::TooLargeForDense {
                    states: model.state_count(),
                    operation: "MW2 profile at this depth",
                });
            }
            SeriesProfile::build("mw2", 0, depth + 1, |n| {
                if n > 0 {
                    // P^(2^(n-1)) g by repeated application.
                    let mut shifted = cols.clone();
                    for _ in 0..(1u64 << (n - 1)) {
                        shifted = model.apply_multi(&shifted);
                    }
                    for (a, b) in cols.iter_mut().zip(&shifted) {
                        for (x, y) in a.iter_mut().zip(b) {
                            *x += y;
                        }
                    }
                    for c in cols.iter_mut() {
                        let mean = model.pi_mean(c);
                        for x in c.iter_mut() {
                            *x -= mean;
                        }
                    }
                }
                let g = f.from_components(cols.clone(), true);
                Ok(gaussian_norm(model, &g)? / 2f64.powf(n as f64 / 2.0))
            })
        }
        Err(e) => Err(e),
    }
}

/// `N_p` series partial sums for grid observables, both exponent branches
/// selected by `f.p`: terms are norms of `P^(n-1) f` divided by `sqrt(n)`.
pub fn np_norm(model: &FiniteMarkovModel, f: &Observable, n_max: usize) -> Result<SeriesProfile> {
    require_centered(model, f, "np_norm")?;
    let (per_state0, grid) = match &f.data {
        crate::models::ObservableData::Grid { per_state, grid } => (per_state, grid),
        _ => return Err(Error::ScalarObservableRejected),
    };
    let p = f.p;
    let k = grid.len();
    let m = model.state_count();
    let mut cols: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..m).map(|w| per_state0[w][i]).collect())
        .collect();
    SeriesProfile::build("np", 1, n_max, |n| {
        if n > 1 {
            cols = model.apply_multi(&cols);
        }
        let value = if p < 2.0 {
            // (integral over mu of |E_0(X_{n-1}(s))|_2^p)^(1/p)
            (0..k)
                .map(|i| grid.weights[i] * model.pi_l2(&cols[i]).powf(p))
                .sum::<f64>()
                .powf(1.0 / p)
        } else {
            // | (integral |E_0(X_{n-1}(s))|^p)^(1/p) |_2
            (0..m)
                .map(|w| {
                    let inner: f64 = (0..k)
                        .map(|i| grid.weights[i] * cols[i][w].abs().powf(p))
                        .sum();
                    model.pi()[w] * inner.powf(2.0 / p)
                })
                .sum::<f64>()
                .max(0.0)
                .sqrt()
        };
        Ok(value / (n as f64).sqrt())
    })
}

/// Both `N_p` branch formulas at the same truncation; they must coincide at
/// `p = 2`. Used as the dual-evaluation oracle.
pub fn np_norm_both_branches(
    model: &FiniteMarkovModel,
    f: &Observable,
    n_max: usize,
) -> Result<(SeriesProfile, SeriesProfile)> {
    let mut lo = f.clone();
    lo.p = 2.0 - 1e-15; // force the p < 2 branch
    let mut hi = f.clone();
    hi.p = 2.0;
    Ok((np_norm(model, &lo, n_max)?, np_norm(model, &hi, n_max)?))
}

/// Strengthened condition: `sum_{n>=1} |P^(n-1) f|_G / sqrt(n)`.
pub fn strengthened_sum(
    model: &FiniteMarkovModel,
    f: &Observable,
    n_max: usize,
) -> Result<SeriesProfile> {
    require_centered(model, f, "strengthened_sum")?;
    let mut cols = f.components();
    SeriesProfile::build("strengthened", 1, n_max, |n| {
        if n > 1 {
            cols = model.apply_multi(&cols);
        }
        let g = f.from_components(cols.clone(), true);
        Ok(gaussian_norm(model, &g)? / (n as f64).sqrt())
    })
}

/// `H_2` series: terms `|E_0(X o theta^n) - E_(-1)(X o theta^n)|_2`.
///
/// For scalar Markov functionals the squared term telescopes exactly to
/// `pi((P^n f)^2) - pi((P^(n+1) f)^2)`; for grid observables the Bochner
/// norm is taken under the stationary pair law.
pub fn h2_norm(model: &FiniteMarkovModel, f: &Observable, n_max: usize) -> Result<SeriesProfile> {
    require_centered(model, f, "h2_norm")?;
    match &f.data {
        crate::models::ObservableData::Scalar(v) => {
            let mut pn = v.clone();
            SeriesProfile::build("h2", 0, n_max, |n| {
                if n > 0 {
                    pn = model.apply(&pn);
                }
                let next = model.apply(&pn);
                let sq = model.pi_dot(&pn, &pn) - model.pi_dot(&next, &next);
                if sq < -1e-12 {
                    return Err(Error::NumericalDegeneracy {
                        context: "h2 squared term",
                        value: sq,
                    });
                }
                Ok(sq.max(0.0).sqrt())
            })
        }
        crate::models::ObservableData::Grid { grid, .. } => {
            let mut cols = f.components();
            let p = f.p;
            SeriesProfile::build("h2", 0, n_max, |n| {
                if n > 0 {
                    cols = model.apply_multi(&cols);
                }
                let next = model.apply_multi(&cols);
                // E over the pair (W_-1, W_0) of |P^n f(W_0) - P^(n+1) f(W_-1)|_X^2.
                let mut acc = 0.0;
                for (w, row) in model.rows().iter().enumerate() {
                    let pw = model.pi()[w];
                    for &(w2, pr) in row {
                        let diff: Vec<f64> = cols
                            .iter()
                            .zip(&next)
                            .map(|(c, nx)| c[w2 as usize] - nx[w])
                            .collect();
                        acc += pw * pr * grid.p_norm(&diff, p).powi(2);
                    }
                }
                Ok(acc.max(0.0).sqrt())
            })
        }
    }
}

/// Maximal correlation of `(W_0, W_n)`: the second-largest singular value
/// of `diag(pi)^(1/2) P^n diag(pi)^(-1/2)`, in `[0, 1]`.
pub fn rho_maximal_correlation(model: &FiniteMarkovModel, n: u64) -> Result<f64> {
    if n == 0 {
        return Ok(1.0);
    }
    let mut cache = PowerCache::new(model, "rho maximal correlation")?;
    rho_from_cache(model, &mut cache, n)
}

fn rho_from_cache(model: &FiniteMarkovModel, cache: &mut PowerCache, n: u64) -> Result<f64> {
    let m = model.state_count();
    let mut pn = DMatrix::identity(m, m);
    let mut bit = 0usize;
    let mut rest = n;
    while rest > 0 {
        if rest & 1 == 1 {
            pn = &pn * cache.dyadic(bit);
        }
        rest >>= 1;
        bit += 1;
    }
    let mut a = pn;
    for w in 0..m {
        for w2 in 0..m {
            a[(w, w2)] *= (model.pi()[w] / model.pi()[w2]).sqrt();
        }
    }
    let svd = a.svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let top = sv.first().copied().unwrap_or(0.0);
    if (top - 1.0).abs() > 1e-8 {
        return Err(Error::NumericalDegeneracy {
            context: "leading singular value of the correlation operator",
            value: top,
        });
    }
    Ok(sv.get(1).copied().unwrap_or(0.0).clamp(0.0, 1.0))
}

/// Partial sums of `sum_{n>=1} rho(2^n)`.
pub fn rho_dyadic_profile(model: &FiniteMarkovModel, max_exp: usize) -> Result<SeriesProfile> {
    let mut cache = PowerCache::new(model, "rho dyadic profile")?;
    SeriesProfile::build("rho_dyadic", 1, max_exp, |n| {
        rho_from_cache(model, &mut cache, 1u64 << n)
    })
}

/// Bundle of the condition series for one observable on one model.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub mw2: Option<SeriesProfile>,
    pub np: Option<SeriesProfile>,
    pub strengthened: Option<SeriesProfile>,
    pub h2: Option<SeriesProfile>,
    pub rho_dyadic: Option<SeriesProfile>,
    pub notes: Vec<String>,
}

/// Evaluate every applicable condition series: `N_p` only for grid
/// observables, `rho` only when the model admits dense factorizations.
pub fn build_condition_report(
    model: &FiniteMarkovModel,
    f: &Observable,
    depth: usize,
    n_max: usize,
) -> Result<ConditionReport> {
    let mut notes = Vec::new();
    let np = if f.is_scalar() {
        None
    } else {
        Some(np_norm(model, f, n_max)?)
    };
    let rho_dyadic = match rho_dyadic_profile(model, depth.min(24)) {
        Ok(profile) => {
            notes.push(
                "rho(n) is the maximal correlation of the pair (W_0, W_n); the reduction \
                 from the full past/future sigma-fields relies on the Markov property"
                    .to_string(),
            );
            Some(profile)
        }
        Err(Error::TooLargeForDense { .. }) => {
            notes.push("rho series skipped: model too large for dense SVD".to_string());
            None
        }
        Err(e) => return Err(e),
    };
    Ok(ConditionReport {
        mw2: Some(mw2_norm(model, f, depth)?),
        np,
        strengthened: Some(strengthened_sum(model, f, n_max)?),
        h2: Some(h2_norm(model, f, n_max)?),
        rho_dyadic,
        notes,
    })
}
