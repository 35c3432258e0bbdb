//! Empirical-process observables on a quadrature grid: the centered
//! indicator process `X_n(t) = 1_(Y_n <= t) - F(t)`, the grid `L^p(mu)`
//! distance between empirical and true distribution functions, the
//! dependence coefficients `phi~`, `alpha~`, `tau-check`, their exact
//! inequality checks, the mixing summability series, and the Monte Carlo
//! convergence experiment for `sqrt(n) D_(n,p)`.
//!
//! Conditioning on the past sigma-field is realized as conditioning on the
//! current state (the Markov property), exactly as in the condition norms.
//! The supremum over thresholds in `phi~`/`alpha~` is exact: conditional
//! cdfs of finite-support observations are step functions, so the sup is
//! attained on the set of distinct observation values.

use crate::error::{Error, Result};
use crate::limits::dual_net;
use crate::martingale::{asymptotic_covariance, CovarianceOperator};
use crate::models::{center_observable, FiniteMarkovModel, Grid, Observable, PathStream};
use crate::rng::CounterRng;
use crate::stats::{lil_normalizer, mean, variance};
use rayon::prelude::*;
use serde::Serialize;

/// Source of the observation sequence `Y_n`.
#[derive(Debug, Clone)]
pub enum Driver {
    /// Stationary Markov chain with a per-state observation map.
    Markov {
        model: FiniteMarkovModel,
        ymap: Vec<f64>,
    },
    /// Independent uniforms on `[0, 1)`.
    IidUniform01,
    /// Independent draws from a finite law.
    IidAtoms { values: Vec<f64>, probs: Vec<f64> },
}

impl Driver {
    pub fn is_markov(&self) -> bool {
        matches!(self, Driver::Markov { .. })
    }

    /// Exact marginal cdf `F(t) = P(Y <= t)`.
    pub fn true_cdf(&self, t: f64) -> f64 {
        match self {
            Driver::Markov { model, ymap } => ymap
                .iter()
                .zip(model.pi())
                .filter(|(y, _)| **y <= t)
                .map(|(_, p)| p)
                .sum(),
            Driver::IidUniform01 => t.clamp(0.0, 1.0),
            Driver::IidAtoms { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(v, _)| **v <= t)
                .map(|(_, p)| p)
                .sum(),
        }
    }

    /// Atoms of the observation law with their probabilities, when the
    /// support is finite.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        let mut pairs: Vec<(f64, f64)> = match self {
            Driver::Markov { model, ymap } => {
                ymap.iter().copied().zip(model.pi().iter().copied()).collect()
            }
            Driver::IidAtoms { values, probs } => {
                values.iter().copied().zip(probs.iter().copied()).collect()
            }
            Driver::IidUniform01 => return None,
        };
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (v, p) in pairs {
            match merged.last_mut() {
                Some((lv, lp)) if *lv == v => *lp += p,
                _ => merged.push((v, p)),
            }
        }
        Some(merged)
    }

    fn validate(&self) -> Result<()> {
        if let Driver::IidAtoms { values, probs } = self {
            if values.len() != probs.len() || values.is_empty() {
                return Err(Error::InvalidParameter {
                    name: "driver.atoms",
                    reason: "values and probs must be equal-length and nonempty".into(),
                });
            }
            let s: f64 = probs.iter().sum();
            if probs.iter().any(|&p| p < 0.0) || (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter {
                    name: "driver.atoms",
                    reason: format!("probabilities sum to {s}"),
                });
            }
        }
        if let Driver::Markov { model, ymap } = self {
            if ymap.len() != model.state_count() {
                return Err(Error::InvalidParameter {
                    name: "driver.ymap",
                    reason: format!(
                        "{} observations for {} states",
                        ymap.len(),
                        model.state_count()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// How the grid measure is meant: a plain finite quadrature, or the
/// trapezoidal discretization of Lebesgue measure on a range (required for
/// the quantile-integral branch of the summability test).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MuKind {
    FiniteGrid,
    LebesgueGrid,
}

/// The empirical-process configuration: driver, quadrature grid for `mu`,
/// exponent `p`, and the exact cdf on the grid. The moment gates are
/// evaluated on construction and carried for reporting (they are always
/// finite on a finite grid).
#[derive(Debug, Clone)]
pub struct EmpiricalSetup {
    pub driver: Driver,
    pub mu_grid: Grid,
    pub mu_kind: MuKind,
    pub p: f64,
    /// `F(t_i)` at each grid point, nondecreasing within `[0, 1]`.
    pub f_on_grid: Vec<f64>,
    /// Grid value of `int (1-F)^p` over `t >= 0` plus `int F^p` over `t < 0`.
    pub tail_moment_gate: f64,
    /// Grid value of `E |F_mu(Y)|^(2/p)` with `F_mu` the signed mu-mass
    /// between 0 and the argument (finite-support drivers only).
    pub fmu_moment_gate: Option<f64>,
}

impl EmpiricalSetup {
    pub fn new(driver: Driver, mu_grid: Grid, mu_kind: MuKind, p: f64) -> Result<Self> {
        if p < 1.0 {
            return Err(Error::InvalidParameter {
                name: "p",
                reason: format!("{p} < 1"),
            });
        }
        driver.validate()?;
        let f_on_grid: Vec<f64> = mu_grid.points.iter().map(|&t| driver.true_cdf(t)).collect();
        if f_on_grid
            .windows(2)
            .any(|w| w[1] < w[0] - 1e-15)
            || f_on_grid.iter().any(|&v| !(-1e-15..=1.0 + 1e-15).contains(&v))
        {
            return Err(Error::NumericalDegeneracy {
                context: "true cdf on grid is not a nondecreasing [0,1] function",
                value: f64::NAN,
            });
        }
        let tail_moment_gate = mu_grid
            .points
            .iter()
            .zip(&mu_grid.weights)
            .zip(&f_on_grid)
            .map(|((&t, &w), &fv)| {
                if t >= 0.0 {
                    w * (1.0 - fv).powf(p)
                } else {
                    w * fv.powf(p)
                }
            })
            .sum();
        // F_mu(y): signed grid mass between 0 and y.
        let fmu =
            |y: f64| -> f64 {
                let signed: f64 = mu_grid
                    .points
                    .iter()
                    .zip(&mu_grid.weights)
                    .map(|(&t, &w)| {
                        if y >= 0.0 && (0.0..y).contains(&t) {
                            w
                        } else if y < 0.0 && (y..0.0).contains(&t) {
                            -w
                        } else {
                            0.0
                        }
                    })
                    .sum();
                signed
            };
        let fmu_moment_gate = driver.atoms().map(|atoms| {
            atoms
                .iter()
                .map(|&(y, pr)| pr * fmu(y).abs().powf(2.0 / p))
                .sum()
        });
        Ok(Self {
            driver,
            mu_grid,
            mu_kind,
            p,
            f_on_grid,
            tail_moment_gate,
            fmu_moment_gate,
        })
    }

    /// The centered indicator process as a grid observable on the driving
    /// chain: `per_state[w][i] = 1_(y(w) <= t_i) - F(t_i)`. Markov drivers
    /// only.
    pub fn grid_observable(&self) -> Result<Observable> {
        match &self.driver {
            Driver::Markov { model, ymap } => {
                let per_state = ymap
                    .iter()
                    .map(|&y| {
                        self.mu_grid
                            .points
                            .iter()
                            .zip(&self.f_on_grid)
                            .map(|(&t, &fv)| if y <= t { 1.0 - fv } else { -fv })
                            .collect()
                    })
                    .collect();
                let mut obs = Observable::grid(per_state, self.mu_grid.clone(), self.p)?;
                obs.centered = true;
                debug_assert!(obs.centering_defect(model) < 1e-12);
                Ok(obs)
            }
            _ => Err(Error::InvalidParameter {
                name: "driver",
                reason: "grid observable requires a Markov driver".into(),
            }),
        }
    }
}

/// Empirical counts `#(samples <= t_i)` accumulated onto the grid. Uses
/// constant-time bucketing when the grid is uniformly spaced, binary search
/// otherwise.
fn counts_on_grid(sample: &[f64], grid: &Grid) -> Vec<u64> {
    let k = grid.len();
    let points = &grid.points;
    let uniform_step = if k >= 2 {
        let h = (points[k - 1] - points[0]) / (k - 1) as f64;
        let ok = points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1e-300));
        if ok && h > 0.0 {
            Some(h)
        } else {
            None
        }
    } else {
        None
    };
    // hist[b] = number of samples whose smallest covering index is b;
    // hist[k] collects samples beyond the last grid point.
    let mut hist = vec![0u64; k + 1];
    match uniform_step {
        Some(h) => {
            let t0 = points[0];
            for &y in sample {
                let mut b = ((y - t0) / h).ceil() as i64;
                b = b.clamp(0, k as i64);
                let mut bu = b as usize;
                // Guard the float index against boundary rounding.
                while bu > 0 && points[bu - 1] >= y {
                    bu -= 1;
                }
                while bu < k && points[bu] < y {
                    bu += 1;
                }
                hist[bu] += 1;
            }
        }
        None => {
            for &y in sample {
                let b = points.partition_point(|&t| t < y);
                hist[b] += 1;
            }
        }
    }
    let mut counts = vec![0u64; k];
    let mut acc = 0u64;
    for i in 0..k {
        acc += hist[i];
        counts[i] = acc;
    }
    counts
}

/// `D_(n,p)(mu) = (sum_i w_i |Fhat(t_i) - F(t_i)|^p)^(1/p)`: the grid
/// `L^p(mu)` distance between the empirical and the true distribution
/// function. For `p = 1` with Lebesgue weights this is the discretized
/// Wasserstein-1 distance.
pub fn empirical_cdf_distance(sample: &[f64], f_true: &[f64], grid: &Grid, p: f64) -> f64 {
    assert!(!sample.is_empty(), "sample must be nonempty");
    assert_eq!(f_true.len(), grid.len());
    let counts = counts_on_grid(sample, grid);
    let n = sample.len() as f64;
    grid.weights
        .iter()
        .zip(&counts)
        .zip(f_true)
        .map(|((&w, &c), &fv)| w * (c as f64 / n - fv).abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// One lag of the dependence-coefficient table with its exact bound slacks.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CoefficientRow {
    pub n: u64,
    pub phi_tilde: f64,
    pub alpha_tilde: f64,
    pub tau_check: f64,
    /// `mu(R)^(1/p) phi~(n) - tau`.
    pub lemma63_phi_slack: f64,
    /// `mu(R)^(1/p) alpha~(n)^(1/q) - tau`, `q = max(2, p)`.
    pub lemma63_alpha_slack: f64,
    /// `sqrt(2) (int (F(1-F))^(p/2) dmu)^(1/p) phi~(n)^(1/2) - tau`
    /// (only for `p <= 2`).
    pub lemma64_phi_slack: Option<f64>,
    /// `sqrt(2) (int min[alpha~, F(1-F)]^(p/2) dmu)^(1/p) - tau`
    /// (only for `p <= 2`).
    pub lemma64_alpha_slack: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CoefficientTable {
    pub rows: Vec<CoefficientRow>,
    pub mu_total_mass: f64,
}

impl CoefficientTable {
    /// Minimum slack across all lags and all evaluated bounds.
    pub fn min_slack(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| {
                [
                    Some(r.lemma63_phi_slack),
                    Some(r.lemma63_alpha_slack),
                    r.lemma64_phi_slack,
                    r.lemma64_alpha_slack,
                ]
            })
            .flatten()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Exact `phi~(n)` and `alpha~(n)` for `n = 0..=n_max`.
///
/// For a Markov driver the conditional cdf of `Y_n` given the past is the
/// `P^n` row of the current state evaluated against the observation map,
/// and the sup over thresholds is attained on the distinct observation
/// values. Iid drivers have both coefficients zero for `n >= 1`.
pub fn mixing_coefficients(driver: &Driver, n_max: u64) -> Result<Vec<(u64, f64, f64)>> {
    driver.validate()?;
    match driver {
        Driver::Markov { model, ymap } => {
            let m = model.state_count();
            let dense = model.dense("mixing coefficients")?;
            // States ordered by observation value; thresholds are the
            // distinct values in that order.
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| ymap[a].partial_cmp(&ymap[b]).unwrap());
            let mut pn = nalgebra::DMatrix::<f64>::identity(m, m);
            let mut out = Vec::with_capacity(n_max as usize + 1);
            for n in 0..=n_max {
                if n > 0 {
                    pn = &pn * &dense;
                }
                let mut phi = 0.0f64;
                let mut alpha = 0.0f64;
                // Sweep thresholds in y-order, accumulating conditional and
                // marginal cdfs; evaluate only where the threshold value
                // changes (ties accumulate first).
                let mut cond = vec![0.0f64; m];
                let mut marg = 0.0f64;
                for (rank, &w2) in order.iter().enumerate() {
                    for (w, c) in cond.iter_mut().enumerate() {
                        *c += pn[(w, w2)];
                    }
                    marg += model.pi()[w2];
                    let next_is_tie =
                        rank + 1 < m && ymap[order[rank + 1]] == ymap[w2];
                    if next_is_tie {
                        continue;
                    }
                    let mut a_here = 0.0;
                    for (w, &c) in cond.iter().enumerate() {
                        let diff = (c - marg).abs();
                        phi = phi.max(diff);
                        a_here += model.pi()[w] * diff;
                    }
                    alpha = alpha.max(a_here);
                }
                out.push((n, phi, alpha));
            }
            Ok(out)
        }
        _ => {
            // Conditioning on the trivial past: zero for n >= 1. At n = 0
            // the conditional cdf is the indicator itself.
            let (phi0, alpha0) = match driver.atoms() {
                Some(atoms) => {
                    let mut phi = 0.0f64;
                    let mut alpha = 0.0f64;
                    let mut fcum = 0.0;
                    for (i, &(_, p)) in atoms.iter().enumerate() {
                        fcum += p;
                        let hi = (1.0 - fcum).max(fcum);
                        if i + 1 < atoms.len() {
                            phi = phi.max(hi);
                        }
                        alpha = alpha.max(2.0 * fcum * (1.0 - fcum));
                    }
                    (phi, alpha)
                }
                // Continuous uniform: sup over t of the essential sup is 1,
                // sup of the mean absolute deviation is 1/2 at the median.
                None => (1.0, 0.5),
            };
            Ok((0..=n_max)
                .map(|n| if n == 0 { (0, phi0, alpha0) } else { (n, 0.0, 0.0) })
                .collect())
        }
    }
}

/// Exact `tau-check(n)` for the setup's `(mu, p)`: the `p >= 2` branch is
/// the L2 norm over states of the grid `p`-norm of the conditional-cdf
/// deviation, the `1 <= p < 2` branch integrates the per-point L2 norms.
pub fn tau_check(setup: &EmpiricalSetup, n: u64) -> Result<f64> {
    match &setup.driver {
        Driver::Markov { model, ymap } => {
            let dense = model.dense("tau-check")?;
            let mut pn = nalgebra::DMatrix::<f64>::identity(model.state_count(), model.state_count());
            for _ in 0..n {
                pn = &pn * &dense;
            }
            Ok(tau_from_power(setup, model, ymap, &pn))
        }
        _ => Ok(if n == 0 {
            // |1_(Y<=t) - F(t)| has exact second moment F(1-F) pointwise.
            let integrand: f64 = setup
                .mu_grid
                .weights
                .iter()
                .zip(&setup.f_on_grid)
                .map(|(&w, &fv)| {
                    let v2 = fv * (1.0 - fv);
                    if setup.p >= 2.0 {
                        // (int |Z|^p)^:(1/p) then L2: for indicators |Z| is
                        // two-valued; fall back to the direct formula below.
                        f64::NAN.min(w * v2) // unreachable branch marker
                    } else {
                        w * v2.powf(setup.p / 2.0)
                    }
                })
                .sum();
            if setup.p >= 2.0 {
                tau0_direct(setup)
            } else {
                integrand.powf(1.0 / setup.p)
            }
        } else {
            0.0
        }),
    }
}

/// `tau(0)` for iid drivers at `p >= 2`, from the exact two-valued law of
/// the indicator deviation.
fn tau0_direct(setup: &EmpiricalSetup) -> f64 {
    match setup.driver.atoms() {
        Some(atoms) => {
            // E[(int |1_(Y<=t) - F(t)|^p mu(dt))^(2/p)] over the atom law.
            let e: f64 = atoms
                .iter()
                .map(|&(y, pr)| {
                    let inner: f64 = setup
                        .mu_grid
                        .points
                        .iter()
                        .zip(&setup.mu_grid.weights)
                        .zip(&setup.f_on_grid)
                        .map(|((&t, &w), &fv)| {
                            let z = if y <= t { 1.0 - fv } else { fv };
                            w * z.powf(setup.p)
                        })
                        .sum();
                    pr * inner.powf(2.0 / setup.p)
                })
                .sum();
            e.sqrt()
        }
        None => {
            // Uniform(0,1): integrate the inner grid norm over y by a fine
            // midpoint rule (reporting-only path).
            let steps = 4096;
            let e: f64 = (0..steps)
                .map(|j| {
                    let y = (j as f64 + 0.5) / steps as f64;
                    let inner: f64 = setup
                        .mu_grid
                        .points
                        .iter()
                        .zip(&setup.mu_grid.weights)
                        .zip(&setup.f_on_grid)
                        .map(|((&t, &w), &fv)| {
                            let z = if y <= t { 1.0 - fv } else { fv };
                            w * z.powf(setup.p)
                        })
                        .sum();
                    inner.powf(2.0 / setup.p) / steps as f64
                })
                .sum();
            e.sqrt()
        }
    }
}

fn tau_from_power(
    setup: &EmpiricalSetup,
    model: &FiniteMarkovModel,
    ymap: &[f64],
    pn: &nalgebra::DMatrix<f64>,
) -> f64 {
    let m = model.state_count();
    let k = setup.mu_grid.len();
    // Z[w][i] = P(Y_n <= t_i | W_0 = w) - F(t_i).
    let mut z = vec![vec![0.0f64; k]; m];
    for w in 0..m {
        for w2 in 0..m {
            let pr = pn[(w, w2)];
            if pr == 0.0 {
                continue;
            }
            let y = ymap[w2];
            for (i, &t) in setup.mu_grid.points.iter().enumerate() {
                if y <= t {
                    z[w][i] += pr;
                }
            }
        }
        for (zi, fv) in z[w].iter_mut().zip(&setup.f_on_grid) {
            *zi -= fv;
        }
    }
    if setup.p >= 2.0 {
        let e: f64 = (0..m)
            .map(|w| {
                let inner: f64 = setup
                    .mu_grid
                    .weights
                    .iter()
                    .zip(&z[w])
                    .map(|(&wt, &zv)| wt * zv.abs().powf(setup.p))
                    .sum();
                model.pi()[w] * inner.powf(2.0 / setup.p)
            })
            .sum();
        e.max(0.0).sqrt()
    } else {
        let outer: f64 = (0..k)
            .map(|i| {
                let l2: f64 = (0..m).map(|w| model.pi()[w] * z[w][i] * z[w][i]).sum();
                setup.mu_grid.weights[i] * l2.max(0.0).sqrt().powf(setup.p)
            })
            .sum();
        outer.powf(1.0 / setup.p)
    }
}

/// Build the full coefficient table with exact bound slacks per lag.
/// All quantities on both sides of each bound are exact, so the slacks must
/// be nonnegative up to accumulated roundoff.
pub fn coefficient_table(setup: &EmpiricalSetup, n_max: u64) -> Result<CoefficientTable> {
    let phialpha = mixing_coefficients(&setup.driver, n_max)?;
    let mu_mass = setup.mu_grid.total_mass();
    let q = setup.p.max(2.0);
    // int (F(1-F))^(p/2) dmu, shared by the lemma-64 phi bound.
    let f_variance_integral: f64 = setup
        .mu_grid
        .weights
        .iter()
        .zip(&setup.f_on_grid)
        .map(|(&w, &fv)| w * (fv * (1.0 - fv)).powf(setup.p / 2.0))
        .sum();

    let mut rows = Vec::with_capacity(phialpha.len());
    for (n, phi, alpha) in phialpha {
        let tau = tau_check(setup, n)?;
        let lemma63_phi_slack = mu_mass.powf(1.0 / setup.p) * phi - tau;
        let lemma63_alpha_slack = mu_mass.powf(1.0 / setup.p) * alpha.powf(1.0 / q) - tau;
        let (lemma64_phi_slack, lemma64_alpha_slack) = if setup.p <= 2.0 {
            let phi_bound = std::f64::consts::SQRT_2
                * f_variance_integral.powf(1.0 / setup.p)
                * phi.sqrt();
            let alpha_integrand: f64 = setup
                .mu_grid
                .weights
                .iter()
                .zip(&setup.f_on_grid)
                .map(|(&w, &fv)| w * alpha.min(fv * (1.0 - fv)).powf(setup.p / 2.0))
                .sum();
            let alpha_bound =
                std::f64::consts::SQRT_2 * alpha_integrand.powf(1.0 / setup.p);
            (Some(phi_bound - tau), Some(alpha_bound - tau))
        } else {
            (None, None)
        };
        rows.push(CoefficientRow {
            n,
            phi_tilde: phi,
            alpha_tilde: alpha,
            tau_check: tau,
            lemma63_phi_slack,
            lemma63_alpha_slack,
            lemma64_phi_slack,
            lemma64_alpha_slack,
        });
    }
    Ok(CoefficientTable {
        rows,
        mu_total_mass: mu_mass,
    })
}

/// Exact right-continuous step quantile `Q(x) = inf{t >= 0 : P(|Y| > t) <= x}`
/// for a finite-support law, as constant pieces
/// `(x_lo, x_hi, value)` covering `(0, 1)`.
fn quantile_pieces(atoms: &[(f64, f64)]) -> Vec<(f64, f64, f64)> {
    // Law of |Y|.
    let mut abs_atoms: Vec<(f64, f64)> = Vec::new();
    let mut sorted: Vec<(f64, f64)> = atoms.iter().map(|&(v, p)| (v.abs(), p)).collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (v, p) in sorted {
        match abs_atoms.last_mut() {
            Some((lv, lp)) if *lv == v => *lp += p,
            _ => abs_atoms.push((v, p)),
        }
    }
    // Ascending values b_1 < .. < b_J with G(b_j) = P(|Y| > b_j).
    let mut pieces = Vec::new();
    let mut tail_above = 1.0; // G(b_(j-1)) entering iteration j, G(b_0) = 1
    for &(b, p) in &abs_atoms {
        let g_here = tail_above - p; // G(b_j)
        // Q(x) = b_j on [G(b_j), G(b_(j-1))).
        if b > 0.0 && tail_above > g_here {
            pieces.push((g_here.max(0.0), tail_above, b));
        }
        tail_above = g_here;
    }
    pieces
}

/// Closed-form `int_0^a x^(p/2 - 1) Q(x) dx` for a step quantile.
fn quantile_integral(pieces: &[(f64, f64, f64)], a: f64, p: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let ex = p / 2.0;
    pieces
        .iter()
        .map(|&(lo, hi, q)| {
            let lo = lo.max(0.0);
            let hi = hi.min(a);
            if hi > lo {
                q * (hi.powf(ex) - lo.powf(ex)) / ex
            } else {
                0.0
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SummabilityBranch {
    /// `sum n^(-1/2) phi~(n)^(1/2)` with the `F(1-F)` moment gate.
    Phi,
    /// `sum n^(-1/2) (int_0^alpha~(n) x^(p/2-1) Q(x) dx)^(1/p)`,
    /// Lebesgue-grid `mu` only.
    AlphaQuantile,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TheomixReport {
    pub branch: SummabilityBranch,
    pub terms: Vec<f64>,
    pub partials: Vec<f64>,
    /// Grid value of the branch's moment gate.
    pub moment_gate: f64,
    /// True when the terms decayed geometrically with a stable ratio, so
    /// the series total is certifiably finite at this truncation.
    pub summability_certified: bool,
}

/// Partial sums of the chosen summability series, each term exact.
pub fn theomix_series(
    setup: &EmpiricalSetup,
    branch: SummabilityBranch,
    n_max: u64,
) -> Result<TheomixReport> {
    if branch == SummabilityBranch::AlphaQuantile && setup.mu_kind != MuKind::LebesgueGrid {
        return Err(Error::InvalidParameter {
            name: "branch",
            reason: "the quantile-integral branch requires a Lebesgue grid measure".into(),
        });
    }
    let coeffs = mixing_coefficients(&setup.driver, n_max)?;
    let pieces = match branch {
        SummabilityBranch::AlphaQuantile => match setup.driver.atoms() {
            Some(atoms) => Some(quantile_pieces(&atoms)),
            None => None, // Uniform01 handled analytically below
        },
        SummabilityBranch::Phi => None,
    };
    let mut terms = Vec::new();
    let mut partials = Vec::new();
    let mut acc = 0.0;
    for (n, phi, alpha) in coeffs.into_iter().skip(1) {
        let term = match branch {
            SummabilityBranch::Phi => phi.sqrt() / (n as f64).sqrt(),
            SummabilityBranch::AlphaQuantile => {
                let integral = match &pieces {
                    Some(pc) => quantile_integral(pc, alpha, setup.p),
                    None => {
                        // |Y| ~ U(0,1): Q(x) = 1 - x on [0,1].
                        let ex = setup.p / 2.0;
                        let a = alpha.clamp(0.0, 1.0);
                        a.powf(ex) / ex - a.powf(ex + 1.0) / (ex + 1.0)
                    }
                };
                integral.powf(1.0 / setup.p) / (n as f64).sqrt()
            }
        };
        acc += term;
        terms.push(term);
        partials.push(acc);
    }
    let moment_gate = match branch {
        SummabilityBranch::Phi => setup
            .mu_grid
            .weights
            .iter()
            .zip(&setup.f_on_grid)
            .map(|(&w, &fv)| w * (fv * (1.0 - fv)).powf(setup.p / 2.0))
            .sum(),
        SummabilityBranch::AlphaQuantile => setup.tail_moment_gate,
    };
    // Certify geometric decay over the last five positive ratios.
    let certified = terms.len() >= 6 && {
        let last = &terms[terms.len() - 6..];
        if last.iter().all(|&t| t > 0.0) {
            let ratios: Vec<f64> = last.windows(2).map(|w| w[1] / w[0]).collect();
            let rmax = ratios.iter().copied().fold(0.0, f64::max);
            let rmin = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            rmax < 0.999 && (rmax - rmin) <= 0.1 * rmax
        } else {
            last.iter().all(|&t| t == 0.0)
        }
    } || terms.iter().skip(1).all(|&t| t == 0.0);
    Ok(TheomixReport {
        branch,
        terms,
        partials,
        moment_gate,
        summability_certified: certified,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EmpiricalLimitResult {
    pub name: String,
    pub seed: u64,
    pub streams: (u64, u64),
    pub n: usize,
    pub paths: usize,
    /// Mean and standard deviation of `sqrt(n) D_(n,p)` over paths.
    pub mean_sqrt_n_distance: f64,
    pub sd_sqrt_n_distance: f64,
    /// `sqrt(n) D_(n,p)` per stream, in stream order.
    pub distances: Vec<f64>,
    /// `(gamma_mc, sigma_exact)` for each dual test function checked.
    pub gamma_checks: Vec<(f64, f64)>,
    /// `(n, running max of sqrt(n) D / sqrt(2 L(L(n))))` trajectory of one
    /// long path (present when a LIL horizon was requested).
    pub lil_trajectory: Vec<(u64, f64)>,
    /// Final trajectory value: the Monte Carlo estimate of the limsup.
    pub lambda_estimate: Option<f64>,
}

/// Distribution of `sqrt(n) D_(n,p)` over seeded paths, with exact-variance
/// checks of the dual projections and an optional normalized trajectory of
/// one long path.
pub fn empirical_limit_experiment(
    setup: &EmpiricalSetup,
    n: usize,
    paths: usize,
    seed: u64,
    lil_horizon: u64,
) -> Result<EmpiricalLimitResult> {
    let sqrt_n = (n as f64).sqrt();
    let distances: Vec<f64> = (0..paths as u64)
        .into_par_iter()
        .map(|stream| {
            let sample = draw_sample(setup, n, seed, stream);
            sqrt_n
                * empirical_cdf_distance(&sample, &setup.f_on_grid, &setup.mu_grid, setup.p)
        })
        .collect();
    let mean_d = mean(&distances);
    let sd_d = variance(&distances).sqrt();

    // Dual test functions: exact sigma of the projected scalar functional
    // vs the Monte Carlo L2 norm of the projected sums.
    let q = if setup.p <= 1.0 {
        f64::INFINITY
    } else {
        setup.p / (setup.p - 1.0)
    };
    let net = dual_net(&setup.mu_grid, q, 3, seed);
    let mut gamma_checks = Vec::new();
    for u in &net {
        let sigma_exact = match &setup.driver {
            Driver::Markov { model, .. } => {
                let obs = setup.grid_observable()?;
                let proj = crate::limits::project_observable(&obs, u)?;
                match asymptotic_covariance(model, &center_observable(model, &proj))? {
                    CovarianceOperator::Scalar(v) => v.max(0.0).sqrt(),
                    _ => unreachable!(),
                }
            }
            _ => iid_projection_sigma(setup, u),
        };
        let second_moment: f64 = (0..paths as u64)
            .into_par_iter()
            .map(|stream| {
                let sample = draw_sample(setup, n, seed, stream);
                let counts = counts_on_grid(&sample, &setup.mu_grid);
                let z: f64 = setup
                    .mu_grid
                    .weights
                    .iter()
                    .zip(u)
                    .zip(counts.iter().zip(&setup.f_on_grid))
                    .map(|((&w, &ui), (&c, &fv))| {
                        w * ui * (c as f64 - n as f64 * fv)
                    })
                    .sum();
                (z / sqrt_n).powi(2)
            })
            .sum::<f64>()
            / paths as f64;
        gamma_checks.push((second_moment.sqrt(), sigma_exact));
    }

    let mut lil_trajectory = Vec::new();
    if lil_horizon > 0 {
        // One long path: running max of |S_n|_(p,mu) / sqrt(2 n L(L(n)))
        // where S_n(t) = n (Fhat_n(t) - F(t)) accumulated incrementally.
        let k = setup.mu_grid.len();
        let mut s = vec![0.0f64; k];
        let mut running = 0.0f64;
        let mut next_cp = 16u64;
        let mut count = 0u64;
        let emit = |nn: u64, s: &[f64], running: &mut f64, out: &mut Vec<(u64, f64)>| {
            let norm = setup.mu_grid.p_norm(s, setup.p);
            let v = norm / lil_normalizer(nn as f64);
            *running = running.max(v);
            out.push((nn, *running));
        };
        let mut handle = |y: f64,
                          s: &mut Vec<f64>,
                          count: &mut u64,
                          running: &mut f64,
                          out: &mut Vec<(u64, f64)>| {
            *count += 1;
            for ((sv, &t), &fv) in s
                .iter_mut()
                .zip(&setup.mu_grid.points)
                .zip(&setup.f_on_grid)
            {
                *sv += if y <= t { 1.0 - fv } else { -fv };
            }
            if *count == next_cp || *count == lil_horizon {
                emit(*count, s, running, out);
                next_cp = next_cp.saturating_mul(2);
            }
        };
        match &setup.driver {
            Driver::Markov { model, ymap } => {
                for w in PathStream::new(model, seed, 0).take(lil_horizon as usize) {
                    handle(ymap[w as usize], &mut s, &mut count, &mut running, &mut lil_trajectory);
                }
            }
            _ => {
                let mut rng = CounterRng::new(seed, 0);
                for _ in 0..lil_horizon {
                    let y = iid_draw(&setup.driver, rng.next_f64());
                    handle(y, &mut s, &mut count, &mut running, &mut lil_trajectory);
                }
            }
        }
    }
    let lambda_estimate = lil_trajectory.last().map(|&(_, v)| v);
    Ok(EmpiricalLimitResult {
        name: "empirical limit".into(),
        seed,
        streams: (0, paths as u64 - 1),
        n,
        paths,
        mean_sqrt_n_distance: mean_d,
        sd_sqrt_n_distance: sd_d,
        distances,
        gamma_checks,
        lil_trajectory,
        lambda_estimate,
    })
}

fn iid_draw(driver: &Driver, u: f64) -> f64 {
    match driver {
        Driver::IidUniform01 => u,
        Driver::IidAtoms { values, probs } => {
            let mut acc = 0.0;
            for (v, p) in values.iter().zip(probs) {
                acc += p;
                if u < acc {
                    return *v;
                }
            }
            *values.last().unwrap()
        }
        Driver::Markov { .. } => unreachable!("markov drivers walk the chain"),
    }
}

fn draw_sample(setup: &EmpiricalSetup, n: usize, seed: u64, stream: u64) -> Vec<f64> {
    match &setup.driver {
        Driver::Markov { model, ymap } => PathStream::new(model, seed, stream)
            .take(n)
            .map(|w| ymap[w as usize])
            .collect(),
        driver => {
            let mut rng = CounterRng::new(seed, stream);
            (0..n).map(|_| iid_draw(driver, rng.next_f64())).collect()
        }
    }
}

/// Exact sigma of the scalar projection `sum_i w_i u_i (1_(Y<=t_i) - F_i)`
/// for an iid driver: independent summands, so sigma^2 is the plain
/// variance `sum_(i,j) w_i w_j u_i u_j (F_(min) - F_i F_j)`.
fn iid_projection_sigma(setup: &EmpiricalSetup, u: &[f64]) -> f64 {
    let k = setup.mu_grid.len();
    let mut var = 0.0;
    for i in 0..k {
        for j in 0..k {
            let fmin = setup.f_on_grid[i.min(j)];
            var += setup.mu_grid.weights[i]
                * setup.mu_grid.weights[j]
                * u[i]
                * u[j]
                * (fmin - setup.f_on_grid[i] * setup.f_on_grid[j]);
        }
    }
    var.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_driver() -> Driver {
        Driver::Markov {
            model: FiniteMarkovModel::two_state(0.3, 0.6).unwrap(),
            ymap: vec![0.0, 1.0],
        }
    }

    fn setup_two_state(p: f64, points: usize) -> EmpiricalSetup {
        EmpiricalSetup::new(
            two_state_driver(),
            Grid::lebesgue(-0.5, 1.5, points).unwrap(),
            MuKind::LebesgueGrid,
            p,
        )
        .unwrap()
    }

    #[test]
    fn distance_single_observation_closed_form() {
        // int_0^1 |1_(y<=t) - t| dt = ((1-y)^2 + y^2) / 2 for F = identity.
        let grid = Grid::lebesgue(0.0, 1.0, 4097).unwrap();
        let f_true: Vec<f64> = grid.points.clone();
        for y in [0.15, 0.5, 0.83] {
            let d = empirical_cdf_distance(&[y], &f_true, &grid, 1.0);
            let exact = ((1.0 - y).powi(2) + y * y) / 2.0;
            assert!((d - exact).abs() < 1e-3, "y={y}: {d} vs {exact}");
        }
    }

    #[test]
    fn distance_full_population_is_zero() {
        // Finite-support case: the sample containing each atom with its
        // exact multiplicity reproduces the true cdf.
        let grid = Grid::new(vec![-1.0, 0.0, 1.0, 2.0], vec![0.25; 4]).unwrap();
        let driver = Driver::IidAtoms {
            values: vec![0.0, 1.0],
            probs: vec![0.5, 0.5],
        };
        let f_true: Vec<f64> = grid.points.iter().map(|&t| driver.true_cdf(t)).collect();
        let d = empirical_cdf_distance(&[0.0, 1.0], &f_true, &grid, 1.0);
        assert!(d < 1e-15);
    }

    #[test]
    fn distance_matches_brute_force_summation() {
        // Oracle: naive per-point counting.
        let grid = Grid::new(vec![0.1, 0.3, 0.55, 0.7, 0.95], vec![0.2, 0.3, 0.1, 0.25, 0.15])
            .unwrap();
        let f_true = vec![0.1, 0.3, 0.55, 0.7, 0.95];
        let mut rng = CounterRng::new(5, 5);
        let sample: Vec<f64> = (0..257).map(|_| rng.next_f64()).collect();
        for p in [1.0, 1.5, 2.0, 3.0] {
            let fast = empirical_cdf_distance(&sample, &f_true, &grid, p);
            let brute = {
                let n = sample.len() as f64;
                grid.points
                    .iter()
                    .zip(&grid.weights)
                    .zip(&f_true)
                    .map(|((&t, &w), &fv)| {
                        let c = sample.iter().filter(|&&y| y <= t).count() as f64;
                        w * (c / n - fv).abs().powf(p)
                    })
                    .sum::<f64>()
                    .powf(1.0 / p)
            };
            assert!((fast - brute).abs() < 1e-14, "p={p}");
        }
    }

    #[test]
    fn distance_weight_homogeneity() {
        // Scaling weights by c scales D by c^(1/p).
        let grid = Grid::new(vec![0.0, 0.5, 1.0], vec![0.3, 0.4, 0.3]).unwrap();
        let scaled = Grid::new(
            grid.points.clone(),
            grid.weights.iter().map(|w| w * 3.7).collect(),
        )
        .unwrap();
        let f_true = vec![0.2, 0.6, 0.9];
        let sample = vec![0.1, 0.4, 0.6, 0.9];
        for p in [1.0, 2.0, 2.5] {
            let d1 = empirical_cdf_distance(&sample, &f_true, &grid, p);
            let d2 = empirical_cdf_distance(&sample, &f_true, &scaled, p);
            assert!((d2 - 3.7f64.powf(1.0 / p) * d1).abs() < 1e-13, "p={p}");
        }
    }

    #[test]
    fn mixing_iid_zero_beyond_lag_zero() {
        let driver = Driver::IidAtoms {
            values: vec![0.0, 1.0],
            probs: vec![0.4, 0.6],
        };
        let rows = mixing_coefficients(&driver, 5).unwrap();
        assert!(rows[0].1 > 0.0 && rows[0].1 <= 1.0);
        for (_, phi, alpha) in &rows[1..] {
            assert_eq!(*phi, 0.0);
            assert_eq!(*alpha, 0.0);
        }
    }

    #[test]
    fn mixing_two_state_spectral_decay() {
        let rows = mixing_coefficients(&two_state_driver(), 16).unwrap();
        for (n, phi, alpha) in &rows {
            if *n == 0 {
                assert!(*phi <= 1.0);
                continue;
            }
            let expect_phi = (2.0 / 3.0) * 0.1f64.powi(*n as i32);
            let expect_alpha = (4.0 / 9.0) * 0.1f64.powi(*n as i32);
            assert!((phi - expect_phi).abs() < 1e-10, "n={n}: {phi}");
            assert!((alpha - expect_alpha).abs() < 1e-10, "n={n}: {alpha}");
            assert!(alpha <= phi);
        }
    }

    #[test]
    fn tau_branches_agree_at_p_two() {
        let a = setup_two_state(2.0, 16);
        let mut b = setup_two_state(2.0, 16);
        b.p = 2.0 - 1e-15;
        for n in 0..6 {
            let ta = tau_check(&a, n).unwrap();
            let tb = tau_check(&b, n).unwrap();
            assert!((ta - tb).abs() < 1e-12, "n={n}: {ta} vs {tb}");
        }
    }

    #[test]
    fn tau_two_state_geometric_ratio() {
        let setup = setup_two_state(1.0, 32);
        let mut prev = tau_check(&setup, 4).unwrap();
        for n in 5..12 {
            let cur = tau_check(&setup, n).unwrap();
            let ratio = cur / prev;
            assert!((ratio - 0.1).abs() < 0.05 * 0.1, "n={n}: ratio {ratio}");
            prev = cur;
        }
    }

    #[test]
    fn coefficient_table_slacks_nonnegative() {
        for p in [1.0, 1.5, 2.0] {
            let setup = setup_two_state(p, 64);
            let table = coefficient_table(&setup, 64).unwrap();
            assert!(
                table.min_slack() >= -1e-10,
                "p={p}: min slack {}",
                table.min_slack()
            );
        }
        // p > 2: only the lemma-63 bounds are evaluated.
        let setup = setup_two_state(3.0, 32);
        let table = coefficient_table(&setup, 16).unwrap();
        assert!(table.rows.iter().all(|r| r.lemma64_phi_slack.is_none()));
        assert!(table.min_slack() >= -1e-10);
    }

    #[test]
    fn coefficient_table_iid_slacks_equal_bounds() {
        let driver = Driver::IidAtoms {
            values: vec![0.0, 1.0],
            probs: vec![0.5, 0.5],
        };
        let setup = EmpiricalSetup::new(
            driver,
            Grid::lebesgue(-0.5, 1.5, 32).unwrap(),
            MuKind::LebesgueGrid,
            1.0,
        )
        .unwrap();
        let table = coefficient_table(&setup, 8).unwrap();
        for r in &table.rows[1..] {
            // Coefficients are zero, so each slack equals its bound >= 0.
            assert_eq!(r.tau_check, 0.0);
            assert!(r.lemma63_phi_slack >= 0.0);
            assert!(r.lemma64_alpha_slack.unwrap() >= 0.0);
        }
    }

    #[test]
    fn quantile_two_atoms_closed_form() {
        // |Y| atoms {1, 3} with probs {0.6, 0.4}: Q = 3 on [0, 0.4),
        // Q = 1 on [0.4, 1).
        let pieces = quantile_pieces(&[(1.0, 0.6), (3.0, 0.4)]);
        // p = 1: int_0^a x^(-1/2) Q dx.
        let hand = |a: f64| -> f64 {
            if a <= 0.4 {
                3.0 * 2.0 * a.sqrt()
            } else {
                3.0 * 2.0 * 0.4f64.sqrt() + 2.0 * (a.min(1.0).sqrt() - 0.4f64.sqrt())
            }
        };
        for a in [0.1, 0.4, 0.7, 1.0] {
            let got = quantile_integral(&pieces, a, 1.0);
            assert!((got - hand(a)).abs() < 1e-12, "a={a}: {got} vs {}", hand(a));
        }
    }

    #[test]
    fn theomix_iid_terminates() {
        let driver = Driver::IidAtoms {
            values: vec![-1.0, 2.0],
            probs: vec![0.5, 0.5],
        };
        let setup = EmpiricalSetup::new(
            driver,
            Grid::lebesgue(-2.0, 3.0, 32).unwrap(),
            MuKind::LebesgueGrid,
            1.0,
        )
        .unwrap();
        let rep = theomix_series(&setup, SummabilityBranch::AlphaQuantile, 16).unwrap();
        assert!(rep.terms.iter().all(|&t| t == 0.0));
        assert!(rep.summability_certified);
    }

    #[test]
    fn theomix_two_state_positive_verdict() {
        let setup = setup_two_state(1.0, 64);
        let phi = theomix_series(&setup, SummabilityBranch::Phi, 24).unwrap();
        assert!(phi.summability_certified, "phi branch should certify");
        let alpha = theomix_series(&setup, SummabilityBranch::AlphaQuantile, 24).unwrap();
        assert!(alpha.summability_certified, "alpha branch should certify");
        // Non-Lebesgue mu rejected for the quantile branch.
        let mut finite = setup_two_state(1.0, 16);
        finite.mu_kind = MuKind::FiniteGrid;
        assert!(theomix_series(&finite, SummabilityBranch::AlphaQuantile, 8).is_err());
    }

    #[test]
    fn empirical_limit_constant_y_collapses() {
        let driver = Driver::IidAtoms {
            values: vec![0.5],
            probs: vec![1.0],
        };
        let setup = EmpiricalSetup::new(
            driver,
            Grid::lebesgue(0.0, 1.0, 16).unwrap(),
            MuKind::LebesgueGrid,
            1.0,
        )
        .unwrap();
        let res = empirical_limit_experiment(&setup, 256, 50, 3, 0).unwrap();
        assert!(res.mean_sqrt_n_distance < 1e-12);
    }

    #[test]
    fn empirical_gamma_matches_exact_sigma() {
        let setup = setup_two_state(1.0, 24);
        let res = empirical_limit_experiment(&setup, 2048, 800, 11, 0).unwrap();
        for (mc, exact) in &res.gamma_checks {
            assert!(
                (mc - exact).abs() <= 0.1 * exact.max(1e-12),
                "gamma {mc} vs sigma {exact}"
            );
        }
    }

    #[test]
    fn empirical_limit_reproducible() {
        let setup = setup_two_state(1.0, 16);
        let a = empirical_limit_experiment(&setup, 128, 60, 21, 1024).unwrap();
        let b = empirical_limit_experiment(&setup, 128, 60, 21, 1024).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn moment_gates_reported() {
        let setup = setup_two_state(1.0, 32);
        assert!(setup.tail_moment_gate.is_finite());
        assert!(setup.fmu_moment_gate.unwrap().is_finite());
        let grid_obs = setup.grid_observable().unwrap();
        assert!(grid_obs.centered);
    }
}
