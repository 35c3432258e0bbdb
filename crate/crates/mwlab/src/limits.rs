//! Seeded Monte Carlo experiments for the limit theorems: central limit
//! behavior of normalized sums, finite-dimensional invariance-principle
//! distributions, the law of the iterated logarithm, the heavy-tail
//! counterexample regime, and a compactness diagnostic for grid-valued
//! normalized sums.
//!
//! Every random quantity is traceable to `(seed, stream)`; rerunning an
//! experiment with the same configuration reproduces identical numbers.

use crate::conditions::mw2_norm;
use crate::error::{Error, Result};
use crate::martingale::{asymptotic_covariance, martingale_difference, CovarianceOperator};
use crate::models::{
    build_renewal_chain, simulate_path, FiniteMarkovModel, Observable, PathStream, RenewalSpec,
};
use crate::stats::{
    correlation, ks_statistic, lil_normalizer, normal_cdf, slow_log, variance,
};
use rayon::prelude::*;
use serde::Serialize;

/// A named check with its numeric value, threshold, Monte Carlo band, and
/// outcome. Assertions compare against `threshold` plus/minus `band`, never
/// the raw threshold.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Verdict {
    pub check: String,
    pub value: f64,
    pub threshold: f64,
    pub band: f64,
    pub pass: bool,
}

/// Seeded net of dual directions with unit `q`-norm against the grid
/// measure, used to scan a supremum over the dual ball. Contains the
/// constant direction, coordinate bumps, and seeded random directions.
pub fn dual_net(grid: &crate::models::Grid, q: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let k = grid.len();
    let normalize = |mut u: Vec<f64>| -> Option<Vec<f64>> {
        let norm = if q.is_infinite() {
            u.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
        } else {
            grid.p_norm(&u, q)
        };
        if norm <= 0.0 {
            return None;
        }
        for v in &mut u {
            *v /= norm;
        }
        Some(u)
    };
    let mut net = Vec::new();
    if let Some(u) = normalize(vec![1.0; k]) {
        net.push(u);
    }
    let bumps = count.min(8).max(1);
    for b in 0..bumps {
        let i = b * (k - 1) / bumps.max(1);
        let mut u = vec![0.0; k];
        u[i] = 1.0;
        if let Some(u) = normalize(u) {
            net.push(u);
        }
    }
    let mut rng = crate::rng::CounterRng::new(seed, u64::MAX);
    while net.len() < count {
        let u: Vec<f64> = (0..k).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        if let Some(u) = normalize(u) {
            net.push(u);
        }
    }
    net
}

/// Scalar observable `w -> sum_i w_i u_i f_i(w)` obtained by pairing a grid
/// observable with a dual direction.
pub fn project_observable(f: &Observable, direction: &[f64]) -> Result<Observable> {
    let grid = f.grid_ref().ok_or(Error::ScalarObservableRejected)?;
    let cols = f.components();
    let m = f.state_count();
    let values: Vec<f64> = (0..m)
        .map(|w| {
            cols.iter()
                .zip(direction)
                .zip(&grid.weights)
                .map(|((c, u), wt)| wt * u * c[w])
                .sum()
        })
        .collect();
    let mut out = Observable::scalar(values);
    out.centered = f.centered;
    Ok(out)
}

fn exact_scalar_sigma2(model: &FiniteMarkovModel, f: &Observable) -> Result<f64> {
    match asymptotic_covariance(model, f)? {
        CovarianceOperator::Scalar(v) => Ok(v),
        _ => unreachable!("scalar observable produces scalar covariance"),
    }
}

/// Normalized end-sums `S_n / sqrt(n)` for `paths` independent streams.
fn normalized_sums(
    model: &FiniteMarkovModel,
    f: &Observable,
    n: usize,
    paths: usize,
    seed: u64,
    use_difference: bool,
) -> Result<Vec<f64>> {
    let fv = f.as_scalar()?.to_vec();
    let md = if use_difference {
        Some(martingale_difference(model, f)?)
    } else {
        None
    };
    let sqrt_n = (n as f64).sqrt();
    Ok((0..paths as u64)
        .into_par_iter()
        .map(|stream| {
            let path = simulate_path(model, -1, n as i64 - 1, seed, stream).unwrap();
            let mut acc = 0.0;
            match &md {
                None => {
                    for t in 0..n as i64 {
                        acc += fv[path.state_at(t) as usize];
                    }
                }
                Some(md) => {
                    for t in 0..n as i64 {
                        acc += md.value_scalar(
                            path.state_at(t - 1) as usize,
                            path.state_at(t) as usize,
                        );
                    }
                }
            }
            acc / sqrt_n
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CltResult {
    pub name: String,
    pub seed: u64,
    pub streams: (u64, u64),
    pub n: usize,
    pub paths: usize,
    pub sigma2: f64,
    /// KS statistic of `S_n / sqrt(n)` against `Normal(0, sigma2)`; for grid
    /// observables the worst KS over the dual-direction net.
    pub ks_statistic: f64,
    /// Per-direction `(sigma2_u, ks_u)` rows (grid observables only).
    pub directions: Vec<(f64, f64)>,
    /// Max absolute deviation between the empirical and exact covariance on
    /// subsampled grid indices (grid observables only).
    pub covariance_deviation: Option<f64>,
    pub samples: Vec<f64>,
    pub verdicts: Vec<Verdict>,
}

/// Simulate `paths` stationary paths of length `n` and compare the law of
/// `S_n / sqrt(n)` with the exact-variance normal limit.
pub fn clt_experiment(
    model: &FiniteMarkovModel,
    f: &Observable,
    n: usize,
    paths: usize,
    seed: u64,
) -> Result<CltResult> {
    clt_core(model, f, n, paths, seed, false)
}

/// Same experiment run on the martingale difference `d` instead of `f`;
/// the two empirical laws merge as `n` grows because the exact coboundary
/// error is `o(sqrt(n))`.
pub fn clt_experiment_on_difference(
    model: &FiniteMarkovModel,
    f: &Observable,
    n: usize,
    paths: usize,
    seed: u64,
) -> Result<CltResult> {
    clt_core(model, f, n, paths, seed, true)
}

fn clt_core(
    model: &FiniteMarkovModel,
    f: &Observable,
    n: usize,
    paths: usize,
    seed: u64,
    use_difference: bool,
) -> Result<CltResult> {
    if !f.is_scalar() {
        return clt_grid(model, f, n, paths, seed);
    }
    let sigma2 = exact_scalar_sigma2(model, f)?;
    if sigma2 <= 1e-14 {
        return Err(Error::DegenerateVariance {
            context: "clt_experiment: normalized sums collapse",
        });
    }
    let samples = normalized_sums(model, f, n, paths, seed, use_difference)?;
    let ks = ks_statistic(&samples, normal_cdf(sigma2.sqrt()));
    Ok(CltResult {
        name: if use_difference {
            "clt(martingale difference)".into()
        } else {
            "clt".into()
        },
        seed,
        streams: (0, paths as u64 - 1),
        n,
        paths,
        sigma2,
        ks_statistic: ks,
        directions: Vec::new(),
        covariance_deviation: None,
        samples,
        verdicts: Vec::new(),
    })
}

fn clt_grid(
    model: &FiniteMarkovModel,
    f: &Observable,
    n: usize,
    paths: usize,
    seed: u64,
) -> Result<CltResult> {
    let grid = f.grid_ref().unwrap().clone();
    let q = if f.p <= 1.0 {
        f64::INFINITY
    } else {
        f.p / (f.p - 1.0)
    };
    let net = dual_net(&grid, q, 8, seed);
    let cols = f.components();
    let dim = cols.len();
    let sqrt_n = (n as f64).sqrt();
    let picks = dim.min(6).max(1);
    let idx: Vec<usize> = (0..picks).map(|j| j * (dim - 1) / picks).collect();

    let sums: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|stream| {
            let path = simulate_path(model, 0, n as i64 - 1, seed, stream).unwrap();
            let mut acc = vec![0.0; dim];
            for t in 0..n as i64 {
                let w = path.state_at(t) as usize;
                for (a, c) in acc.iter_mut().zip(&cols) {
                    *a += c[w];
                }
            }
            acc.iter_mut().for_each(|a| *a /= sqrt_n);
            acc
        })
        .collect();

    let mut directions = Vec::new();
    let mut worst_ks = 0.0f64;
    for u in &net {
        let proj = project_observable(f, u)?;
        let sigma2_u = exact_scalar_sigma2(model, &proj)?;
        if sigma2_u <= 1e-14 {
            continue;
        }
        let samples: Vec<f64> = sums
            .iter()
            .map(|s| {
                s.iter()
                    .zip(u)
                    .zip(&grid.weights)
                    .map(|((v, ui), wi)| wi * ui * v)
                    .sum()
            })
            .collect();
        let ks = ks_statistic(&samples, normal_cdf(sigma2_u.sqrt()));
        worst_ks = worst_ks.max(ks);
        directions.push((sigma2_u, ks));
    }
    if directions.is_empty() {
        return Err(Error::DegenerateVariance {
            context: "clt_experiment: every dual direction is degenerate",
        });
    }

    let k_exact = match asymptotic_covariance(model, f)? {
        CovarianceOperator::Matrix(k) => k,
        _ => unreachable!(),
    };
    let mut dev = 0.0f64;
    for &i in &idx {
        for &j in &idx {
            let xi: Vec<f64> = sums.iter().map(|s| s[i]).collect();
            let xj: Vec<f64> = sums.iter().map(|s| s[j]).collect();
            dev = dev.max((crate::stats::covariance(&xi, &xj) - k_exact[(i, j)]).abs());
        }
    }

    let sigma2 = directions.iter().map(|d| d.0).fold(0.0, f64::max);
    Ok(CltResult {
        name: "clt(grid)".into(),
        seed,
        streams: (0, paths as u64 - 1),
        n,
        paths,
        sigma2,
        ks_statistic: worst_ks,
        directions,
        covariance_deviation: Some(dev),
        samples: Vec::new(),
        verdicts: Vec::new(),
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FddResult {
    pub name: String,
    pub seed: u64,
    pub streams: (u64, u64),
    pub n: usize,
    pub paths: usize,
    pub times: Vec<f64>,
    pub sigma2: f64,
    /// Per-increment `(t_lo, t_hi, ks, variance_ratio)` where the ratio is
    /// the empirical increment variance over `(t_hi - t_lo) sigma2`.
    pub increments: Vec<(f64, f64, f64, f64)>,
    /// Largest absolute off-diagonal correlation between increments.
    pub max_cross_correlation: f64,
    pub verdicts: Vec<Verdict>,
}

/// Polygonal finite-dimensional distributions: increments of
/// `T_(n,t) = S_(n,t)/sqrt(n)` over consecutive times are asymptotically
/// independent normals with variances proportional to the time increments.
pub fn fdd_experiment(
    model: &FiniteMarkovModel,
    f: &Observable,
    times: &[f64],
    n: usize,
    paths: usize,
    seed: u64,
) -> Result<FddResult> {
    if times.len() < 2
        || times.windows(2).any(|w| w[0] >= w[1])
        || times.first().copied().unwrap_or(-1.0) < 0.0
        || times.last().copied().unwrap_or(2.0) > 1.0
    {
        return Err(Error::InvalidParameter {
            name: "times",
            reason: "must be strictly increasing within [0, 1]".into(),
        });
    }
    let fv = f.as_scalar()?.to_vec();
    let sigma2 = exact_scalar_sigma2(model, f)?;
    if sigma2 <= 1e-14 {
        return Err(Error::DegenerateVariance {
            context: "fdd_experiment",
        });
    }
    let sqrt_n = (n as f64).sqrt();
    let times_owned = times.to_vec();
    let inc_count = times.len() - 1;
    let rows: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|stream| {
            let path = simulate_path(model, 0, n as i64, seed, stream).unwrap();
            // Polygonal S_(n,t) at each requested time.
            let at_times: Vec<f64> = times_owned
                .iter()
                .map(|&tt| {
                    let nt = tt * n as f64;
                    let k = nt.floor() as usize;
                    let frac = nt - k as f64;
                    let mut acc = 0.0;
                    for t in 0..k {
                        acc += fv[path.state_at(t as i64) as usize];
                    }
                    if frac > 0.0 {
                        acc += frac * fv[path.state_at(k as i64) as usize];
                    }
                    acc / sqrt_n
                })
                .collect();
            (0..inc_count)
                .map(|i| at_times[i + 1] - at_times[i])
                .collect()
        })
        .collect();

    let mut increments = Vec::new();
    for i in 0..inc_count {
        let xs: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        let dt = times[i + 1] - times[i];
        let ks = ks_statistic(&xs, normal_cdf((dt * sigma2).sqrt()));
        let ratio = variance(&xs) / (dt * sigma2);
        increments.push((times[i], times[i + 1], ks, ratio));
    }
    let mut max_corr = 0.0f64;
    for i in 0..inc_count {
        for j in i + 1..inc_count {
            let xi: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            let xj: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            max_corr = max_corr.max(correlation(&xi, &xj).abs());
        }
    }
    Ok(FddResult {
        name: "fdd".into(),
        seed,
        streams: (0, paths as u64 - 1),
        n,
        paths,
        times: times.to_vec(),
        sigma2,
        increments,
        max_cross_correlation: max_corr,
        verdicts: Vec::new(),
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LilCheckpoint {
    pub n: u64,
    /// Running max of `|S_k| / sqrt(2 k L(L(k)))` up to `n`.
    pub running_max: f64,
    /// Running max of `|S_k| / sqrt(k L(L(k)))`: the alternative single-`n`
    /// normalization, reported alongside but not asserted against sigma.
    pub running_max_single: f64,
    /// `10 sqrt(2) * MW2` upper bound for the doubled normalization.
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LilResult {
    pub name: String,
    pub seed: u64,
    pub stream: u64,
    pub horizon: u64,
    /// Exact limit target: scalar sigma, or the sup over the dual net for
    /// grid observables (with the net granularity recorded).
    pub sigma: f64,
    pub net_size: usize,
    pub mw2_total: f64,
    pub checkpoints: Vec<LilCheckpoint>,
    pub final_running_max: f64,
    /// Set when the horizon is too short for the normalizer to mean much.
    pub short_horizon_warning: bool,
    pub verdicts: Vec<Verdict>,
}

/// Single long stationary path; the running maximum of the normalized sums
/// is recorded at geometric checkpoints and checked against the
/// `10 sqrt(2) MW2` bound. The doubled normalization `sqrt(2 n L(L(n)))` is
/// the primary scale (its almost-sure limit is `sigma`); the single-`n`
/// scale is reported alongside.
pub fn lil_experiment(
    model: &FiniteMarkovModel,
    f: &Observable,
    horizon: u64,
    seed: u64,
    mw2_depth: usize,
) -> Result<LilResult> {
    let mut net_size = 0usize;
    let sigma = if f.is_scalar() {
        exact_scalar_sigma2(model, f)?.sqrt()
    } else {
        let grid = f.grid_ref().unwrap();
        let q = if f.p <= 1.0 {
            f64::INFINITY
        } else {
            f.p / (f.p - 1.0)
        };
        let net = dual_net(grid, q, 16, seed);
        net_size = net.len();
        net.iter()
            .map(|u| {
                let proj = project_observable(f, u)?;
                Ok(exact_scalar_sigma2(model, &proj)?.sqrt())
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max)
    };
    if sigma <= 1e-7 {
        return Err(Error::DegenerateVariance {
            context: "lil_experiment",
        });
    }
    let mw2 = mw2_norm(model, f, mw2_depth)?;
    let bound = 10.0 * std::f64::consts::SQRT_2 * mw2.total();

    let dim = f.dim();
    let frows: Vec<Vec<f64>> = (0..model.state_count()).map(|w| f.row(w)).collect();
    let scalar_vals: Option<Vec<f64>> = if dim == 1 {
        Some(frows.iter().map(|r| r[0]).collect())
    } else {
        None
    };
    let mut acc = vec![0.0; dim];
    let mut acc_scalar = 0.0f64;
    let mut running = 0.0f64;
    let mut running_single = 0.0f64;
    let mut checkpoints = Vec::new();
    let mut next_checkpoint = 1u64;
    let mut n = 0u64;
    for w in PathStream::new(model, seed, 0).take(horizon as usize) {
        n += 1;
        let norm = match &scalar_vals {
            Some(vals) => {
                acc_scalar += vals[w as usize];
                acc_scalar.abs()
            }
            None => {
                for (a, b) in acc.iter_mut().zip(&frows[w as usize]) {
                    *a += b;
                }
                f.x_norm(&acc)
            }
        };
        let nf = n as f64;
        let single = norm / (nf * slow_log(slow_log(nf))).sqrt();
        running_single = running_single.max(single);
        running = running.max(single / std::f64::consts::SQRT_2);
        if n == next_checkpoint || n == horizon {
            checkpoints.push(LilCheckpoint {
                n,
                running_max: running,
                running_max_single: running_single,
                bound,
            });
            next_checkpoint = next_checkpoint.saturating_mul(2);
        }
    }
    let verdicts = checkpoints
        .iter()
        .map(|c| Verdict {
            check: format!("running max at n={} within 10*sqrt(2)*MW2", c.n),
            value: c.running_max,
            threshold: bound,
            band: 0.0,
            pass: c.running_max <= bound,
        })
        .collect();
    Ok(LilResult {
        name: "lil".into(),
        seed,
        stream: 0,
        horizon,
        sigma,
        net_size,
        mw2_total: mw2.total(),
        checkpoints,
        final_running_max: running,
        short_horizon_warning: horizon < 100_000,
        verdicts,
    })
}

/// Weight rule for the weighted condition series of the counterexample
/// experiment; every rule tends to zero except the unweighted contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum WeightRule {
    /// `a_n = 1` (unweighted, for contrast).
    Unit,
    /// `a_n = 1 / L(n)`.
    InverseLog,
    /// `a_n = n^(-gamma)`.
    InversePower(f64),
}

impl WeightRule {
    pub fn weight(&self, n: u64) -> f64 {
        match self {
            WeightRule::Unit => 1.0,
            WeightRule::InverseLog => 1.0 / slow_log(n as f64),
            WeightRule::InversePower(g) => (n as f64).powf(-g),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CounterexampleResult {
    pub name: String,
    pub seed: u64,
    pub tail_exponent: f64,
    pub truncation: usize,
    /// Partial sums of `sum a_n |E_0(S_n)|_2 / n^(3/2)`.
    pub weighted_partials: Vec<f64>,
    /// The same series total across smaller truncations: `(N, total)` rows.
    pub truncation_sensitivity: Vec<(usize, f64)>,
    /// Second moment of the truncated return law per truncation; its
    /// logarithmic growth is the divergence diagnostic.
    pub second_moments: Vec<(usize, f64)>,
    pub second_moment_diverges: bool,
    /// Exact `(n, Var(S_n)/n)` rows at the requested checkpoints.
    pub variance_growth: Vec<(u64, f64)>,
    /// Per stream: `(n, max_(k<=n) |S_k| / sqrt(n L(L(n))))` at decades.
    pub trajectories: Vec<Vec<(u64, f64)>>,
    pub verdicts: Vec<Verdict>,
}

/// The heavy-tail renewal regime: the weighted condition series stays small
/// while the exact variance of the normalized sums keeps growing and the
/// empirical normalized maxima grow across decades.
pub fn counterexample_experiment(
    spec: &RenewalSpec,
    weights: WeightRule,
    series_max: usize,
    var_checkpoints: &[u64],
    traj_horizon: u64,
    traj_streams: u64,
    seed: u64,
) -> Result<CounterexampleResult> {
    if spec.tail_exponent <= 2.0 || spec.tail_exponent > 3.0 {
        return Err(Error::InvalidParameter {
            name: "tail_exponent",
            reason: format!(
                "{} outside (2, 3]: this experiment needs a finite mean with an \
                 infinite second moment of the return time",
                spec.tail_exponent
            ),
        });
    }
    let chain = build_renewal_chain(spec)?;
    let model = &chain.model;
    let f = crate::models::center_observable(
        model,
        &Observable::indicator(0, model.state_count()),
    );
    let fv = f.as_scalar()?.to_vec();

    let weighted_partials = weighted_series(model, &fv, weights, series_max);
    let mut truncation_sensitivity = vec![(spec.truncation, *weighted_partials.last().unwrap())];
    let mut second_moments = vec![(spec.truncation, chain.second_moment_return)];
    for div in [2usize, 4] {
        let n2 = spec.truncation / div;
        if n2 >= 8 {
            let sub = build_renewal_chain(&RenewalSpec {
                tail_exponent: spec.tail_exponent,
                truncation: n2,
            })?;
            let subf =
                crate::models::center_observable(&sub.model, &Observable::indicator(0, n2));
            let subp = weighted_series(&sub.model, subf.as_scalar()?, weights, series_max);
            truncation_sensitivity.push((n2, *subp.last().unwrap()));
            second_moments.push((n2, sub.second_moment_return));
        }
    }

    let max_n = var_checkpoints.iter().copied().max().unwrap_or(0);
    let variance_growth = exact_variance_growth(model, &fv, var_checkpoints, max_n);

    let trajectories: Vec<Vec<(u64, f64)>> = (0..traj_streams)
        .into_par_iter()
        .map(|stream| {
            let mut acc = 0.0f64;
            let mut running_abs_max = 0.0f64;
            let mut rows = Vec::new();
            let mut checkpoint = 100u64;
            let mut n = 0u64;
            for w in PathStream::new(model, seed, stream).take(traj_horizon as usize) {
                n += 1;
                acc += fv[w as usize];
                running_abs_max = running_abs_max.max(acc.abs());
                if n == checkpoint || n == traj_horizon {
                    let nf = n as f64;
                    rows.push((n, running_abs_max / (nf * slow_log(slow_log(nf))).sqrt()));
                    checkpoint = checkpoint.saturating_mul(10);
                }
            }
            rows
        })
        .collect();

    let mut verdicts = Vec::new();
    for w in variance_growth.windows(2) {
        verdicts.push(Verdict {
            check: format!("Var(S_n)/n grows from n={} to n={}", w[0].0, w[1].0),
            value: w[1].1 - w[0].1,
            threshold: 0.0,
            band: 0.0,
            pass: w[1].1 > w[0].1,
        });
    }
    // second_moments rows are ordered by decreasing truncation.
    let growing =
        second_moments.len() >= 2 && second_moments.windows(2).all(|w| w[0].1 > w[1].1);
    verdicts.push(Verdict {
        check: "E(tau^2) grows with the truncation (divergence diagnostic)".into(),
        value: second_moments.first().map(|s| s.1).unwrap_or(0.0),
        threshold: second_moments.last().map(|s| s.1).unwrap_or(0.0),
        band: 0.0,
        pass: growing,
    });

    Ok(CounterexampleResult {
        name: "counterexample".into(),
        seed,
        tail_exponent: spec.tail_exponent,
        truncation: spec.truncation,
        weighted_partials,
        truncation_sensitivity,
        second_moments,
        second_moment_diverges: chain.second_moment_diverges,
        variance_growth,
        trajectories,
        verdicts,
    })
}

fn weighted_series(
    model: &FiniteMarkovModel,
    fv: &[f64],
    weights: WeightRule,
    series_max: usize,
) -> Vec<f64> {
    let mut g = fv.to_vec();
    let mut pk = fv.to_vec();
    let mut partials = Vec::with_capacity(series_max);
    let mut acc = 0.0;
    for n in 1..=series_max as u64 {
        if n > 1 {
            pk = model.apply(&pk);
            for (a, b) in g.iter_mut().zip(&pk) {
                *a += b;
            }
        }
        let norm = model.pi_l2(&g);
        acc += weights.weight(n) * norm / (n as f64).powf(1.5);
        partials.push(acc);
    }
    partials
}

/// `Var(S_n)/n = pi(f^2) + 2 sum_(k<n) (1 - k/n) pi(f P^k f)`, evaluated at
/// each checkpoint from one sweep of autocovariance prefix sums.
pub fn exact_variance_growth(
    model: &FiniteMarkovModel,
    fv: &[f64],
    checkpoints: &[u64],
    max_n: u64,
) -> Vec<(u64, f64)> {
    let a0 = model.pi_dot(fv, fv);
    let mut pk = fv.to_vec();
    let mut prefix = vec![0.0f64]; // prefix[k] = sum_{j<=k} a_j
    let mut kprefix = vec![0.0f64]; // kprefix[k] = sum_{j<=k} j a_j
    for k in 1..max_n {
        pk = model.apply(&pk);
        let ak = model.pi_dot(fv, &pk);
        prefix.push(prefix.last().unwrap() + ak);
        kprefix.push(kprefix.last().unwrap() + k as f64 * ak);
    }
    checkpoints
        .iter()
        .map(|&n| {
            let idx = (n as usize - 1).min(prefix.len() - 1);
            let v = a0 + 2.0 * (prefix[idx] - kprefix[idx] / n as f64);
            (n, v)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ClilResult {
    pub name: String,
    pub seed: u64,
    pub horizon: u64,
    /// `(n, |S_n|_X / sqrt(2 n L(L(n))))` at geometric checkpoints.
    pub trajectory: Vec<(u64, f64)>,
    /// Max pairwise grid-norm distance among the trailing checkpoint
    /// vectors of the normalized sums.
    pub trailing_diameter: f64,
    /// Max excess of trailing normalized sums over the dual-net radius.
    pub max_excess_over_ball: f64,
    /// Radius: sup of exact per-direction sigma over the net.
    pub radius: f64,
    pub net_size: usize,
}

/// Compactness proxy for grid observables: the trajectory of normalized
/// sums in the grid norm, the diameter of its trailing tail, and its excess
/// over the ball whose radius is the sup of per-direction sigmas over a
/// dual net. Informational; no assertion is made here.
pub fn clil_diagnostic(
    model: &FiniteMarkovModel,
    f: &Observable,
    horizon: u64,
    seed: u64,
    net_size: usize,
) -> Result<ClilResult> {
    let grid = f.grid_ref().ok_or(Error::ScalarObservableRejected)?.clone();
    let q = if f.p <= 1.0 {
        f64::INFINITY
    } else {
        f.p / (f.p - 1.0)
    };
    let radius = dual_net(&grid, q, net_size, seed)
        .iter()
        .map(|u| {
            let proj = project_observable(f, u)?;
            Ok(exact_scalar_sigma2(model, &proj)?.sqrt())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let dim = f.dim();
    let frows: Vec<Vec<f64>> = (0..model.state_count()).map(|w| f.row(w)).collect();
    let mut acc = vec![0.0; dim];
    let mut trajectory = Vec::new();
    let mut trailing: Vec<Vec<f64>> = Vec::new();
    let mut next_checkpoint = 16u64;
    let mut n = 0u64;
    for w in PathStream::new(model, seed, 0).take(horizon as usize) {
        n += 1;
        for (a, b) in acc.iter_mut().zip(&frows[w as usize]) {
            *a += b;
        }
        if n == next_checkpoint || n == horizon {
            let z: Vec<f64> = acc.iter().map(|v| v / lil_normalizer(n as f64)).collect();
            trajectory.push((n, f.x_norm(&z)));
            trailing.push(z);
            if trailing.len() > 5 {
                trailing.remove(0);
            }
            next_checkpoint = next_checkpoint.saturating_mul(2);
        }
    }
    let mut diameter = 0.0f64;
    for i in 0..trailing.len() {
        for j in i + 1..trailing.len() {
            let diff: Vec<f64> = trailing[i]
                .iter()
                .zip(&trailing[j])
                .map(|(a, b)| a - b)
                .collect();
            diameter = diameter.max(f.x_norm(&diff));
        }
    }
    let max_excess = trailing
        .iter()
        .map(|z| (f.x_norm(z) - radius).max(0.0))
        .fold(0.0, f64::max);
    Ok(ClilResult {
        name: "clil".into(),
        seed,
        horizon,
        trajectory,
        trailing_diameter: diameter,
        max_excess_over_ball: max_excess,
        radius,
        net_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{center_observable, Grid};

    fn two_state() -> FiniteMarkovModel {
        FiniteMarkovModel::two_state(0.3, 0.6).unwrap()
    }

    fn centered_indicator(model: &FiniteMarkovModel) -> Observable {
        center_observable(model, &Observable::indicator(0, model.state_count()))
    }

    fn pm_one() -> (FiniteMarkovModel, Observable) {
        let model = FiniteMarkovModel::iid(&[0.5, 0.5]).unwrap();
        let f = center_observable(&model, &Observable::scalar(vec![1.0, -1.0]));
        (model, f)
    }

    #[test]
    fn clt_degenerate_for_zero_variance() {
        let model = two_state();
        let zero = Observable::scalar(vec![0.0, 0.0]);
        assert!(matches!(
            clt_experiment(&model, &zero, 64, 100, 1),
            Err(Error::DegenerateVariance { .. })
        ));
    }

    #[test]
    fn clt_iid_pm_one_ks_band() {
        let (model, f) = pm_one();
        let res = clt_experiment(&model, &f, 1 << 12, 2000, 7).unwrap();
        assert!((res.sigma2 - 1.0).abs() < 1e-12);
        assert!(res.ks_statistic < 0.04, "ks {}", res.ks_statistic);
    }

    #[test]
    fn clt_two_state_exact_sigma_band() {
        let model = two_state();
        let f = centered_indicator(&model);
        let res = clt_experiment(&model, &f, 1 << 12, 2000, 11).unwrap();
        assert!((res.sigma2 - 22.0 / 81.0).abs() < 1e-12);
        assert!(res.ks_statistic < 0.04, "ks {}", res.ks_statistic);
    }

    #[test]
    fn clt_difference_version_merges() {
        let model = two_state();
        let f = centered_indicator(&model);
        let on_f = clt_experiment(&model, &f, 1 << 12, 1500, 5).unwrap();
        let on_d = clt_experiment_on_difference(&model, &f, 1 << 12, 1500, 5).unwrap();
        // Same paths, same limit: the two empirical laws are close in KS.
        let merged = crate::stats::ks_statistic(&on_f.samples, |x| {
            on_d.samples.iter().filter(|&&v| v <= x).count() as f64 / on_d.samples.len() as f64
        });
        assert!(merged < 0.05, "two-sample ks {merged}");
    }

    #[test]
    fn clt_reproducible() {
        let model = two_state();
        let f = centered_indicator(&model);
        let a = clt_experiment(&model, &f, 256, 400, 99).unwrap();
        let b = clt_experiment(&model, &f, 256, 400, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clt_grid_directions_pass() {
        let model = two_state();
        let grid = Grid::new(vec![0.0, 0.5, 1.0], vec![0.3, 0.4, 0.3]).unwrap();
        let f = center_observable(
            &model,
            &Observable::grid(
                vec![vec![1.0, 0.4, -0.3], vec![-0.2, 0.8, 0.6]],
                grid,
                2.0,
            )
            .unwrap(),
        );
        let res = clt_experiment(&model, &f, 1 << 11, 1500, 13).unwrap();
        assert!(res.ks_statistic < 0.05, "worst ks {}", res.ks_statistic);
        assert!(res.covariance_deviation.unwrap() < 0.05);
    }

    #[test]
    fn fdd_times_validation_and_reduction() {
        let (model, f) = pm_one();
        assert!(fdd_experiment(&model, &f, &[0.5, 0.2], 64, 100, 1).is_err());
        // times {0, 1} reduces to the end-sum law.
        let res = fdd_experiment(&model, &f, &[0.0, 1.0], 1 << 10, 1000, 3).unwrap();
        assert_eq!(res.increments.len(), 1);
        assert!(res.increments[0].2 < 0.05);
    }

    #[test]
    fn fdd_iid_increments_uncorrelated() {
        let (model, f) = pm_one();
        let res = fdd_experiment(&model, &f, &[0.0, 0.5, 1.0], 1 << 12, 2000, 21).unwrap();
        assert!(
            res.max_cross_correlation < 3.0 / (2000f64).sqrt(),
            "corr {}",
            res.max_cross_correlation
        );
    }

    #[test]
    fn fdd_two_state_variances_proportional() {
        let model = two_state();
        let f = centered_indicator(&model);
        let res =
            fdd_experiment(&model, &f, &[0.0, 0.25, 0.5, 1.0], 1 << 12, 3000, 17).unwrap();
        for (lo, hi, _, ratio) in &res.increments {
            assert!(
                (ratio - 1.0).abs() < 0.05,
                "increment ({lo},{hi}): ratio {ratio}"
            );
        }
    }

    #[test]
    fn lil_zero_observable_degenerate() {
        let model = two_state();
        let zero = Observable::scalar(vec![0.0, 0.0]);
        assert!(matches!(
            lil_experiment(&model, &zero, 1000, 1, 10),
            Err(Error::DegenerateVariance { .. })
        ));
    }

    #[test]
    fn lil_running_max_monotone_and_bounded() {
        let model = two_state();
        let f = centered_indicator(&model);
        let res = lil_experiment(&model, &f, 1 << 20, 4, 30).unwrap();
        let mut prev = 0.0;
        for c in &res.checkpoints {
            assert!(c.running_max >= prev);
            prev = c.running_max;
            assert!(c.running_max <= c.bound, "bound violated at n={}", c.n);
            // The two normalizations differ by sqrt(2) per term.
            assert!(
                (c.running_max_single - std::f64::consts::SQRT_2 * c.running_max).abs()
                    < 1e-12
            );
        }
        assert!(res.verdicts.iter().all(|v| v.pass));
        assert!(!res.short_horizon_warning);
    }

    #[test]
    fn counterexample_gate_rejects_light_tails() {
        let spec = RenewalSpec {
            tail_exponent: 4.0,
            truncation: 64,
        };
        assert!(counterexample_experiment(
            &spec,
            WeightRule::InverseLog,
            64,
            &[100, 1000],
            10_000,
            2,
            1
        )
        .is_err());
    }

    #[test]
    fn counterexample_variance_growth_small() {
        let spec = RenewalSpec {
            tail_exponent: 3.0,
            truncation: 512,
        };
        let res = counterexample_experiment(
            &spec,
            WeightRule::InverseLog,
            256,
            &[100, 1000, 10_000],
            100_000,
            3,
            9,
        )
        .unwrap();
        assert!(res.second_moment_diverges);
        for w in res.variance_growth.windows(2) {
            assert!(w[1].1 > w[0].1, "variance growth violated: {w:?}");
        }
        // Second moments grow with truncation (log divergence diagnostic).
        let m: std::collections::BTreeMap<usize, f64> =
            res.second_moments.iter().copied().collect();
        let vals: Vec<f64> = m.values().copied().collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn variance_growth_matches_direct_formula() {
        // Oracle: Var(S_n)/n assembled from explicitly computed
        // autocovariances with the Cesaro weights, small n.
        let model = two_state();
        let f = centered_indicator(&model);
        let fv = f.as_scalar().unwrap();
        let rows = exact_variance_growth(&model, fv, &[1, 2, 5, 10], 10);
        for &(n, v) in &rows {
            let mut direct = model.pi_dot(fv, fv);
            let mut pk = fv.to_vec();
            for k in 1..n {
                pk = model.apply(&pk);
                direct += 2.0 * (1.0 - k as f64 / n as f64) * model.pi_dot(fv, &pk);
            }
            assert!((v - direct).abs() < 1e-12, "n={n}: {v} vs {direct}");
        }
        // And the large-n value approaches the martingale sigma^2.
        let sigma2 = exact_scalar_sigma2(&model, &f).unwrap();
        let far = exact_variance_growth(&model, fv, &[4000], 4000);
        assert!((far[0].1 - sigma2).abs() < 1e-3);
    }

    #[test]
    fn clil_iid_grid_stays_near_ball() {
        let model = FiniteMarkovModel::iid(&[0.5, 0.5]).unwrap();
        let grid = Grid::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let f = center_observable(
            &model,
            &Observable::grid(vec![vec![1.0, 0.4], vec![-1.0, -0.4]], grid, 2.0).unwrap(),
        );
        let res = clil_diagnostic(&model, &f, 1 << 18, 5, 8).unwrap();
        assert!(res.radius > 0.0);
        assert!(
            res.max_excess_over_ball <= 0.5 * res.radius,
            "excess {} radius {}",
            res.max_excess_over_ball,
            res.radius
        );
        assert!(res.trailing_diameter.is_finite());
        // Scalar observables are rejected.
        let s = centered_indicator(&model);
        assert!(matches!(
            clil_diagnostic(&model, &s, 1024, 1, 4),
            Err(Error::ScalarObservableRejected)
        ));
    }
}
