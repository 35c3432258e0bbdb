//! Dyadic maximal decomposition with exact conditional expectations, the
//! maximal functions `M1`/`M2`, and Doob/Hopf inequality checks.
//!
//! The conditional expectation of a forward block sum through the state at
//! its left edge is `E_(-m)(S_m) o theta^t = (P^m g_m)(W_(t-m))` with
//! `g_m = sum_{j<m} P^j f`: conditioning on the sigma-field at time `t - m`
//! collapses to the state there by the Markov property, each summand
//! `f(W_(t+j))` conditions to `(P^(m+j) f)`, and the block adds up to
//! `P^m g_m`. The component series below evaluate that state function along
//! a concrete path, so the decomposition inequality is checked pathwise with
//! hard tolerances rather than statistically.

use crate::conditions::PowerCache;
use crate::error::{Error, Result};
use crate::martingale::martingale_difference;
use crate::models::{simulate_path, FiniteMarkovModel, Observable, Path};

use crate::stats::slow_log;
use rayon::prelude::*;
use serde::Serialize;

/// Partial sums `S_1..S_n` of an observable along a path, kept as value
/// vectors (length 1 for scalars) so both norms and polygonal interpolation
/// are available.
#[derive(Debug, Clone)]
pub struct PartialSums {
    /// `values[i-1]` is `S_i`; `S_(k+1) - S_k = f(W_k)` exactly.
    pub values: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl PartialSums {
    pub fn compute(f: &Observable, path: &Path, horizon: usize) -> Result<Self> {
        if path.start > 0 || path.end() < horizon as i64 - 1 {
            return Err(Error::PathTooShort {
                needed_start: 0,
                needed_end: horizon as i64 - 1,
                have_start: path.start,
                have_end: path.end(),
            });
        }
        let dim = f.dim();
        let mut acc = vec![0.0; dim];
        let mut values = Vec::with_capacity(horizon);
        let mut norms = Vec::with_capacity(horizon);
        for t in 0..horizon as i64 {
            let row = f.row(path.state_at(t) as usize);
            for (a, b) in acc.iter_mut().zip(&row) {
                *a += b;
            }
            values.push(acc.clone());
            norms.push(f.x_norm(&acc));
        }
        Ok(Self { values, norms })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `|S_i|_X` for `i = 1..=len`.
    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i - 1]
    }

    /// Polygonal sample `S_(n,t) = S_[nt] + (nt - [nt]) X_[nt]`.
    pub fn polygonal(&self, f: &Observable, path: &Path, n: usize, t: f64) -> Vec<f64> {
        let nt = n as f64 * t;
        let k = nt.floor() as usize;
        let frac = nt - k as f64;
        let mut out = if k == 0 {
            vec![0.0; f.dim()]
        } else {
            self.values[k - 1].clone()
        };
        if frac > 0.0 && k < self.len() {
            let row = f.row(path.state_at(k as i64) as usize);
            for (a, b) in out.iter_mut().zip(&row) {
                *a += frac * b;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MaximalKind {
    /// `sup |S_n| / n` (dominated ergodic / Hopf scale).
    M1,
    /// `sup |S_n| / sqrt(n L(L(n)))` (iterated-logarithm scale).
    M2,
}

/// Finite-horizon maximal function of the partial sums.
pub fn maximal_function(sums: &PartialSums, kind: MaximalKind, horizon: usize) -> f64 {
    assert!(horizon <= sums.len(), "horizon exceeds available sums");
    let mut best = 0.0f64;
    for i in 1..=horizon {
        let n = i as f64;
        let denom = match kind {
            MaximalKind::M1 => n,
            MaximalKind::M2 => (n * slow_log(slow_log(n))).sqrt(),
        };
        best = best.max(sums.norm(i) / denom);
    }
    best
}

/// The dyadic component series of one path at depth `d`.
#[derive(Debug, Clone)]
pub struct DyadicComponents {
    pub depth: usize,
    /// `(X - E_(-1) X) o theta^l` for `l = 0..2^d - 1`, value vectors.
    pub adapted: Vec<Vec<f64>>,
    /// `dk[k][l]` = `d_k o theta^(2^(k+1) l)` for `l = 0..2^(d-k-1) - 1`,
    /// where `d_k = E_(-2^k)(S_(2^k)) + E_(-2^k)(S_(2^k)) o theta^(2^k)
    /// - E_(-2^(k+1))(S_(2^(k+1)))`.
    pub dk: Vec<Vec<Vec<f64>>>,
    /// `uk[k][l]` = `u_k o theta^(2^(k+1) l)` as nonnegative norms, same
    /// `l` range as `dk[k]`.
    pub uk: Vec<Vec<f64>>,
    /// `E_(-2^k)(S_(2^k))` evaluated at the path origin, `k = 0..=d`.
    pub base: Vec<Vec<f64>>,
    base_norms: Vec<f64>,
}

impl DyadicComponents {
    /// The `u_d` term of the decomposition: `|E_(-2^d)(S_(2^d))|_X` at the
    /// origin.
    pub fn ud(&self) -> f64 {
        self.base_norms[self.depth]
    }
}

/// Compute every component series exactly from the path states and the
/// model's dyadic matrix powers. The path must cover `-2^d .. 2^d - 1`.
pub fn dyadic_components(
    model: &FiniteMarkovModel,
    f: &Observable,
    path: &Path,
    d: usize,
) -> Result<DyadicComponents> {
    let span = 1i64 << d;
    if path.start > -span || path.end() < span - 1 {
        return Err(Error::PathTooShort {
            needed_start: -span,
            needed_end: span - 1,
            have_start: path.start,
            have_end: path.end(),
        });
    }
    if f.centering_defect(model) > crate::conditions::CENTERING_TOL {
        return Err(Error::UncenteredObservable {
            context: "dyadic_components",
        });
    }

    // e_k = P^(2^k) g_(2^k) per component, k = 0..=d.
    let mut cache = PowerCache::new(model, "dyadic components")?;
    let f_cols = f.components();
    let mut g = f_cols.clone();
    let mut e_fns: Vec<Vec<Vec<f64>>> = Vec::with_capacity(d + 1);
    for k in 0..=d {
        if k > 0 {
            crate::conditions::advance_g_dyadic(model, &mut cache, &mut g, k - 1);
        }
        e_fns.push(cache.apply_dyadic_multi(k, &g));
    }
    let value_at =
        |fns: &[Vec<f64>], w: usize| -> Vec<f64> { fns.iter().map(|c| c[w]).collect() };

    let pf = model.apply_multi(&f_cols);
    let adapted = (0..span)
        .map(|l| {
            let w = path.state_at(l) as usize;
            let wp = path.state_at(l - 1) as usize;
            f_cols
                .iter()
                .zip(&pf)
                .map(|(fc, pc)| fc[w] - pc[wp])
                .collect()
        })
        .collect();

    let mut dk = Vec::with_capacity(d);
    let mut uk = Vec::with_capacity(d);
    for k in 0..d {
        let block = 1i64 << (k + 1);
        let count = 1usize << (d - k - 1);
        let mut dks = Vec::with_capacity(count);
        let mut uks = Vec::with_capacity(count);
        for l in 0..count as i64 {
            let t = block * l;
            let w_mid = path.state_at(t - (1i64 << k)) as usize;
            let w_top = path.state_at(t) as usize;
            let w_lo = path.state_at(t - block) as usize;
            let v: Vec<f64> = (0..f.dim())
                .map(|c| e_fns[k][c][w_mid] + e_fns[k][c][w_top] - e_fns[k + 1][c][w_lo])
                .collect();
            dks.push(v);
            uks.push(f.x_norm(&value_at(&e_fns[k], w_mid)));
        }
        dk.push(dks);
        uk.push(uks);
    }

    let base: Vec<Vec<f64>> = (0..=d)
        .map(|k| value_at(&e_fns[k], path.state_at(-(1i64 << k)) as usize))
        .collect();
    let base_norms = base.iter().map(|v| f.x_norm(v)).collect();

    Ok(DyadicComponents {
        depth: d,
        adapted,
        dk,
        uk,
        base,
        base_norms,
    })
}

/// Slack of the dyadic maximal inequality on one path: `rhs - lhs`, which
/// must be nonnegative up to floating-point error.
#[derive(Debug, Clone, Serialize)]
pub struct SlackReport {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub rhs_adapted: f64,
    pub rhs_dk: Vec<f64>,
    pub rhs_uk: Vec<f64>,
    pub ud: f64,
}

/// Evaluate both sides of the decomposition inequality
/// `max_(1<=i<=2^d) |S_i| <= max-adapted + sum_k max-d_k + u_d + sum_k max-u_k`.
pub fn verify_dyadic_inequality(
    f: &Observable,
    components: &DyadicComponents,
    sums: &PartialSums,
) -> Result<SlackReport> {
    let d = components.depth;
    let span = 1usize << d;
    if sums.len() < span {
        return Err(Error::PathTooShort {
            needed_start: 0,
            needed_end: span as i64 - 1,
            have_start: 0,
            have_end: sums.len() as i64 - 1,
        });
    }
    let lhs = (1..=span).map(|i| sums.norm(i)).fold(0.0, f64::max);

    let max_prefix_norm = |series: &[Vec<f64>]| -> f64 {
        let mut acc = vec![0.0; f.dim()];
        let mut best = 0.0f64;
        for v in series {
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b;
            }
            best = best.max(f.x_norm(&acc));
        }
        best
    };

    let rhs_adapted = max_prefix_norm(&components.adapted);
    let rhs_dk: Vec<f64> = components.dk.iter().map(|s| max_prefix_norm(s)).collect();
    let rhs_uk: Vec<f64> = components
        .uk
        .iter()
        .map(|s| s.iter().copied().fold(0.0, f64::max))
        .collect();
    let ud = components.ud();
    let rhs = rhs_adapted + rhs_dk.iter().sum::<f64>() + ud + rhs_uk.iter().sum::<f64>();
    Ok(SlackReport {
        lhs,
        rhs,
        slack: rhs - lhs,
        rhs_adapted,
        rhs_dk,
        rhs_uk,
        ud,
    })
}

/// Monte Carlo estimate of the Doob ratio
/// `E[max_(k<=n) |S_k(d)|^2] / E[|S_n(d)|^2]` with a delta-method band.
#[derive(Debug, Clone, Serialize)]
pub struct DoobReport {
    pub ratio: f64,
    /// One Monte Carlo standard deviation of the ratio estimate.
    pub mc_sigma: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub degenerate: bool,
    pub paths: usize,
}

pub fn doob_ratio(
    model: &FiniteMarkovModel,
    f: &Observable,
    n: usize,
    paths: usize,
    seed: u64,
) -> Result<DoobReport> {
    let md = martingale_difference(model, f)?;
    if md.sigma2.iter().all(|&s| s < 1e-14) {
        return Ok(DoobReport {
            ratio: f64::NAN,
            mc_sigma: f64::NAN,
            numerator: 0.0,
            denominator: 0.0,
            degenerate: true,
            paths,
        });
    }
    let dim = f.dim();
    let hrows: Vec<Vec<f64>> = (0..model.state_count()).map(|w| md.h.row(w)).collect();
    let prows: Vec<Vec<f64>> = (0..model.state_count()).map(|w| md.ph.row(w)).collect();
    let per_path: Vec<(f64, f64)> = (0..paths as u64)
        .into_par_iter()
        .map(|stream| {
            let path = simulate_path(model, -1, (n as i64 - 1).max(1), seed, stream).unwrap();
            let mut acc = vec![0.0; dim];
            let mut max_sq = 0.0f64;
            let mut last_sq = 0.0;
            for t in 0..n as i64 {
                let w = path.state_at(t - 1) as usize;
                let w2 = path.state_at(t) as usize;
                for ((a, hv), pv) in acc.iter_mut().zip(&hrows[w2]).zip(&prows[w]) {
                    *a += hv - pv;
                }
                let nn = f.x_norm(&acc);
                last_sq = nn * nn;
                max_sq = max_sq.max(last_sq);
            }
            (max_sq, last_sq)
        })
        .collect();

    let m = paths as f64;
    let num = per_path.iter().map(|p| p.0).sum::<f64>() / m;
    let den = per_path.iter().map(|p| p.1).sum::<f64>() / m;
    let va = per_path.iter().map(|p| (p.0 - num).powi(2)).sum::<f64>() / m;
    let vb = per_path.iter().map(|p| (p.1 - den).powi(2)).sum::<f64>() / m;
    let cab = per_path
        .iter()
        .map(|p| (p.0 - num) * (p.1 - den))
        .sum::<f64>()
        / m;
    let ratio = num / den;
    let rel_var = (va / (num * num) + vb / (den * den) - 2.0 * cab / (num * den)) / m;
    Ok(DoobReport {
        ratio,
        mc_sigma: rel_var.max(0.0).sqrt() * ratio,
        numerator: num,
        denominator: den,
        degenerate: false,
        paths,
    })
}

/// Bounded-ratio report for the dyadic moment inequality: the Monte Carlo
/// L2 norm of the running maximum against the exact bracket
/// `2^(d/2) (|X|_G + sum_(k<=d) 2^(-k/2) |E_(-2^k)(S_(2^k))|_G)`.
#[derive(Debug, Clone, Serialize)]
pub struct Cormax2Report {
    /// `(d, lhs_mc, bracket, ratio)` per depth; `ratio = lhs / (2^(d/2) bracket)`.
    pub rows: Vec<(usize, f64, f64, f64)>,
    /// Max ratio divided by min ratio across depths.
    pub spread: f64,
}

pub fn cormax2_check(
    model: &FiniteMarkovModel,
    f: &Observable,
    d_min: usize,
    d_max: usize,
    paths: usize,
    seed: u64,
) -> Result<Cormax2Report> {
    assert!(d_min <= d_max);
    if f.centering_defect(model) > crate::conditions::CENTERING_TOL {
        return Err(Error::UncenteredObservable {
            context: "cormax2_check",
        });
    }
    let fg = crate::conditions::gaussian_norm(model, f)?;
    // Exact bracket terms: |E_(-2^k)(S_(2^k))|_G = |e_k|_G since the state
    // at the block's left edge is stationary.
    let mut cache = PowerCache::new(model, "cormax2 bracket")?;
    let mut g = f.components();
    let mut brackets = Vec::with_capacity(d_max + 1);
    let mut acc = 0.0;
    for k in 0..=d_max {
        if k > 0 {
            crate::conditions::advance_g_dyadic(model, &mut cache, &mut g, k - 1);
        }
        let ek = f.from_components(cache.apply_dyadic_multi(k, &g), true);
        acc += crate::conditions::gaussian_norm(model, &ek)? / 2f64.powf(k as f64 / 2.0);
        brackets.push(fg + acc);
    }

    let horizon = 1usize << d_max;
    let dim = f.dim();
    let frows: Vec<Vec<f64>> = (0..model.state_count()).map(|w| f.row(w)).collect();
    let checkpoints: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|stream| {
            let path = simulate_path(model, 0, horizon as i64 - 1, seed, stream).unwrap();
            let mut acc = vec![0.0; dim];
            let mut best = 0.0f64;
            let mut out = Vec::with_capacity(d_max - d_min + 1);
            for i in 1..=horizon {
                let w = path.state_at(i as i64 - 1) as usize;
                for (a, b) in acc.iter_mut().zip(&frows[w]) {
                    *a += b;
                }
                let nn = f.x_norm(&acc);
                best = best.max(nn * nn);
                if i.is_power_of_two() {
                    let d = i.trailing_zeros() as usize;
                    if d >= d_min {
                        out.push(best);
                    }
                }
            }
            out
        })
        .collect();

    let mut rows = Vec::new();
    for (idx, d) in (d_min..=d_max).enumerate() {
        let lhs = (checkpoints.iter().map(|c| c[idx]).sum::<f64>() / paths as f64).sqrt();
        let bracket = 2f64.powf(d as f64 / 2.0) * brackets[d];
        rows.push((d, lhs, brackets[d], lhs / bracket));
    }
    let rmax = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    let rmin = rows.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
    Ok(Cormax2Report {
        rows,
        spread: if rmin > 0.0 { rmax / rmin } else { f64::INFINITY },
    })
}

/// Empirical check of the weak-(1,1) dominated-ergodic bound
/// `P(M1 > lambda) <= |X|_1 / lambda` over seeded paths.
#[derive(Debug, Clone, Serialize)]
pub struct HopfReport {
    /// `(lambda, empirical_probability, bound, slack)` rows.
    pub rows: Vec<(f64, f64, f64, f64)>,
    pub l1_norm: f64,
}

pub fn hopf_dominance(
    model: &FiniteMarkovModel,
    f: &Observable,
    horizon: usize,
    paths: usize,
    seed: u64,
    lambdas: &[f64],
) -> Result<HopfReport> {
    let frows: Vec<Vec<f64>> = (0..model.state_count()).map(|w| f.row(w)).collect();
    let l1: f64 = (0..model.state_count())
        .map(|w| model.pi()[w] * f.x_norm(&frows[w]))
        .sum();
    let dim = f.dim();
    let m1s: Vec<f64> = (0..paths as u64)
        .into_par_iter()
        .map(|stream| {
            let path = simulate_path(model, 0, horizon as i64 - 1, seed, stream).unwrap();
            let mut acc = vec![0.0; dim];
            let mut best = 0.0f64;
            for i in 1..=horizon {
                let w = path.state_at(i as i64 - 1) as usize;
                for (a, b) in acc.iter_mut().zip(&frows[w]) {
                    *a += b;
                }
                best = best.max(f.x_norm(&acc) / i as f64);
            }
            best
        })
        .collect();
    let rows = lambdas
        .iter()
        .map(|&lam| {
            let p = m1s.iter().filter(|&&m| m > lam).count() as f64 / paths as f64;
            let bound = l1 / lam;
            (lam, p, bound, bound - p)
        })
        .collect();
    Ok(HopfReport { rows, l1_norm: l1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{center_observable, Observable};
    use crate::rng::CounterRng;

    fn two_state() -> FiniteMarkovModel {
        FiniteMarkovModel::two_state(0.3, 0.6).unwrap()
    }

    fn centered_indicator(model: &FiniteMarkovModel) -> Observable {
        center_observable(model, &Observable::indicator(0, model.state_count()))
    }

    fn random_chain(m: usize, seed: u64) -> FiniteMarkovModel {
        let mut rng = CounterRng::new(seed, 0);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let raw: Vec<f64> = (0..m).map(|_| 0.05 + rng.next_f64()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        FiniteMarkovModel::from_dense(&rows).unwrap()
    }

    fn random_centered(model: &FiniteMarkovModel, seed: u64) -> Observable {
        let mut rng = CounterRng::new(seed, 1);
        let vals: Vec<f64> = (0..model.state_count())
            .map(|_| rng.next_f64() * 2.0 - 1.0)
            .collect();
        center_observable(model, &Observable::scalar(vals))
    }

    #[test]
    fn partial_sums_increment_identity() {
        let model = two_state();
        let f = centered_indicator(&model);
        let path = simulate_path(&model, -4, 64, 3, 0).unwrap();
        let sums = PartialSums::compute(&f, &path, 64).unwrap();
        let fv = f.as_scalar().unwrap();
        for k in 1..64 {
            let inc = sums.values[k][0] - sums.values[k - 1][0];
            assert!((inc - fv[path.state_at(k as i64) as usize]).abs() < 1e-12);
        }
    }

    #[test]
    fn maximal_function_examples() {
        let model = two_state();
        let path = simulate_path(&model, 0, 63, 1, 0).unwrap();
        let zero = Observable::scalar(vec![0.0, 0.0]);
        let sums = PartialSums::compute(&zero, &path, 64).unwrap();
        assert_eq!(maximal_function(&sums, MaximalKind::M1, 64), 0.0);
        assert_eq!(maximal_function(&sums, MaximalKind::M2, 64), 0.0);

        // Constant f = 1 (uncentered allowed here): S_n = n, M1 = 1.
        let one = Observable::scalar(vec![1.0, 1.0]);
        let sums = PartialSums::compute(&one, &path, 64).unwrap();
        assert!((maximal_function(&sums, MaximalKind::M1, 64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn m2_nondecreasing_in_horizon() {
        let model = two_state();
        let f = centered_indicator(&model);
        let path = simulate_path(&model, 0, 255, 9, 0).unwrap();
        let sums = PartialSums::compute(&f, &path, 256).unwrap();
        let mut prev = 0.0;
        for h in 1..=256 {
            let m2 = maximal_function(&sums, MaximalKind::M2, h);
            assert!(m2 >= prev);
            prev = m2;
        }
    }

    #[test]
    fn dyadic_iid_components_vanish() {
        let model = FiniteMarkovModel::iid(&[0.5, 0.5]).unwrap();
        let f = center_observable(&model, &Observable::scalar(vec![1.0, -1.0]));
        let d = 4;
        let path = simulate_path(&model, -(1 << d), 1 << d, 11, 0).unwrap();
        let comps = dyadic_components(&model, &f, &path, d).unwrap();
        for uks in &comps.uk {
            assert!(uks.iter().all(|&u| u.abs() < 1e-14));
        }
        for dks in &comps.dk {
            assert!(dks.iter().all(|v| v[0].abs() < 1e-14));
        }
        // Adapted part equals the raw increments.
        let fv = f.as_scalar().unwrap();
        for (l, a) in comps.adapted.iter().enumerate() {
            assert!((a[0] - fv[path.state_at(l as i64) as usize]).abs() < 1e-14);
        }
    }

    #[test]
    fn dyadic_depth_zero_reduction() {
        // d = 0: S_1 = (X - E_(-1) X) + E_(-1)(S_1).
        let model = two_state();
        let f = centered_indicator(&model);
        let path = simulate_path(&model, -2, 2, 5, 0).unwrap();
        let comps = dyadic_components(&model, &f, &path, 0).unwrap();
        let fv = f.as_scalar().unwrap();
        let s1 = fv[path.state_at(0) as usize];
        let e_m1_s1 = comps.base[0][0]; // (P g_1)(W_(-1)) = (P f)(W_(-1))
        assert!((comps.adapted[0][0] + e_m1_s1 - s1).abs() < 1e-14);
    }

    #[test]
    fn dyadic_reconstruction_identity() {
        // S_(2^j) = adapted prefix + sum_k d_k prefixes + E_(-2^j)(S_(2^j))
        // exactly, for every level j <= d.
        for seed in 0..8u64 {
            let model = random_chain(5, 300 + seed);
            let f = random_centered(&model, seed);
            let d = 6usize;
            let path = simulate_path(&model, -(1 << d), 1 << d, seed, 3).unwrap();
            let comps = dyadic_components(&model, &f, &path, d).unwrap();
            let sums = PartialSums::compute(&f, &path, 1 << d).unwrap();
            for j in 0..=d {
                let span = 1usize << j;
                let mut total = 0.0;
                for l in 0..span {
                    total += comps.adapted[l][0];
                }
                for k in 0..j {
                    for l in 0..(1usize << (j - k - 1)) {
                        total += comps.dk[k][l][0];
                    }
                }
                total += comps.base[j][0];
                assert!(
                    (total - sums.values[span - 1][0]).abs() < 1e-9,
                    "seed {seed} level {j}: {total} vs {}",
                    sums.values[span - 1][0]
                );
            }
        }
    }

    #[test]
    fn dyadic_components_match_brute_force_conditionals() {
        // e_k = P^(2^k) g_(2^k) via the doubling cache vs direct full sums
        // sum_(j=2^k)^(2^(k+1)-1) P^j f on small chains, blocks up to 64.
        for m in [3usize, 7, 10] {
            let model = random_chain(m, 400 + m as u64);
            let f = random_centered(&model, m as u64);
            let d = 6;
            let path = simulate_path(&model, -(1 << d), 1 << d, 1, 0).unwrap();
            let comps = dyadic_components(&model, &f, &path, d).unwrap();
            for k in 0..=d {
                let mk = 1u64 << k;
                let mut pj = f.as_scalar().unwrap().to_vec();
                for _ in 0..mk {
                    pj = model.apply(&pj);
                }
                let mut brute = vec![0.0; m];
                for _ in 0..mk {
                    for (b, v) in brute.iter_mut().zip(&pj) {
                        *b += v;
                    }
                    pj = model.apply(&pj);
                }
                let w = path.state_at(-(mk as i64)) as usize;
                assert!((comps.base[k][0] - brute[w]).abs() < 1e-10, "m={m} k={k}");
            }
        }
    }

    #[test]
    fn dyadic_subsampled_martingale_property_exact() {
        // Per-state conditional mean of the lag-2^(k+1) d_k series is zero:
        // P^(2^k) e_k + P^(2^(k+1)) e_k = e_(k+1) as state functions.
        let model = random_chain(6, 77);
        let f = random_centered(&model, 8);
        let mut cache = PowerCache::new(&model, "test").unwrap();
        let mut g = f.components();
        let mut e = Vec::new();
        let d = 5usize;
        for k in 0..=d {
            if k > 0 {
                let shifted = cache.apply_dyadic_multi(k - 1, &g);
                for (a, b) in g.iter_mut().zip(&shifted) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
            e.push(cache.apply_dyadic_multi(k, &g)[0].clone());
        }
        for k in 0..d {
            let mk = 1u64 << k;
            let mut p_mid = e[k].clone();
            for _ in 0..mk {
                p_mid = model.apply(&p_mid);
            }
            let mut p_top = p_mid.clone();
            for _ in 0..mk {
                p_top = model.apply(&p_top);
            }
            for w in 0..model.state_count() {
                let mean = p_mid[w] + p_top[w] - e[k + 1][w];
                assert!(mean.abs() < 1e-11, "k={k} w={w}: {mean}");
            }
        }
    }

    #[test]
    fn dyadic_inequality_iid_trivial() {
        let model = FiniteMarkovModel::iid(&[0.5, 0.5]).unwrap();
        let f = center_observable(&model, &Observable::scalar(vec![1.0, -1.0]));
        let d = 5;
        let path = simulate_path(&model, -(1 << d), 1 << d, 21, 0).unwrap();
        let comps = dyadic_components(&model, &f, &path, d).unwrap();
        let sums = PartialSums::compute(&f, &path, 1 << d).unwrap();
        let report = verify_dyadic_inequality(&f, &comps, &sums).unwrap();
        // For iid every non-adapted component vanishes and LHS = adapted max.
        assert!((report.lhs - report.rhs_adapted).abs() < 1e-12);
        assert!(report.slack >= -1e-12);
    }

    #[test]
    fn dyadic_inequality_holds_on_random_paths() {
        let model = random_chain(5, 1000);
        let f = random_centered(&model, 17);
        let d = 6;
        let mut min_slack = f64::INFINITY;
        for stream in 0..50u64 {
            let path = simulate_path(&model, -(1 << d), 1 << d, 2000, stream).unwrap();
            let comps = dyadic_components(&model, &f, &path, d).unwrap();
            let sums = PartialSums::compute(&f, &path, 1 << d).unwrap();
            let report = verify_dyadic_inequality(&f, &comps, &sums).unwrap();
            min_slack = min_slack.min(report.slack);
        }
        assert!(min_slack >= -1e-9, "min slack {min_slack}");
    }

    #[test]
    fn dyadic_inequality_zero_observable() {
        let model = two_state();
        let f = Observable::scalar(vec![0.0, 0.0]);
        let d = 3;
        let path = simulate_path(&model, -(1 << d), 1 << d, 2, 0).unwrap();
        let comps = dyadic_components(&model, &f, &path, d).unwrap();
        let sums = PartialSums::compute(&f, &path, 1 << d).unwrap();
        let report = verify_dyadic_inequality(&f, &comps, &sums).unwrap();
        assert_eq!(report.lhs, 0.0);
        assert_eq!(report.rhs, 0.0);
    }

    #[test]
    fn dyadic_path_too_short() {
        let model = two_state();
        let f = centered_indicator(&model);
        let path = simulate_path(&model, -4, 16, 1, 0).unwrap();
        match dyadic_components(&model, &f, &path, 5) {
            Err(Error::PathTooShort { needed_start, .. }) => assert_eq!(needed_start, -32),
            other => panic!("expected short-path error, got {other:?}"),
        }
    }

    #[test]
    fn doob_ratio_examples() {
        let model = two_state();
        let zero = Observable::scalar(vec![0.0, 0.0]);
        assert!(doob_ratio(&model, &zero, 8, 100, 1).unwrap().degenerate);

        let f = centered_indicator(&model);
        let r1 = doob_ratio(&model, &f, 1, 500, 2).unwrap();
        assert!((r1.ratio - 1.0).abs() < 1e-12);

        // iid +-1 differences at n = 1024: the ratio stays below the
        // displayed squared submartingale constant 2 within MC error.
        let pm = FiniteMarkovModel::iid(&[0.5, 0.5]).unwrap();
        let fpm = center_observable(&pm, &Observable::scalar(vec![1.0, -1.0]));
        let r = doob_ratio(&pm, &fpm, 1024, 4000, 3).unwrap();
        assert!(
            r.ratio <= 2.0 + 3.0 * r.mc_sigma,
            "ratio {} sigma {}",
            r.ratio,
            r.mc_sigma
        );
    }

    #[test]
    fn hopf_dominance_iid_pm_one() {
        let pm = FiniteMarkovModel::iid(&[0.5, 0.5]).unwrap();
        let f = center_observable(&pm, &Observable::scalar(vec![1.0, -1.0]));
        let report = hopf_dominance(&pm, &f, 256, 2000, 9, &[0.5, 1.0, 2.0]).unwrap();
        assert!((report.l1_norm - 1.0).abs() < 1e-12);
        for (lam, p, bound, slack) in &report.rows {
            assert!(*slack >= 0.0, "lambda {lam}: P {p} vs bound {bound}");
        }
    }

    #[test]
    fn cormax2_bounded_ratios_iid() {
        let pm = FiniteMarkovModel::iid(&[0.5, 0.5]).unwrap();
        let f = center_observable(&pm, &Observable::scalar(vec![1.0, -1.0]));
        let report = cormax2_check(&pm, &f, 2, 10, 2000, 77).unwrap();
        assert!(report.spread < 4.0, "spread {}", report.spread);
        for (_, _, _, ratio) in &report.rows {
            assert!(*ratio <= 1.0, "the exact bracket dominates: {ratio}");
        }
    }
}
