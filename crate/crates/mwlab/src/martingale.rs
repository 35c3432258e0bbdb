//! Martingale approximation on finite models: the operator `Q`, the Poisson
//! equation, the martingale difference, asymptotic covariance, and the exact
//! approximation error.
//!
//! On a Markov functional `X = f(W_0)` the operator `Q X = E_0(X o theta)`
//! acts as the transition matrix `P` on state functions. Solving the Poisson
//! equation `(I - P) h = f` on the complement of constants turns `f` into
//! the martingale difference `d(w, w') = h(w') - (Ph)(w)` plus a telescoping
//! boundary term, and every asymptotic quantity below follows from `h`
//! by exact stationary expectations.

use crate::conditions::{gaussian_norm, PowerCache};
use crate::error::{Error, Result};
use crate::models::{FiniteMarkovModel, Observable, ObservableData};
use nalgebra::{DMatrix, DVector};

/// Acceptable residual for the Poisson solve.
pub const POISSON_TOL: f64 = 1e-10;
/// Amplification `|h|/|f|` beyond which the solve is declared near-singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// `Q f = P f` componentwise. Constants are fixed, centered inputs stay
/// centered.
pub fn apply_q(model: &FiniteMarkovModel, f: &Observable) -> Observable {
    let cols = f.components().iter().map(|c| model.apply(c)).collect();
    f.from_components(cols, f.centered)
}

/// Solution of `(I - P) h = f` pinned to `pi(h) = 0`.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub h: Observable,
    /// Max-norm of `(I - P) h - f` over states and components.
    pub residual: f64,
    /// Max-norm of the stationary mean of `h` (the centering defect).
    pub centering_defect: f64,
}

/// Solve the Poisson equation by a bordered linear system: `(I - P)` is
/// singular on constants, so the constraint `pi(h) = 0` is appended with a
/// Lagrange multiplier, which comes out as zero exactly when `f` is
/// centered. One factorization serves every component of a grid observable.
pub fn solve_poisson(model: &FiniteMarkovModel, f: &Observable) -> Result<PoissonSolution> {
    if f.centering_defect(model) > 1e-8 {
        return Err(Error::UncenteredObservable {
            context: "solve_poisson: (I - P) h = f has no solution for uncentered f",
        });
    }
    let m = model.state_count();
    let p = model.dense("Poisson solve")?;
    let mut a = DMatrix::zeros(m + 1, m + 1);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = if i == j { 1.0 } else { 0.0 } - p[(i, j)];
        }
        a[(i, m)] = 1.0;
        a[(m, i)] = model.pi()[i];
    }
    let lu = a.lu();

    let mut cols = Vec::with_capacity(f.dim());
    let mut max_amp: f64 = 0.0;
    for c in f.components() {
        let mut rhs = DVector::zeros(m + 1);
        for (i, &v) in c.iter().enumerate() {
            rhs[i] = v;
        }
        let sol = lu
            .solve(&rhs)
            .ok_or(Error::NearSingularSolve { cond: f64::INFINITY })?;
        let h: Vec<f64> = sol.iter().take(m).copied().collect();
        let f_scale = c.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
        let h_scale = h.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
        if f_scale > 0.0 {
            max_amp = max_amp.max(h_scale / f_scale);
        }
        cols.push(h);
    }
    if max_amp > CONDITION_LIMIT {
        return Err(Error::NearSingularSolve { cond: max_amp });
    }

    let h = f.from_components(cols, true);
    let mut residual: f64 = 0.0;
    for (hc, fc) in h.components().iter().zip(f.components()) {
        let ph = model.apply(hc);
        for ((hv, pv), fv) in hc.iter().zip(&ph).zip(&fc) {
            residual = residual.max((hv - pv - fv).abs());
        }
    }
    let centering_defect = h.centering_defect(model);
    if residual > POISSON_TOL {
        return Err(Error::NearSingularSolve {
            cond: max_amp.max(residual / POISSON_TOL),
        });
    }
    Ok(PoissonSolution {
        h,
        residual,
        centering_defect,
    })
}

/// Truncated resolvent `Y_eps = sum_k (1 - eps)^k P^k f` with a certified
/// geometric truncation; as `eps -> 0` this approaches the Poisson solution
/// without a dense factorization.
pub fn resolvent_approx(model: &FiniteMarkovModel, f: &Observable, eps: f64) -> Result<Observable> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "eps",
            reason: format!("{eps} not in (0, 1]"),
        });
    }
    if f.centering_defect(model) > 1e-8 {
        return Err(Error::UncenteredObservable {
            context: "resolvent_approx",
        });
    }
    if eps == 1.0 {
        return Ok(f.clone());
    }
    // Doubling on partial sums: S_(2m) = S_m + (1-eps)^m P^m S_m. The tail
    // beyond m terms is bounded by (1-eps)^m |f|_inf / eps in max norm,
    // since P contracts the max norm.
    let f_inf: f64 = f
        .components()
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut cols = f.components();
    let mut scale = 1.0 - eps; // (1 - eps)^m at current m
    match PowerCache::new(model, "resolvent doubling") {
        Ok(mut cache) => {
            let mut k = 0usize;
            while scale * f_inf / eps > 1e-16 * f_inf.max(1e-300) && k < 64 {
                let shifted = cache.apply_dyadic_multi(k, &cols);
                for (a, b) in cols.iter_mut().zip(&shifted) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += scale * y;
                    }
                }
                scale *= scale;
                k += 1;
            }
        }
        Err(Error::TooLargeForDense { .. }) => {
            let mut pk = f.components(); // P^k f
            let mut w = 1.0 - eps;
            let budget = 1u64 << 22;
            let mut k = 0u64;
            while w / eps > 1e-16 && k < budget {
                pk = model.apply_multi(&pk);
                for (a, b) in cols.iter_mut().zip(&pk) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += w * y;
                    }
                }
                w *= 1.0 - eps;
                k += 1;
            }
            if w / eps > 1e-16 {
                return Err(Error::TooLargeForDense {
                    states: model.state_count(),
                    operation: "resolvent at this eps",
                });
            }
        }
        Err(e) => return Err(e),
    }
    Ok(f.from_components(cols, true))
}

/// Cesaro defect `|g_n|_G / n`: a mean-ergodicity diagnostic that must decay
/// for condition-satisfying observables.
pub fn cesaro_defect(model: &FiniteMarkovModel, f: &Observable, n: u64) -> Result<f64> {
    let g = crate::conditions::conditional_sum_profile(model, f, n)?;
    Ok(gaussian_norm(model, &g)? / n as f64)
}

/// The martingale difference `d(w, w') = h(w') - (Ph)(w)` induced by the
/// Poisson solution, with its per-direction stationary variances.
#[derive(Debug, Clone)]
pub struct MartingaleDifference {
    pub h: Observable,
    pub ph: Observable,
    /// `E[d_i^2] = pi(h_i^2) - pi((P h_i)^2)` per component.
    pub sigma2: Vec<f64>,
}

impl MartingaleDifference {
    /// Value of `d` for the transition `w -> w2` (length = dim).
    pub fn value(&self, w: usize, w2: usize) -> Vec<f64> {
        self.h
            .row(w2)
            .iter()
            .zip(self.ph.row(w))
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Scalar shortcut for scalar observables.
    pub fn value_scalar(&self, w: usize, w2: usize) -> f64 {
        self.h.as_scalar().unwrap()[w2] - self.ph.as_scalar().unwrap()[w]
    }

    pub fn scalar_sigma2(&self) -> f64 {
        self.sigma2[0]
    }
}

pub fn martingale_difference(
    model: &FiniteMarkovModel,
    f: &Observable,
) -> Result<MartingaleDifference> {
    let sol = solve_poisson(model, f)?;
    let ph = apply_q(model, &sol.h);
    let sigma2 = sol
        .h
        .components()
        .iter()
        .zip(ph.components())
        .map(|(h, p)| (model.pi_dot(h, h) - model.pi_dot(&p, &p)).max(0.0))
        .collect();
    Ok(MartingaleDifference { h: sol.h, ph, sigma2 })
}

/// Asymptotic covariance of the normalized sums: a scalar variance for
/// scalar observables, the grid-point covariance matrix otherwise.
#[derive(Debug, Clone)]
pub enum CovarianceOperator {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

impl CovarianceOperator {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            CovarianceOperator::Scalar(v) => Some(*v),
            _ => None,
        }
    }
}

/// `K(i, j) = E[d_i d_j] = pi(h_i h_j) - pi((P h_i)(P h_j))`, symmetric and
/// positive semidefinite up to roundoff.
pub fn asymptotic_covariance(
    model: &FiniteMarkovModel,
    f: &Observable,
) -> Result<CovarianceOperator> {
    let md = martingale_difference(model, f)?;
    if f.is_scalar() {
        return Ok(CovarianceOperator::Scalar(md.scalar_sigma2()));
    }
    let hcols = md.h.components();
    let pcols = md.ph.components();
    let k = hcols.len();
    let mut mat = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = model.pi_dot(&hcols[i], &hcols[j]) - model.pi_dot(&pcols[i], &pcols[j]);
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
    let min_eig = mat
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 {
        return Err(Error::NumericalDegeneracy {
            context: "covariance operator least eigenvalue",
            value: min_eig,
        });
    }
    Ok(CovarianceOperator::Matrix(mat))
}

/// Exact coboundary error `|S_n(X) - S_n(d)|_(L2)`; for scalar observables
/// this is `(2 pi((Ph)^2) - 2 pi(Ph * P^n(Ph)))^(1/2)`, bounded in `n`.
pub fn approximation_error(model: &FiniteMarkovModel, f: &Observable, n: u64) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let md = martingale_difference(model, f)?;
    match &f.data {
        ObservableData::Scalar(_) => {
            let ph = md.ph.as_scalar().unwrap();
            let mut cache = PowerCache::new(model, "approximation error")?;
            let pn_ph = cache.apply_power(n, ph);
            let sq = 2.0 * model.pi_dot(ph, ph) - 2.0 * model.pi_dot(ph, &pn_ph);
            Ok(sq.max(0.0).sqrt())
        }
        ObservableData::Grid { grid, .. } => {
            // E |Ph(W_-1) - Ph(W_(n-1))|_X^2 under the pair law pi (x) P^n.
            let mut cache = PowerCache::new(model, "approximation error")?;
            let m = model.state_count();
            let pn = {
                let mut id = DMatrix::identity(m, m);
                let mut bit = 0usize;
                let mut rest = n;
                while rest > 0 {
                    if rest & 1 == 1 {
                        id = &id * cache.dyadic(bit);
                    }
                    rest >>= 1;
                    bit += 1;
                }
                id
            };
            let pcols = md.ph.components();
            let mut acc = 0.0;
            for w in 0..m {
                for w2 in 0..m {
                    let pr = pn[(w, w2)];
                    if pr == 0.0 {
                        continue;
                    }
                    let diff: Vec<f64> = pcols.iter().map(|c| c[w] - c[w2]).collect();
                    acc += model.pi()[w] * pr * grid.p_norm(&diff, f.p).powi(2);
                }
            }
            Ok(acc.max(0.0).sqrt())
        }
    }
}
