//! Stationary finite Markov models, observables, and seeded two-sided paths.
//!
//! The model is the exact substrate for everything else: conditional
//! expectations with respect to the past sigma-field reduce, through the
//! Markov property, to powers of the transition matrix applied to state
//! functions, so condition norms and decompositions can be computed without
//! sampling error.

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use nalgebra::DMatrix;
use petgraph::graph::DiGraph;

/// Row sums must match 1 this tightly at build time.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// `pi * P = pi` must hold this tightly after every build.
pub const STATIONARY_TOL: f64 = 1e-10;
/// Dense factorizations (stationary solve, Poisson, SVD) are refused above
/// this state count; the iterative routes stay available.
pub const DENSE_STATE_LIMIT: usize = 3000;
/// `simulate_path` materializes at most this many states.
pub const PATH_BUDGET: usize = 1 << 26;

/// A finite, irreducible, aperiodic Markov model together with its exact
/// stationary distribution.
///
/// Rows are stored sparsely (only positive entries), which keeps matrix
/// powers cheap on the renewal chain whose rows below the root state hold a
/// single entry.
#[derive(Debug, Clone)]
pub struct FiniteMarkovModel {
    rows: Vec<Vec<(u32, f64)>>,
    cum_rows: Vec<Vec<f64>>,
    pi: Vec<f64>,
    pi_cum: Vec<f64>,
}

impl FiniteMarkovModel {
    /// Build from a dense row-stochastic matrix. The stationary distribution
    /// is solved for and verified.
    pub fn from_dense(p: &[Vec<f64>]) -> Result<Self> {
        let pi = stationary_distribution(p)?;
        Self::from_dense_with_pi(p, pi)
    }

    /// Build from a dense matrix and an externally known stationary
    /// distribution (verified, not trusted).
    pub fn from_dense_with_pi(p: &[Vec<f64>], pi: Vec<f64>) -> Result<Self> {
        let rows = sparsify(p)?;
        Self::from_sparse(rows, pi)
    }

    /// Build from sparse rows `(state, probability)` and a stationary
    /// distribution. All invariants are re-checked here.
    pub fn from_sparse(rows: Vec<Vec<(u32, f64)>>, pi: Vec<f64>) -> Result<Self> {
        let m = rows.len();
        if m < 2 {
            return Err(Error::InvalidParameter {
                name: "states",
                reason: format!("need at least 2 states, got {m}"),
            });
        }
        if pi.len() != m {
            return Err(Error::InvalidParameter {
                name: "pi",
                reason: format!("length {} does not match {m} states", pi.len()),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, v) in row {
                if v < 0.0 {
                    return Err(Error::NegativeEntry {
                        row: i,
                        col: j as usize,
                        value: v,
                    });
                }
                if j as usize >= m {
                    return Err(Error::InvalidParameter {
                        name: "rows",
                        reason: format!("row {i} points at state {j} >= {m}"),
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic { row: i, sum });
            }
        }
        check_irreducible_aperiodic(&rows)?;

        let pi_sum: f64 = pi.iter().sum();
        if (pi_sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter {
                name: "pi",
                reason: format!("sums to {pi_sum}"),
            });
        }
        if let Some((i, &v)) = pi.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(Error::InvalidParameter {
                name: "pi",
                reason: format!("pi[{i}] = {v} is not positive"),
            });
        }

        let cum_rows = rows
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|&(_, v)| {
                        acc += v;
                        acc
                    })
                    .collect()
            })
            .collect();
        let mut acc = 0.0;
        let pi_cum = pi
            .iter()
            .map(|&v| {
                acc += v;
                acc
            })
            .collect();

        let model = Self {
            rows,
            cum_rows,
            pi,
            pi_cum,
        };
        let resid = model.stationarity_residual();
        if resid > STATIONARY_TOL {
            return Err(Error::InvalidParameter {
                name: "pi",
                reason: format!("|pi*P - pi|_inf = {resid:.3e} exceeds {STATIONARY_TOL:.0e}"),
            });
        }
        Ok(model)
    }

    /// Model with all rows equal: the sequence of states is iid.
    pub fn iid(probs: &[f64]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..probs.len()).map(|_| probs.to_vec()).collect();
        Self::from_dense_with_pi(&rows, probs.to_vec())
    }

    /// Two-state chain with `P = [[1-a, a], [b, 1-b]]`; `pi = (b, a)/(a+b)`.
    pub fn two_state(a: f64, b: f64) -> Result<Self> {
        let p = vec![vec![1.0 - a, a], vec![b, 1.0 - b]];
        let pi = vec![b / (a + b), a / (a + b)];
        Self::from_dense_with_pi(&p, pi)
    }

    pub fn state_count(&self) -> usize {
        self.rows.len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn rows(&self) -> &[Vec<(u32, f64)>] {
        &self.rows
    }

    /// `|pi*P - pi|_inf`, assertable after every build.
    pub fn stationarity_residual(&self) -> f64 {
        let m = self.state_count();
        let mut pi_p = vec![0.0; m];
        for (w, row) in self.rows.iter().enumerate() {
            let pw = self.pi[w];
            for &(j, v) in row {
                pi_p[j as usize] += pw * v;
            }
        }
        pi_p.iter()
            .zip(&self.pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `(P v)(w) = sum_{w'} P(w,w') v(w')`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, p)| p * v[j as usize]).sum())
            .collect()
    }

    /// Apply `P` to several state functions at once (one per column).
    pub fn apply_multi(&self, cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        cols.iter().map(|v| self.apply(v)).collect()
    }

    /// Entry `P(w, w')` (zero if absent from the sparse row).
    pub fn prob(&self, w: usize, w2: usize) -> f64 {
        self.rows[w]
            .iter()
            .find(|&&(j, _)| j as usize == w2)
            .map(|&(_, v)| v)
            .unwrap_or(0.0)
    }

    /// Mean of a state function under the stationary distribution.
    pub fn pi_mean(&self, v: &[f64]) -> f64 {
        self.pi.iter().zip(v).map(|(p, x)| p * x).sum()
    }

    /// `sum_w pi_w u(w) v(w)`.
    pub fn pi_dot(&self, u: &[f64], v: &[f64]) -> f64 {
        self.pi
            .iter()
            .zip(u)
            .zip(v)
            .map(|((p, a), b)| p * a * b)
            .sum()
    }

    /// Stationary L2 norm of a state function.
    pub fn pi_l2(&self, v: &[f64]) -> f64 {
        self.pi_dot(v, v).max(0.0).sqrt()
    }

    /// Dense copy of `P`, refused above [`DENSE_STATE_LIMIT`].
    pub fn dense(&self, operation: &'static str) -> Result<DMatrix<f64>> {
        let m = self.state_count();
        if m > DENSE_STATE_LIMIT {
            return Err(Error::TooLargeForDense {
                states: m,
                operation,
            });
        }
        let mut d = DMatrix::zeros(m, m);
        for (w, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                d[(w, j as usize)] = v;
            }
        }
        Ok(d)
    }

    #[inline]
    fn draw_from_cum(cum: &[f64], u: f64) -> u32 {
        let idx = cum.partition_point(|&c| c <= u);
        idx.min(cum.len() - 1) as u32
    }

    #[inline]
    pub(crate) fn draw_stationary(&self, u: f64) -> u32 {
        Self::draw_from_cum(&self.pi_cum, u)
    }

    #[inline]
    pub(crate) fn draw_step(&self, state: u32, u: f64) -> u32 {
        let row = &self.cum_rows[state as usize];
        let idx = Self::draw_from_cum(row, u);
        self.rows[state as usize][idx as usize].0
    }
}

fn sparsify(p: &[Vec<f64>]) -> Result<Vec<Vec<(u32, f64)>>> {
    let m = p.len();
    let mut rows = Vec::with_capacity(m);
    for (i, row) in p.iter().enumerate() {
        if row.len() != m {
            return Err(Error::InvalidParameter {
                name: "matrix",
                reason: format!("row {i} has {} entries, expected {m}", row.len()),
            });
        }
        let mut sparse = Vec::new();
        for (j, &v) in row.iter().enumerate() {
            if v < 0.0 {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            if v > 0.0 {
                sparse.push((j as u32, v));
            }
        }
        rows.push(sparse);
    }
    Ok(rows)
}

/// Graph reachability plus gcd of cycle lengths; reducible chains report
/// their communicating classes, periodic ones their period.
fn check_irreducible_aperiodic(rows: &[Vec<(u32, f64)>]) -> Result<()> {
    let m = rows.len();
    let mut graph = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..m).map(|_| graph.add_node(())).collect();
    for (i, row) in rows.iter().enumerate() {
        for &(j, _) in row {
            graph.add_edge(nodes[i], nodes[j as usize], ());
        }
    }
    let sccs = petgraph::algo::tarjan_scc(&graph);
    if sccs.len() > 1 {
        let classes = sccs
            .iter()
            .map(|c| {
                let mut ids: Vec<usize> = c.iter().map(|n| n.index()).collect();
                ids.sort_unstable();
                ids
            })
            .collect();
        return Err(Error::ReducibleChain { classes });
    }

    // Period = gcd over edges (u, v) of level(u) + 1 - level(v) on a BFS tree.
    let mut level = vec![i64::MIN; m];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    let mut g: i64 = 0;
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &rows[u] {
            let v = v as usize;
            if level[v] == i64::MIN {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                g = gcd(g, (level[u] + 1 - level[v]).abs());
            }
        }
    }
    if g != 1 {
        return Err(Error::PeriodicChain {
            period: g.unsigned_abs() as usize,
        });
    }
    Ok(())
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Solve `pi * P = pi`, `sum(pi) = 1` for a dense row-stochastic matrix.
///
/// The chain is validated (row sums, irreducibility, aperiodicity) before
/// solving; reducible inputs report their communicating classes.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let rows = sparsify(p)?;
    let m = rows.len();
    for (i, row) in p.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NotStochastic { row: i, sum });
        }
    }
    check_irreducible_aperiodic(&rows)?;
    if m > DENSE_STATE_LIMIT {
        return Err(Error::TooLargeForDense {
            states: m,
            operation: "stationary solve",
        });
    }

    // (P^T - I) pi = 0 with the last balance equation replaced by sum = 1.
    let mut a = DMatrix::zeros(m, m);
    for (i, row) in p.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            a[(j, i)] += v;
        }
    }
    for i in 0..m {
        a[(i, i)] -= 1.0;
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::zeros(m);
    b[m - 1] = 1.0;
    let lu = a.lu();
    let pi = lu.solve(&b).ok_or(Error::NearSingularSolve { cond: f64::INFINITY })?;
    Ok(pi.iter().copied().collect())
}

/// Renewal-chain recipe: return-time law `p_i` proportional to
/// `i^(-tail_exponent)` on `i = 1..=truncation`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalSpec {
    /// Must exceed 2 so the mean return time is finite.
    pub tail_exponent: f64,
    /// Number of states retained; the chain lives on `0..truncation`.
    pub truncation: usize,
}

/// A built renewal chain with its exactly known stationary law and the
/// bookkeeping the reports need.
#[derive(Debug, Clone)]
pub struct RenewalChain {
    pub model: FiniteMarkovModel,
    /// `c = 1/zeta(tail_exponent)`, the infinite-family normalizer.
    pub normalizer: f64,
    /// Truncated return law, `return_law[i]` = probability of a return time
    /// of `i + 1`. The mass beyond the truncation is folded into the last
    /// atom, so this sums to 1.
    pub return_law: Vec<f64>,
    /// Exact mass `sum_{i > truncation} c i^(-a)` relocated by truncation.
    pub tail_mass: f64,
    /// Mean return time of the truncated law.
    pub mean_return: f64,
    /// Second moment of the truncated law (always finite here).
    pub second_moment_return: f64,
    /// Set iff the untruncated family has an infinite second moment
    /// (`tail_exponent <= 3`): the counterexample regime.
    pub second_moment_diverges: bool,
}

/// Riemann zeta on `(2, inf)` by partial sum plus Euler-Maclaurin tail.
fn zeta(a: f64) -> f64 {
    let k = 50_000u64;
    let head: f64 = (1..k).map(|i| (i as f64).powf(-a)).sum();
    head + zeta_tail_from(a, k as f64)
}

/// `sum_{i >= k} i^(-a)` for real `k >= 2`, accurate to near machine epsilon.
fn zeta_tail_from(a: f64, k: f64) -> f64 {
    k.powf(1.0 - a) / (a - 1.0) + 0.5 * k.powf(-a) + a * k.powf(-a - 1.0) / 12.0
        - a * (a + 1.0) * (a + 2.0) * k.powf(-a - 3.0) / 720.0
}

/// Build the renewal chain: from state `i >= 1` the walk steps down to
/// `i - 1` deterministically; from state 0 it jumps to `i - 1` with the
/// return-law probability of `i`. The stationary law is exact:
/// `pi_0 = 1/E(tau)`, `pi_i = pi_0 * sum_{j >= i+1} p_j`.
pub fn build_renewal_chain(spec: &RenewalSpec) -> Result<RenewalChain> {
    if !(spec.tail_exponent > 2.0) {
        return Err(Error::InvalidParameter {
            name: "tail_exponent",
            reason: format!(
                "{} <= 2: the return time has no finite mean, so no stationary law exists",
                spec.tail_exponent
            ),
        });
    }
    if spec.truncation < 4 {
        return Err(Error::InvalidParameter {
            name: "truncation",
            reason: format!("{} < 4", spec.truncation),
        });
    }
    let a = spec.tail_exponent;
    let n = spec.truncation;
    let c = 1.0 / zeta(a);

    let mut law: Vec<f64> = (1..=n).map(|i| c * (i as f64).powf(-a)).collect();
    let tail_mass = c * zeta_tail_from(a, (n + 1) as f64);
    // Fold the dropped tail into the longest retained return time so the
    // law stays a probability vector.
    *law.last_mut().unwrap() += tail_mass;
    let total: f64 = law.iter().sum();
    for v in &mut law {
        *v /= total;
    }

    let mean_return: f64 = law.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
    let second_moment: f64 = law
        .iter()
        .enumerate()
        .map(|(i, p)| ((i + 1) as f64).powi(2) * p)
        .sum();

    // pi_0 = 1/E(tau); pi_i = pi_0 * P(tau > i), with the tail probability
    // accumulated backward for stability, then renormalized exactly.
    let pi0 = 1.0 / mean_return;
    let mut tail_prob = vec![0.0; n]; // tail_prob[i] = P(tau > i) = sum_{k >= i} law[k]
    let mut acc = 0.0;
    for i in (0..n).rev() {
        acc += law[i];
        tail_prob[i] = acc;
    }
    let mut pi: Vec<f64> = tail_prob.iter().map(|&t| pi0 * t).collect();
    let pi_total: f64 = pi.iter().sum();
    for v in &mut pi {
        *v /= pi_total;
    }

    let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
    rows.push(law.iter().enumerate().map(|(i, &p)| (i as u32, p)).collect());
    for i in 1..n {
        rows.push(vec![((i - 1) as u32, 1.0)]);
    }

    let model = FiniteMarkovModel::from_sparse(rows, pi)?;
    Ok(RenewalChain {
        model,
        normalizer: c,
        return_law: law,
        tail_mass,
        mean_return,
        second_moment_return: second_moment,
        second_moment_diverges: a <= 3.0,
    })
}

/// Quadrature grid approximating a sigma-finite measure on the line.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: format!(
                    "{} points vs {} weights",
                    points.len(),
                    weights.len()
                ),
            });
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter {
                name: "grid.points",
                reason: "points must be strictly increasing".into(),
            });
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidParameter {
                name: "grid.weights",
                reason: "weights must be positive".into(),
            });
        }
        Ok(Self { points, weights })
    }

    /// Trapezoidal discretization of Lebesgue measure on `[lo, hi]`.
    pub fn lebesgue(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 || !(hi > lo) {
            return Err(Error::InvalidParameter {
                name: "grid.lebesgue",
                reason: format!("need hi > lo and count >= 2, got [{lo}, {hi}] with {count}"),
            });
        }
        let h = (hi - lo) / (count - 1) as f64;
        let points = (0..count).map(|i| lo + h * i as f64).collect();
        let weights = (0..count)
            .map(|i| if i == 0 || i == count - 1 { h / 2.0 } else { h })
            .collect();
        Self::new(points, weights)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total mass `mu(R)` of the grid measure.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `(sum_i w_i |v_i|^p)^(1/p)`.
    pub fn p_norm(&self, v: &[f64], p: f64) -> f64 {
        self.weights
            .iter()
            .zip(v)
            .map(|(w, x)| w * x.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservableData {
    /// One real value per state.
    Scalar(Vec<f64>),
    /// One value per state per grid point: `per_state[w][i]`.
    Grid { per_state: Vec<Vec<f64>>, grid: Grid },
}

/// A per-state observable: the function `f` with `X = f(W_0)`, either real
/// valued or valued in the grid discretization of `L^p(mu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub data: ObservableData,
    /// Norm exponent of the target space; 2 for scalars unless overridden.
    pub p: f64,
    pub centered: bool,
}

impl Observable {
    pub fn scalar(values: Vec<f64>) -> Self {
        Self {
            data: ObservableData::Scalar(values),
            p: 2.0,
            centered: false,
        }
    }

    pub fn grid(per_state: Vec<Vec<f64>>, grid: Grid, p: f64) -> Result<Self> {
        if p < 1.0 {
            return Err(Error::InvalidParameter {
                name: "p",
                reason: format!("{p} < 1"),
            });
        }
        let k = grid.len();
        if let Some(row) = per_state.iter().find(|r| r.len() != k) {
            return Err(Error::InvalidParameter {
                name: "observable.values",
                reason: format!("state row has {} entries, grid has {k}", row.len()),
            });
        }
        Ok(Self {
            data: ObservableData::Grid { per_state, grid },
            p,
            centered: false,
        })
    }

    /// Indicator of one state (useful uncentered; center against a model).
    pub fn indicator(state: usize, state_count: usize) -> Self {
        let mut v = vec![0.0; state_count];
        v[state] = 1.0;
        Self::scalar(v)
    }

    pub fn state_count(&self) -> usize {
        match &self.data {
            ObservableData::Scalar(v) => v.len(),
            ObservableData::Grid { per_state, .. } => per_state.len(),
        }
    }

    /// Dimension of the target space (1 for scalars, grid size otherwise).
    pub fn dim(&self) -> usize {
        match &self.data {
            ObservableData::Scalar(_) => 1,
            ObservableData::Grid { grid, .. } => grid.len(),
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self.data, ObservableData::Scalar(_))
    }

    pub fn as_scalar(&self) -> Result<&[f64]> {
        match &self.data {
            ObservableData::Scalar(v) => Ok(v),
            _ => Err(Error::GridObservableRejected),
        }
    }

    pub fn grid_ref(&self) -> Option<&Grid> {
        match &self.data {
            ObservableData::Grid { grid, .. } => Some(grid),
            _ => None,
        }
    }

    /// Component `i` as a state function.
    pub fn component(&self, i: usize) -> Vec<f64> {
        match &self.data {
            ObservableData::Scalar(v) => {
                assert_eq!(i, 0);
                v.clone()
            }
            ObservableData::Grid { per_state, .. } => per_state.iter().map(|r| r[i]).collect(),
        }
    }

    /// All components as state functions (columns).
    pub fn components(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.component(i)).collect()
    }

    /// Value vector at one state (length `dim()`).
    pub fn row(&self, w: usize) -> Vec<f64> {
        match &self.data {
            ObservableData::Scalar(v) => vec![v[w]],
            ObservableData::Grid { per_state, .. } => per_state[w].clone(),
        }
    }

    /// Norm of a value vector in the target space: absolute value for
    /// scalars, the grid `p`-norm otherwise.
    pub fn x_norm(&self, v: &[f64]) -> f64 {
        match &self.data {
            ObservableData::Scalar(_) => v[0].abs(),
            ObservableData::Grid { grid, .. } => grid.p_norm(v, self.p),
        }
    }

    /// Rebuild from per-component state functions (same kind/grid as self).
    pub fn from_components(&self, cols: Vec<Vec<f64>>, centered: bool) -> Self {
        match &self.data {
            ObservableData::Scalar(_) => Self {
                data: ObservableData::Scalar(cols.into_iter().next().unwrap()),
                p: self.p,
                centered,
            },
            ObservableData::Grid { grid, .. } => {
                let m = cols[0].len();
                let per_state = (0..m)
                    .map(|w| cols.iter().map(|c| c[w]).collect())
                    .collect();
                Self {
                    data: ObservableData::Grid {
                        per_state,
                        grid: grid.clone(),
                    },
                    p: self.p,
                    centered,
                }
            }
        }
    }

    /// Max absolute component deviation of the pi-mean from zero.
    pub fn centering_defect(&self, model: &FiniteMarkovModel) -> f64 {
        self.components()
            .iter()
            .map(|c| model.pi_mean(c).abs())
            .fold(0.0, f64::max)
    }
}

/// Subtract the stationary mean componentwise and set the centered flag.
/// Idempotent on already-centered observables.
pub fn center_observable(model: &FiniteMarkovModel, f: &Observable) -> Observable {
    let defect = f.centering_defect(model);
    if defect == 0.0 || (f.centered && defect <= 1e-12) {
        let mut out = f.clone();
        out.centered = true;
        return out;
    }
    let cols = f
        .components()
        .into_iter()
        .map(|c| {
            let mean = model.pi_mean(&c);
            c.into_iter().map(|x| x - mean).collect()
        })
        .collect();
    f.from_components(cols, true)
}

/// A materialized two-sided trajectory: `states[t - start]` is the state at
/// time `t`, for `start <= t <= start + states.len() - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub start: i64,
    pub states: Vec<u32>,
    pub seed: u64,
    pub stream: u64,
}

impl Path {
    #[inline]
    pub fn state_at(&self, t: i64) -> u32 {
        debug_assert!(t >= self.start);
        self.states[(t - self.start) as usize]
    }

    pub fn end(&self) -> i64 {
        self.start + self.states.len() as i64 - 1
    }

    /// `(index, state)` rows for CSV export.
    pub fn csv_rows(&self) -> impl Iterator<Item = (i64, u32)> + '_ {
        self.states
            .iter()
            .enumerate()
            .map(|(i, &s)| (self.start + i as i64, s))
    }
}

/// Streaming stationary walker for horizons too long to materialize.
/// Produces exactly the same states as [`simulate_path`] with the same
/// `(seed, stream, start)`.
pub struct PathStream<'a> {
    model: &'a FiniteMarkovModel,
    rng: CounterRng,
    state: Option<u32>,
}

impl<'a> PathStream<'a> {
    pub fn new(model: &'a FiniteMarkovModel, seed: u64, stream: u64) -> Self {
        Self {
            model,
            rng: CounterRng::new(seed, stream),
            state: None,
        }
    }
}

impl Iterator for PathStream<'_> {
    type Item = u32;

    #[inline]
    fn next(&mut self) -> Option<u32> {
        let u = self.rng.next_f64();
        let s = match self.state {
            None => self.model.draw_stationary(u),
            Some(prev) => self.model.draw_step(prev, u),
        };
        self.state = Some(s);
        Some(s)
    }
}

/// Simulate a two-sided path: the state at `start` is drawn from `pi`,
/// subsequent states from the transition rows. Deterministic in
/// `(seed, stream)`.
pub fn simulate_path(
    model: &FiniteMarkovModel,
    start: i64,
    horizon: i64,
    seed: u64,
    stream: u64,
) -> Result<Path> {
    if start > 0 || horizon < 1 {
        return Err(Error::InvalidParameter {
            name: "start/horizon",
            reason: format!("need start <= 0 <= 1 <= horizon, got {start}, {horizon}"),
        });
    }
    let len = (horizon - start + 1) as usize;
    if len > PATH_BUDGET {
        return Err(Error::PathTooLong {
            requested: len,
            budget: PATH_BUDGET,
        });
    }
    let states: Vec<u32> = PathStream::new(model, seed, stream).take(len).collect();
    Ok(Path {
        start,
        states,
        seed,
        stream,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn power_iteration_pi(p: &[Vec<f64>], iters: usize) -> Vec<f64> {
        let m = p.len();
        let mut pi = vec![1.0 / m as f64; m];
        for _ in 0..iters {
            let mut next = vec![0.0; m];
            for (i, row) in p.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    next[j] += pi[i] * v;
                }
            }
            pi = next;
        }
        pi
    }

    fn random_dense_chain(m: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = CounterRng::new(seed, 0);
        (0..m)
            .map(|_| {
                let raw: Vec<f64> = (0..m).map(|_| 0.05 + rng.next_f64()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect()
    }

    #[test]
    fn iid_rows_fixed_point() {
        let r = vec![0.2, 0.5, 0.3];
        let pi = stationary_distribution(&vec![r.clone(); 3]).unwrap();
        for (a, b) in pi.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_state_analytic_pi() {
        let pi = stationary_distribution(&[vec![0.7, 0.3], vec![0.6, 0.4]]).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-12);
        // Cross-check by power iteration.
        let pow = power_iteration_pi(&[vec![0.7, 0.3], vec![0.6, 0.4]], 200);
        assert!((pi[0] - pow[0]).abs() < 1e-12);
    }

    #[test]
    fn random_chains_satisfy_stationarity() {
        for seed in 0..20u64 {
            let m = 3 + (seed as usize * 7) % 18;
            let p = random_dense_chain(m, seed);
            let model = FiniteMarkovModel::from_dense(&p).unwrap();
            assert!(model.stationarity_residual() <= STATIONARY_TOL);
            let sum: f64 = model.pi().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reducible_chain_reports_classes() {
        let p = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.0, 0.5, 0.5],
        ];
        match stationary_distribution(&p) {
            Err(Error::ReducibleChain { classes }) => {
                assert!(classes.contains(&vec![0]));
                assert!(classes.contains(&vec![1, 2]));
            }
            other => panic!("expected reducible error, got {other:?}"),
        }
    }

    #[test]
    fn periodic_chain_rejected() {
        let p = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        match stationary_distribution(&p) {
            Err(Error::PeriodicChain { period }) => assert_eq!(period, 2),
            other => panic!("expected periodic error, got {other:?}"),
        }
    }

    #[test]
    fn renewal_pi_matches_generic_solver() {
        let chain = build_renewal_chain(&RenewalSpec {
            tail_exponent: 3.0,
            truncation: 32,
        })
        .unwrap();
        // Oracle: rebuild the same transition matrix densely and solve.
        let m = chain.model.state_count();
        let mut dense = vec![vec![0.0; m]; m];
        for (w, row) in chain.model.rows().iter().enumerate() {
            for &(j, v) in row {
                dense[w][j as usize] = v;
            }
        }
        let solved = stationary_distribution(&dense).unwrap();
        for (a, b) in chain.model.pi().iter().zip(&solved) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // And the closed form pi_i = pi_0 * sum_{j >= i+1} p_j.
        let pi0 = chain.model.pi()[0];
        assert!((pi0 - 1.0 / chain.mean_return).abs() < 1e-12);
        for i in 1..m {
            let tail: f64 = chain.return_law[i..].iter().sum();
            assert!((chain.model.pi()[i] - pi0 * tail).abs() < 1e-10);
        }
    }

    #[test]
    fn renewal_mean_matches_zeta_ratio() {
        // Oracle: direct series summation with its own normalizer.
        let oracle = |a: f64, moment: u32| -> f64 {
            let k = 2_000_000u64;
            let c: f64 = 1.0 / (1..k).map(|i| (i as f64).powf(-a)).sum::<f64>();
            (1..k)
                .map(|i| (i as f64).powi(moment as i32) * c * (i as f64).powf(-a))
                .sum()
        };
        let chain = build_renewal_chain(&RenewalSpec {
            tail_exponent: 3.0,
            truncation: 2048,
        })
        .unwrap();
        assert!(
            (chain.mean_return - oracle(3.0, 1)).abs() < 1e-3,
            "E(tau) = {} vs {}",
            chain.mean_return,
            oracle(3.0, 1)
        );
        assert!(chain.second_moment_diverges);

        let chain4 = build_renewal_chain(&RenewalSpec {
            tail_exponent: 4.0,
            truncation: 1024,
        })
        .unwrap();
        assert!(!chain4.second_moment_diverges);
        assert!(
            (chain4.second_moment_return - oracle(4.0, 2)).abs() < 1e-3,
            "E(tau^2) = {} vs {}",
            chain4.second_moment_return,
            oracle(4.0, 2)
        );
    }

    #[test]
    fn renewal_steps_down_deterministically() {
        let chain = build_renewal_chain(&RenewalSpec {
            tail_exponent: 3.0,
            truncation: 16,
        })
        .unwrap();
        assert_eq!(chain.model.rows()[3], vec![(2, 1.0)]);
    }

    #[test]
    fn renewal_rejects_heavy_tail_without_mean() {
        assert!(build_renewal_chain(&RenewalSpec {
            tail_exponent: 2.0,
            truncation: 64,
        })
        .is_err());
    }

    #[test]
    fn deterministic_cycle_path_needs_aperiodicity_workaround() {
        // A lazy cycle: aperiodic but nearly deterministic, the path follows
        // the cycle when the lazy step is not taken.
        let eps = 1e-9;
        let p = vec![
            vec![eps, 1.0 - eps, 0.0],
            vec![0.0, eps, 1.0 - eps],
            vec![1.0 - eps, 0.0, eps],
        ];
        let model = FiniteMarkovModel::from_dense(&p).unwrap();
        let path = simulate_path(&model, 0, 50, 7, 0).unwrap();
        for t in 0..50 {
            let (a, b) = (path.state_at(t), path.state_at(t + 1));
            assert_eq!((a + 1) % 3, b, "cycle broken at {t}");
        }
    }

    #[test]
    fn same_seed_same_path() {
        let model = FiniteMarkovModel::two_state(0.3, 0.6).unwrap();
        let a = simulate_path(&model, -16, 64, 99, 4).unwrap();
        let b = simulate_path(&model, -16, 64, 99, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stream_matches_materialized_path() {
        let model = FiniteMarkovModel::two_state(0.3, 0.6).unwrap();
        let path = simulate_path(&model, 0, 99, 5, 11).unwrap();
        let streamed: Vec<u32> = PathStream::new(&model, 5, 11).take(100).collect();
        assert_eq!(path.states, streamed);
    }

    #[test]
    fn renewal_first_step_frequencies_in_binomial_bands() {
        let chain = build_renewal_chain(&RenewalSpec {
            tail_exponent: 3.0,
            truncation: 64,
        })
        .unwrap();
        let n = 100_000usize;
        let mut rng = CounterRng::new(2024, 0);
        let mut counts = vec![0usize; 64];
        for _ in 0..n {
            counts[chain.model.draw_step(0, rng.next_f64()) as usize] += 1;
        }
        for (j, &cnt) in counts.iter().enumerate() {
            let p = chain.return_law[j]; // jump to j has return-time prob p_{j+1}
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let freq = cnt as f64 / n as f64;
            assert!(
                (freq - p).abs() <= 3.0 * sigma + 1e-4,
                "state {j}: freq {freq} vs p {p}"
            );
        }
    }

    #[test]
    fn path_law_multinomial_bands() {
        // 99.9% band (z = 3.29) per transition entry over 1e5 steps.
        let model = FiniteMarkovModel::from_dense(&random_dense_chain(5, 31)).unwrap();
        let n = 100_000usize;
        let mut visits = vec![0usize; 5];
        let mut trans = vec![vec![0usize; 5]; 5];
        let mut prev: Option<u32> = None;
        for s in PathStream::new(&model, 77, 0).take(n + 1) {
            if let Some(p) = prev {
                visits[p as usize] += 1;
                trans[p as usize][s as usize] += 1;
            }
            prev = Some(s);
        }
        for w in 0..5 {
            if model.pi()[w] < 1e-3 {
                continue;
            }
            let nw = visits[w] as f64;
            for w2 in 0..5 {
                let p = model.prob(w, w2);
                let freq = trans[w][w2] as f64 / nw;
                let sigma = (p * (1.0 - p) / nw).sqrt();
                assert!(
                    (freq - p).abs() <= 3.29 * sigma + 1e-6,
                    "row {w} -> {w2}: {freq} vs {p}"
                );
            }
        }
    }

    #[test]
    fn shift_stationarity_of_empirical_means() {
        let model = FiniteMarkovModel::two_state(0.3, 0.6).unwrap();
        let f = center_observable(&model, &Observable::indicator(0, 2));
        let vals = f.as_scalar().unwrap();
        let path = simulate_path(&model, 0, 60_000, 1234, 0).unwrap();
        let window = 50_000usize;
        let mean_at = |lag: usize| -> f64 {
            (0..window)
                .map(|t| vals[path.state_at((t + lag) as i64) as usize])
                .sum::<f64>()
                / window as f64
        };
        let base = mean_at(0);
        for lag in [1usize, 7, 997] {
            assert!((mean_at(lag) - base).abs() < 5e-3);
        }
    }

    #[test]
    fn center_observable_examples() {
        let chain = build_renewal_chain(&RenewalSpec {
            tail_exponent: 3.0,
            truncation: 32,
        })
        .unwrap();
        let f = center_observable(&chain.model, &Observable::indicator(0, 32));
        let vals = f.as_scalar().unwrap();
        let pi0 = chain.model.pi()[0];
        assert!((vals[0] - (1.0 - pi0)).abs() < 1e-12);
        for &v in &vals[1..] {
            assert!((v + pi0).abs() < 1e-12);
        }
        // Idempotence.
        let again = center_observable(&chain.model, &f);
        assert_eq!(f, again);
        // Constants die.
        let c = center_observable(&chain.model, &Observable::scalar(vec![3.5; 32]));
        assert!(c.as_scalar().unwrap().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn path_budget_guard() {
        let model = FiniteMarkovModel::two_state(0.3, 0.6).unwrap();
        match simulate_path(&model, 0, PATH_BUDGET as i64 + 10, 0, 0) {
            Err(Error::PathTooLong { .. }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}
