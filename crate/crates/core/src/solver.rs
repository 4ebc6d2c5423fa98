//! Row-wise decomposition solver for the multiclass dual.
//!
//! The dual is
//!
//! ```text
//! max W(a) = -1/2 sum_{i,j} sum_l a_il a_jl K_ij - sum_{i,l} a_il e_il
//! s.t. sum_l a_il = 0,  a_{i,y_i} <= C_i,  a_il <= 0 (l != y_i)
//! ```
//!
//! Each step picks the row with the largest KKT violation and solves its
//! `L`-variable sub-problem exactly with the other rows frozen.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::AugmentedProblem;
use crate::error::{Error, Result};
use crate::kernel::GramMatrix;

/// Diagonal kernel values at or below this are treated as degenerate and
/// regularised before the row step.
const DEGENERATE_DIAG: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// KKT violation threshold.
    pub tol: f64,
    pub max_outer_iters: usize,
    /// Skip zero rows that already satisfy their KKT conditions during the
    /// greedy phase of an outer iteration.
    pub shrink: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-3,
            max_outer_iters: 10_000,
            shrink: true,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolverConfig {
            tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::input(format!("solver tol must be > 0, got {}", self.tol)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::input("max_outer_iters must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// Iteration budget exhausted; the solution is the best point reached.
    NotConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// `(n + mL) x L` dual variables.
    pub alpha: Array2<f64>,
    /// `W(alpha)`.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// `W` at the start of every outer iteration, plus the final value.
    pub objective_trace: Vec<f64>,
}

impl DualSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

fn check_shapes(alpha: &Array2<f64>, gram: &GramMatrix, e: &Array2<f64>) -> Result<()> {
    let n = alpha.nrows();
    if gram.size() != n || e.nrows() != n || e.ncols() != alpha.ncols() {
        return Err(Error::input(format!(
            "shape mismatch: alpha {}x{}, gram {}x{}, e {}x{}",
            n,
            alpha.ncols(),
            gram.size(),
            gram.size(),
            e.nrows(),
            e.ncols()
        )));
    }
    Ok(())
}

/// `W(alpha)` of the dual.
pub fn dual_objective(alpha: &Array2<f64>, gram: &GramMatrix, e: &Array2<f64>) -> Result<f64> {
    check_shapes(alpha, gram, e)?;
    let ka = gram.values().dot(alpha);
    let quad: f64 = alpha.iter().zip(ka.iter()).map(|(a, k)| a * k).sum();
    let lin: f64 = alpha.iter().zip(e.iter()).map(|(a, b)| a * b).sum();
    Ok(-0.5 * quad - lin)
}

/// `G_il = sum_j alpha_jl K_ij + e_il`; the partial derivative of `W` in
/// `alpha_il` is `-G_il`.
pub fn row_gradient(
    alpha: &Array2<f64>,
    gram: &GramMatrix,
    e: &Array2<f64>,
    i: usize,
) -> Result<Vec<f64>> {
    check_shapes(alpha, gram, e)?;
    if i >= alpha.nrows() {
        return Err(Error::input(format!("row {i} out of range")));
    }
    let k_row = gram.values().row(i);
    Ok((0..alpha.ncols())
        .map(|l| k_row.dot(&alpha.column(l)) + e[[i, l]])
        .collect())
}

fn upper_bound(l: usize, y: usize, cost: f64) -> f64 {
    if l == y {
        cost
    } else {
        0.0
    }
}

fn effective_diag(k_ii: f64) -> Result<f64> {
    let k = if k_ii <= DEGENERATE_DIAG {
        k_ii + 1e-12 * (1.0 + k_ii.abs())
    } else {
        k_ii
    };
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::numeric(
            format!("row curvature {k_ii} is not positive"),
            None,
        ));
    }
    Ok(k)
}

/// Euclidean projection of `v` onto `{a : sum a = 0, a <= u}`.
///
/// The solution is `a_l = min(u_l, v_l - theta)`; `theta` is found by
/// sorting the breakpoints `v_l - u_l` and locating the linear piece that
/// contains the root of `sum_l a_l(theta)`.
fn project_zero_sum_capped(v: &[f64], u: &[f64]) -> Vec<f64> {
    let l = v.len();
    let mut order: Vec<usize> = (0..l).collect();
    let d: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - b).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));

    let mut free_sum = 0.0;
    let mut capped_sum: f64 = u.iter().sum();
    let mut theta = f64::NAN;
    for k in 0..l {
        let idx = order[k];
        free_sum += v[idx];
        capped_sum -= u[idx];
        let t = (free_sum + capped_sum) / (k + 1) as f64;
        let next = if k + 1 < l { d[order[k + 1]] } else { f64::INFINITY };
        if t <= next {
            theta = t;
            break;
        }
    }
    v.iter()
        .zip(u)
        .map(|(&vl, &ul)| ul.min(vl - theta))
        .collect()
}

/// Exact minimiser of one row's sub-problem with the other rows frozen.
///
/// `g` is the row's current gradient `G_i`, `alpha_i` its current value.
/// The returned row minimises `g.(a - alpha_i) + k_ii/2 |a - alpha_i|^2`
/// over `sum a = 0`, `a_{y} <= cost`, `a_l <= 0` otherwise.
pub fn solve_subproblem(
    g: &[f64],
    k_ii: f64,
    y_i: usize,
    cost_i: f64,
    alpha_i: &[f64],
) -> Result<Vec<f64>> {
    let l = g.len();
    if alpha_i.len() != l || y_i >= l {
        return Err(Error::input("sub-problem shape mismatch"));
    }
    if cost_i < 0.0 {
        return Err(Error::input(format!("negative cost {cost_i}")));
    }
    if cost_i == 0.0 {
        return Ok(vec![0.0; l]);
    }
    let k = effective_diag(k_ii)?;
    let v: Vec<f64> = alpha_i.iter().zip(g).map(|(a, gl)| a - gl / k).collect();
    let u: Vec<f64> = (0..l).map(|q| upper_bound(q, y_i, cost_i)).collect();
    Ok(project_zero_sum_capped(&v, &u))
}

/// KKT violation of one row: the gap between the largest gradient entry
/// and the smallest gradient entry among coordinates below their cap.
fn row_violation(g: ArrayView1<f64>, a: ArrayView1<f64>, y: usize, cost: f64) -> f64 {
    let mut max_g = f64::NEG_INFINITY;
    let mut min_free = f64::INFINITY;
    for l in 0..g.len() {
        max_g = max_g.max(g[l]);
        if a[l] < upper_bound(l, y, cost) {
            min_free = min_free.min(g[l]);
        }
    }
    if min_free.is_finite() {
        (max_g - min_free).max(0.0)
    } else {
        0.0
    }
}

/// Largest per-row KKT violation of `alpha` for `problem`.
pub fn kkt_residual(problem: &AugmentedProblem, gram: &GramMatrix, alpha: &Array2<f64>) -> Result<f64> {
    check_shapes(alpha, gram, &problem.e)?;
    let grad = gram.values().dot(alpha) + &problem.e;
    Ok((0..problem.n_rows())
        .map(|i| row_violation(grad.row(i), alpha.row(i), problem.y[i], problem.cost[i]))
        .fold(0.0, f64::max))
}

struct State<'a> {
    problem: &'a AugmentedProblem,
    gram: &'a GramMatrix,
    alpha: Array2<f64>,
    grad: Array2<f64>,
    viol: Vec<f64>,
}

impl<'a> State<'a> {
    fn refresh_gradient(&mut self) {
        self.grad = self.gram.values().dot(&self.alpha) + &self.problem.e;
    }

    fn refresh_violation(&mut self, i: usize) {
        self.viol[i] = row_violation(
            self.grad.row(i),
            self.alpha.row(i),
            self.problem.y[i],
            self.problem.cost[i],
        );
    }

    fn objective(&self) -> f64 {
        let s: f64 = self
            .alpha
            .iter()
            .zip(self.grad.iter().zip(self.problem.e.iter()))
            .map(|(a, (g, e))| a * (g + e))
            .sum();
        -0.5 * s
    }

    /// Solves row `i`'s sub-problem and propagates the change to `grad`.
    fn step(&mut self, i: usize) -> Result<()> {
        let p = self.problem;
        let l = p.n_classes;
        let g: Vec<f64> = self.grad.row(i).to_vec();
        let old: Vec<f64> = self.alpha.row(i).to_vec();
        let new = solve_subproblem(&g, self.gram.get(i, i), p.y[i], p.cost[i], &old)?;
        let delta: Vec<f64> = new.iter().zip(&old).map(|(a, b)| a - b).collect();
        if delta.iter().all(|&d| d == 0.0) {
            return Ok(());
        }
        for q in 0..l {
            self.alpha[[i, q]] = new[q];
        }
        let k_col = self.gram.values().column(i);
        for (j, mut row) in self.grad.rows_mut().into_iter().enumerate() {
            let kji = k_col[j];
            if kji != 0.0 {
                for q in 0..l {
                    row[q] += kji * delta[q];
                }
            }
        }
        Ok(())
    }
}

/// Solves the dual of an augmented problem, starting from `alpha = 0`.
pub fn solve_dual(
    problem: &AugmentedProblem,
    gram: &GramMatrix,
    cfg: &SolverConfig,
) -> Result<DualSolution> {
    cfg.validate()?;
    let n = problem.n_rows();
    let l = problem.n_classes;
    if gram.size() != n {
        return Err(Error::input(format!(
            "gram has {} rows, problem has {n}",
            gram.size()
        )));
    }
    if problem.e.dim() != (n, l) || problem.cost.len() != n {
        return Err(Error::input("inconsistent augmented problem"));
    }

    let mut st = State {
        problem,
        gram,
        alpha: Array2::zeros((n, l)),
        grad: problem.e.clone(),
        viol: vec![0.0; n],
    };
    let mut trace = Vec::new();

    for it in 1..=cfg.max_outer_iters {
        if it > 1 {
            st.refresh_gradient();
        }
        for i in 0..n {
            st.refresh_violation(i);
        }
        trace.push(st.objective());
        let worst = st.viol.iter().copied().fold(0.0, f64::max);
        if worst <= cfg.tol {
            return Ok(DualSolution {
                objective: st.objective(),
                alpha: st.alpha,
                kkt_residual: worst,
                iterations: it,
                status: SolveStatus::Converged,
                objective_trace: trace,
            });
        }

        let active: Vec<usize> = (0..n)
            .filter(|&i| problem.cost[i] > 0.0)
            .filter(|&i| {
                !(cfg.shrink
                    && st.viol[i] <= cfg.tol
                    && st.alpha.row(i).iter().all(|&a| a == 0.0))
            })
            .collect();

        // greedy phase: most violating active row
        for _ in 0..active.len() {
            let (best, v) = active
                .iter()
                .map(|&i| (i, st.viol[i]))
                .fold((usize::MAX, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == usize::MAX || v <= cfg.tol {
                break;
            }
            st.step(best)?;
            for &i in &active {
                st.refresh_violation(i);
            }
        }

        // full sweep over every row still violating
        for i in 0..n {
            st.refresh_violation(i);
            if st.viol[i] > cfg.tol {
                st.step(i)?;
            }
        }
    }

    st.refresh_gradient();
    for i in 0..n {
        st.refresh_violation(i);
    }
    let worst = st.viol.iter().copied().fold(0.0, f64::max);
    let objective = st.objective();
    trace.push(objective);
    let status = if worst <= cfg.tol {
        SolveStatus::Converged
    } else {
        log::warn!(
            "solver stopped after {} outer iterations with KKT residual {worst:.3e}",
            cfg.max_outer_iters
        );
        SolveStatus::NotConverged
    };
    Ok(DualSolution {
        alpha: st.alpha,
        objective,
        kkt_residual: worst,
        iterations: cfg.max_outer_iters,
        status,
        objective_trace: trace,
    })
}
