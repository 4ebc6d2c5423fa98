//! Span-based leave-one-out bound.
//!
//! For a Type-1 support vector `t`, the span `S_t^2` is the smallest
//! kernel energy `sum_{i,j} (beta_i . beta_j) K_ij` over `beta` supported on
//! the Type-1 rows with `beta_t = alpha_t` and zero-sum rows. It is read off
//! the inverse of the KKT matrix
//!
//! ```text
//! H = [ K_sv1 (x) I_L   A^T ]      A = I_|sv1| (x) 1_L^T
//!     [ A               0   ]
//! ```
//!
//! as `alpha_t^T [(H^-1)_tt]^+ alpha_t`. The `L x L` block `(H^-1)_tt`
//! always annihilates the all-ones direction, so the pseudo-inverse is taken
//! on the zero-sum subspace.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::AugmentedProblem;
use crate::error::{Error, Result};
use crate::kernel::GramMatrix;
use crate::model::{argmax, categorize_svs, SvPartition};
use crate::solver::{solve_dual, DualSolution, SolverConfig};

/// Pivot ratio above which the unregularised factorisation is rejected.
const MAX_PIVOT_RATIO: f64 = 1e13;

#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    pub matrix: DMatrix<f64>,
    pub n_sv: usize,
    pub n_classes: usize,
}

impl HMatrix {
    /// First row/column of support vector `pos`'s block.
    pub fn block_start(&self, pos: usize) -> usize {
        pos * self.n_classes
    }

    pub fn size(&self) -> usize {
        self.n_sv * (self.n_classes + 1)
    }
}

/// Builds `H` from the Type-1 kernel matrix, or `None` when there are no
/// Type-1 support vectors.
pub fn build_h(k_sv1: &GramMatrix, n_classes: usize) -> Option<HMatrix> {
    let s = k_sv1.size();
    if s == 0 || n_classes == 0 {
        return None;
    }
    let l = n_classes;
    let size = s * (l + 1);
    let mut h = DMatrix::zeros(size, size);
    for i in 0..s {
        for j in 0..s {
            let k = k_sv1.get(i, j);
            for q in 0..l {
                h[(i * l + q, j * l + q)] = k;
            }
        }
        for q in 0..l {
            h[(i * l + q, s * l + i)] = 1.0;
            h[(s * l + i, i * l + q)] = 1.0;
        }
    }
    Some(HMatrix {
        matrix: h,
        n_sv: s,
        n_classes: l,
    })
}

fn pivot_ratio(lu: &LU<f64, Dyn, Dyn>) -> f64 {
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// One factorisation of `H`, reused for every span.
pub struct SpanSolver {
    lu: LU<f64, Dyn, Dyn>,
    n_sv: usize,
    n_classes: usize,
    /// Amount added to the kernel block's diagonal (0 when none was needed).
    pub regularization: f64,
    /// Pivot-ratio condition estimate of the factorised matrix.
    pub condition_estimate: f64,
}

impl SpanSolver {
    /// Factorises `H`. If the plain matrix is singular or too badly
    /// conditioned, `1e-10 (1 + mean diag K)` is added to the kernel block's
    /// diagonal and the factorisation is retried.
    pub fn new(h: &HMatrix) -> Result<Self> {
        let lu = h.matrix.clone().lu();
        let ratio = pivot_ratio(&lu);
        if lu.is_invertible() && ratio < MAX_PIVOT_RATIO {
            return Ok(SpanSolver {
                lu,
                n_sv: h.n_sv,
                n_classes: h.n_classes,
                regularization: 0.0,
                condition_estimate: ratio,
            });
        }
        let sl = h.n_sv * h.n_classes;
        let mean_diag = (0..sl).map(|i| h.matrix[(i, i)]).sum::<f64>() / sl as f64;
        let reg = 1e-10 * (1.0 + mean_diag.abs());
        let mut m = h.matrix.clone();
        for i in 0..sl {
            m[(i, i)] += reg;
        }
        let lu = m.lu();
        let ratio = pivot_ratio(&lu);
        if !lu.is_invertible() || !ratio.is_finite() || ratio > 1e16 {
            return Err(Error::numeric(
                "span matrix is singular after regularisation",
                Some(ratio),
            ));
        }
        Ok(SpanSolver {
            lu,
            n_sv: h.n_sv,
            n_classes: h.n_classes,
            regularization: reg,
            condition_estimate: ratio,
        })
    }

    /// `(H^-1)_tt` for the support vector at position `pos`.
    pub fn inverse_block(&self, pos: usize) -> Result<DMatrix<f64>> {
        if pos >= self.n_sv {
            return Err(Error::input(format!("support position {pos} out of range")));
        }
        let l = self.n_classes;
        let size = self.n_sv * (l + 1);
        let start = pos * l;
        let mut block = DMatrix::zeros(l, l);
        for q in 0..l {
            let mut e = DVector::zeros(size);
            e[start + q] = 1.0;
            let col = self.lu.solve(&e).ok_or_else(|| {
                Error::numeric("span matrix solve failed", Some(self.condition_estimate))
            })?;
            for r in 0..l {
                block[(r, q)] = col[start + r];
            }
        }
        Ok(block)
    }

    /// `S_t^2` for the support vector at position `pos` with dual row
    /// `alpha_t`.
    pub fn span(&self, pos: usize, alpha_t: &[f64]) -> Result<f64> {
        let l = self.n_classes;
        if alpha_t.len() != l {
            return Err(Error::input("dual row length differs from L"));
        }
        let total: f64 = alpha_t.iter().sum();
        let scale: f64 = alpha_t.iter().map(|a| a.abs()).sum::<f64>();
        if total.abs() > 1e-8 * (1.0 + scale) {
            return Err(Error::input(format!("dual row sums to {total}, not zero")));
        }
        if alpha_t.iter().all(|&a| a == 0.0) {
            return Ok(0.0);
        }
        let block = self.inverse_block(pos)?;
        let block = (&block + block.transpose()) * 0.5;
        // restrict to the zero-sum subspace and lift the ones direction:
        // (P M P + J)^-1 = (P M P)^+ + J
        let j = DMatrix::from_element(l, l, 1.0 / l as f64);
        let p = DMatrix::identity(l, l) - &j;
        let lifted = &p * block * &p + &j;
        let a = DVector::from_column_slice(alpha_t);
        let z = lifted.lu().solve(&a).ok_or_else(|| {
            Error::numeric(
                "inverse block is singular on the zero-sum subspace",
                Some(self.condition_estimate),
            )
        })?;
        Ok(a.dot(&z))
    }
}

/// `S_t^2` from an explicit `H`; factorises on every call. Use
/// [`SpanSolver`] directly to share the factorisation across `t`.
pub fn span_formula(h: &HMatrix, alpha_t: &[f64], t: usize) -> Result<f64> {
    SpanSolver::new(h)?.span(t, alpha_t)
}

/// Reference value of `S_t^2` by solving the equality-constrained
/// minimisation directly.
///
/// Unknowns are the dual rows of every Type-1 vector except `t`, laid out
/// class-major, plus one multiplier per row for its zero-sum constraint.
/// The KKT system is solved by SVD so a rank-deficient kernel still yields
/// a minimiser.
pub fn span_qp_oracle(k_sv1: &GramMatrix, alphas_sv1: &Array2<f64>, t: usize) -> Result<f64> {
    let s = k_sv1.size();
    let l = alphas_sv1.ncols();
    if alphas_sv1.nrows() != s || t >= s {
        return Err(Error::input("oracle inputs have inconsistent shapes"));
    }
    let at: Vec<f64> = alphas_sv1.row(t).to_vec();
    let ktt = k_sv1.get(t, t);
    let fixed: f64 = ktt * at.iter().map(|a| a * a).sum::<f64>();
    let others: Vec<usize> = (0..s).filter(|&i| i != t).collect();
    let r = others.len();
    if r == 0 {
        return Ok(fixed);
    }
    let nv = r * l;
    let var = |q: usize, a: usize| q * r + a;
    let dim = nv + r;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for q in 0..l {
        for (a, &i) in others.iter().enumerate() {
            for (b, &j) in others.iter().enumerate() {
                kkt[(var(q, a), var(q, b))] = k_sv1.get(i, j);
            }
            rhs[var(q, a)] = -k_sv1.get(i, t) * at[q];
            kkt[(var(q, a), nv + a)] = 1.0;
            kkt[(nv + a, var(q, a))] = 1.0;
        }
    }
    let svd = kkt.clone().svd(true, true);
    let sol = svd
        .solve(&rhs, 1e-13 * svd.singular_values.max())
        .map_err(|e| Error::numeric(format!("oracle solve failed: {e}"), None))?;
    let resid = (&kkt * &sol - &rhs).norm();
    if resid > 1e-8 * (1.0 + rhs.norm()) {
        let smin = svd.singular_values.min();
        return Err(Error::numeric(
            format!("oracle KKT system is inconsistent (residual {resid:.3e})"),
            Some(svd.singular_values.max() / smin),
        ));
    }
    let mut value = fixed;
    for q in 0..l {
        for (a, &i) in others.iter().enumerate() {
            let beta_iq = sol[var(q, a)];
            value += 2.0 * beta_iq * k_sv1.get(i, t) * at[q];
            for (b, &j) in others.iter().enumerate() {
                value += beta_iq * sol[var(q, b)] * k_sv1.get(i, j);
            }
        }
    }
    Ok(value)
}

/// Result of the span bound computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub n_train: usize,
    /// Training rows that are Type-1 support vectors.
    pub sv1_train: Vec<usize>,
    pub sv1_total: usize,
    pub sv2_train_count: usize,
    /// `S_t^2` per entry of `sv1_train`; `None` when the span failed.
    pub span_values: Vec<Option<f64>>,
    /// `alpha_t . f(x_t)` per entry of `sv1_train`.
    pub rhs_values: Vec<f64>,
    pub flagged: Vec<bool>,
    pub failures: Vec<SpanFailure>,
    pub bound: f64,
    pub assumption2_fraction: f64,
    pub regularization: f64,
    pub condition_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanFailure {
    pub row: usize,
    pub message: String,
}

/// Upper bound on the leave-one-out error: the Type-1 training vectors
/// whose span is at least their decision alignment, plus every Type-2
/// training vector, over `n`. Failed span evaluations count toward the
/// bound.
pub fn loo_bound(
    solution: &DualSolution,
    partition: &SvPartition,
    gram: &GramMatrix,
    problem: &AugmentedProblem,
) -> Result<SpanReport> {
    let n_rows = problem.n_rows();
    if solution.alpha.nrows() != n_rows || gram.size() != n_rows {
        return Err(Error::input("solution, gram and problem sizes differ"));
    }
    let n = problem.n_train;
    let alpha = &solution.alpha;
    let l = problem.n_classes;

    let sv1_train: Vec<usize> = partition
        .sv1
        .iter()
        .copied()
        .filter(|&i| problem.is_train_row(i))
        .collect();
    let sv2_train_count = partition
        .sv2
        .iter()
        .filter(|&&i| problem.is_train_row(i))
        .count();

    let mut span_values = Vec::with_capacity(sv1_train.len());
    let mut rhs_values = Vec::with_capacity(sv1_train.len());
    let mut flagged = Vec::with_capacity(sv1_train.len());
    let mut failures = Vec::new();
    let mut regularization = 0.0;
    let mut condition_estimate = None;

    let solver = match build_h(&gram.restrict(&partition.sv1), l) {
        Some(h) => match SpanSolver::new(&h) {
            Ok(s) => {
                regularization = s.regularization;
                condition_estimate = Some(s.condition_estimate);
                Ok(s)
            }
            Err(e) => Err(e.to_string()),
        },
        None => Err("no Type-1 support vectors".to_owned()),
    };

    for &t in &sv1_train {
        let pos = partition.sv1.iter().position(|&i| i == t).expect("t in sv1");
        let at: Vec<f64> = alpha.row(t).to_vec();
        let rhs: f64 = (0..l)
            .map(|q| {
                let f_q: f64 = (0..n_rows).map(|i| alpha[[i, q]] * gram.get(i, t)).sum();
                at[q] * f_q
            })
            .sum();
        rhs_values.push(rhs);
        let span = match &solver {
            Ok(s) => s.span(pos, &at).map_err(|e| e.to_string()),
            Err(msg) => Err(msg.clone()),
        };
        match span {
            Ok(v) => {
                flagged.push(v >= rhs);
                span_values.push(Some(v));
            }
            Err(message) => {
                flagged.push(true);
                span_values.push(None);
                failures.push(SpanFailure { row: t, message });
            }
        }
    }

    let count = flagged.iter().filter(|&&f| f).count() + sv2_train_count;
    let bound = if n == 0 { 0.0 } else { count as f64 / n as f64 };
    Ok(SpanReport {
        n_train: n,
        sv1_total: partition.sv1.len(),
        sv1_train,
        sv2_train_count,
        span_values,
        rhs_values,
        flagged,
        failures,
        bound,
        assumption2_fraction: check_assumption2(solution, partition, partition.sv_eps),
        regularization,
        condition_estimate,
    })
}

/// Fraction of Type-1 support vectors whose dual row has exactly two
/// entries above `sv_eps` in magnitude. 1 when there are none.
pub fn check_assumption2(solution: &DualSolution, partition: &SvPartition, sv_eps: f64) -> f64 {
    if partition.sv1.is_empty() {
        return 1.0;
    }
    let two_active = partition
        .sv1
        .iter()
        .filter(|&&i| {
            solution
                .alpha
                .row(i)
                .iter()
                .filter(|a| a.abs() > sv_eps)
                .count()
                == 2
        })
        .count();
    two_active as f64 / partition.sv1.len() as f64
}

/// Exact leave-one-out result from retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub n_train: usize,
    pub error_rate: f64,
    /// Per training row: misclassified when left out.
    pub errors: Vec<bool>,
    /// Per training row: the Type-1/Type-2 sets of the other rows were
    /// unchanged by leaving it out.
    pub sv_sets_preserved: Vec<bool>,
    pub converged: Vec<bool>,
    pub all_converged: bool,
}

impl LooReport {
    pub fn assumption1_holds(&self) -> bool {
        self.sv_sets_preserved.iter().all(|&b| b)
    }
}

/// Retrains once per training row with that row's duals pinned at zero and
/// classifies the held-out row.
pub fn exact_loo(
    problem: &AugmentedProblem,
    gram: &GramMatrix,
    cfg: &SolverConfig,
) -> Result<LooReport> {
    let n = problem.n_train;
    let n_rows = problem.n_rows();
    let max_cost = problem.cost.iter().copied().fold(0.0, f64::max);
    let sv_eps = 1e-8 * max_cost;
    let reference = solve_dual(problem, gram, cfg)?;
    let ref_part = categorize_svs(&reference.alpha, &problem.cost, &problem.y, sv_eps);
    let without = |v: &[usize], t: usize| -> Vec<usize> {
        v.iter().copied().filter(|&i| i != t).collect()
    };

    let mut errors = Vec::with_capacity(n);
    let mut preserved = Vec::with_capacity(n);
    let mut converged = Vec::with_capacity(n);
    for t in 0..n {
        let dropped = problem.with_row_dropped(t);
        let sol = solve_dual(&dropped, gram, cfg)?;
        let f: Vec<f64> = (0..problem.n_classes)
            .map(|q| (0..n_rows).map(|i| sol.alpha[[i, q]] * gram.get(i, t)).sum())
            .collect();
        errors.push(argmax(&f) != problem.y[t]);
        let part = categorize_svs(&sol.alpha, &dropped.cost, &dropped.y, sv_eps);
        preserved.push(
            without(&part.sv1, t) == without(&ref_part.sv1, t)
                && without(&part.sv2, t) == without(&ref_part.sv2, t),
        );
        converged.push(sol.converged());
    }
    let wrong = errors.iter().filter(|&&e| e).count();
    Ok(LooReport {
        n_train: n,
        error_rate: if n == 0 { 0.0 } else { wrong as f64 / n as f64 },
        errors,
        sv_sets_preserved: preserved,
        all_converged: converged.iter().all(|&c| c) && reference.converged(),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn gram_of(v: Array2<f64>) -> GramMatrix {
        GramMatrix::from_values(v).unwrap()
    }

    #[test]
    fn h_single_sv_two_classes() {
        let h = build_h(&gram_of(array![[2.0]]), 2).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 2.0, 1.0, 1.0, 1.0, 0.0]);
        assert_eq!(h.matrix, expect);
    }

    #[test]
    fn h_size_and_symmetry() {
        let h = build_h(&gram_of(array![[1.0, 0.3], [0.3, 1.0]]), 3).unwrap();
        assert_eq!(h.matrix.shape(), (8, 8));
        assert_eq!(h.matrix, h.matrix.transpose());
        assert_eq!(h.matrix[(0, 3)], 0.3);
        assert_eq!(h.matrix[(0, 4)], 0.0);
        assert_eq!(h.matrix[(6, 0)], 1.0);
        assert_eq!(h.matrix[(6, 3)], 0.0);
    }

    #[test]
    fn h_empty() {
        assert!(build_h(&gram_of(Array2::zeros((0, 0))), 3).is_none());
    }

    #[test]
    fn single_sv_span_is_analytic() {
        let k = gram_of(array![[2.0]]);
        let h = build_h(&k, 2).unwrap();
        let solver = SpanSolver::new(&h).unwrap();
        let block = solver.inverse_block(0).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((block - expect).abs().max() < 1e-15);
        let s = span_formula(&h, &[0.5, -0.5], 0).unwrap();
        assert!((s - 1.0).abs() < 1e-10, "{s}");
        let o = span_qp_oracle(&k, &array![[0.5, -0.5]], 0).unwrap();
        assert_eq!(o, 1.0);
    }

    #[test]
    fn zero_row_has_zero_span() {
        let h = build_h(&gram_of(array![[1.0, 0.2], [0.2, 1.0]]), 3).unwrap();
        assert_eq!(span_formula(&h, &[0.0, 0.0, 0.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn non_zero_sum_row_is_rejected() {
        let h = build_h(&gram_of(array![[1.0]]), 2).unwrap();
        assert!(span_formula(&h, &[0.5, 0.5], 0).is_err());
    }

    #[test]
    fn formula_matches_oracle_small() {
        let k = gram_of(array![[1.0, 0.4, 0.1], [0.4, 1.0, 0.3], [0.1, 0.3, 1.0]]);
        let alphas = array![[0.3, -0.3, 0.0], [-0.2, 0.5, -0.3], [0.0, -0.1, 0.1]];
        let h = build_h(&k, 3).unwrap();
        let solver = SpanSolver::new(&h).unwrap();
        for t in 0..3 {
            let at = alphas.row(t).to_vec();
            let a = solver.span(t, &at).unwrap();
            let b = span_qp_oracle(&k, &alphas, t).unwrap();
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12), "{a} vs {b}");
            let trivial = k.get(t, t) * at.iter().map(|v| v * v).sum::<f64>();
            assert!(b <= trivial + 1e-12);
        }
    }

    #[test]
    fn duplicate_rows_trigger_regularisation() {
        let k = gram_of(array![[1.0, 1.0, 0.2], [1.0, 1.0, 0.2], [0.2, 0.2, 1.0]]);
        let h = build_h(&k, 2).unwrap();
        let solver = SpanSolver::new(&h).unwrap();
        assert!(solver.regularization > 0.0);
        let s = solver.span(2, &[0.4, -0.4]).unwrap();
        let o = span_qp_oracle(&k, &array![[0.1, -0.1], [-0.1, 0.1], [0.4, -0.4]], 2).unwrap();
        assert!((s - o).abs() < 1e-6 * o.abs().max(1e-12), "{s} vs {o}");
    }

    #[test]
    fn assumption2_counts() {
        let sol = DualSolution {
            alpha: array![[0.6, -0.3, -0.3], [0.5, -0.5, 0.0], [0.0, 0.0, 0.0]],
            objective: 0.0,
            kkt_residual: 0.0,
            iterations: 1,
            status: crate::solver::SolveStatus::Converged,
            objective_trace: vec![],
        };
        let part = SvPartition {
            sv1: vec![0, 1],
            sv2: vec![],
            non_sv: vec![2],
            sv_eps: 1e-8,
        };
        assert_eq!(check_assumption2(&sol, &part, 1e-8), 0.5);
        let binary = DualSolution {
            alpha: array![[0.2, -0.2], [0.7, -0.7]],
            ..sol.clone()
        };
        let part = SvPartition {
            sv1: vec![0, 1],
            sv2: vec![],
            non_sv: vec![],
            sv_eps: 1e-8,
        };
        assert_eq!(check_assumption2(&binary, &part, 1e-8), 1.0);
    }
}
