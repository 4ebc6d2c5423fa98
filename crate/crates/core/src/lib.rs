//! Multiclass support vector machines with universum samples.
//!
//! Training samples and universum samples are folded into one augmented
//! multiclass problem whose dual is solved by row-wise decomposition. A
//! span-based leave-one-out bound scores models without retraining, which
//! drives a two-step model selection.

pub mod cli;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod kernel;
pub mod model;
pub mod select;
pub mod solver;
pub mod span;
pub mod synthetic;

pub use dataset::{augment, AugmentedProblem, CstarSpec, Dataset, LabelMap};
pub use error::{Error, Result};
pub use kernel::{eval_kernel, gram, GramMatrix, KernelKind, KernelSpec};
pub use model::{categorize_svs, fit, Fitted, Model, SvPartition, TrainParams};
pub use select::{select, stratified_kfold, Scoring, SearchGrid, SelectionResult};
pub use solver::{solve_dual, DualSolution, SolveStatus, SolverConfig};
pub use span::{build_h, exact_loo, loo_bound, span_formula, span_qp_oracle, SpanReport};
