//! Trained models, prediction, evaluation and support-vector categories.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{augment, AugmentedProblem, CstarSpec, Dataset, LabelMap};
use crate::error::{Error, Result};
use crate::kernel::{kernel_column, GramMatrix, KernelKind, KernelSpec};
use crate::solver::{solve_dual, DualSolution, SolverConfig};

/// Hyper-parameters of a single training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub kernel: KernelSpec,
    pub c: f64,
    pub cstar: CstarSpec,
    pub delta: f64,
}

impl TrainParams {
    /// Plain multiclass SVM (`C* = 0`).
    pub fn plain(kernel: KernelSpec, c: f64) -> Self {
        TrainParams {
            kernel,
            c,
            cstar: CstarSpec::Fixed(0.0),
            delta: 0.0,
        }
    }
}

/// What a model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub c: f64,
    pub cstar: f64,
    /// [`Dataset::content_hash`] of the training data.
    pub data_hash: String,
}

/// A trained classifier: the rows with nonzero dual variables and their
/// dual rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kernel: KernelSpec,
    pub label_map: LabelMap,
    pub train_meta: TrainMeta,
    pub dim: usize,
    pub support_vectors: Array2<f64>,
    pub support_alpha: Array2<f64>,
    /// Row index of each support vector in the augmented problem.
    pub support_index: Vec<usize>,
}

impl Model {
    /// Keeps every row whose dual row is not identically zero, so decision
    /// values are unchanged by the pruning.
    pub fn from_solution(
        problem: &AugmentedProblem,
        solution: &DualSolution,
        kernel: KernelSpec,
        label_map: LabelMap,
        train_meta: TrainMeta,
    ) -> Model {
        let keep: Vec<usize> = (0..problem.n_rows())
            .filter(|&i| solution.alpha.row(i).iter().any(|&a| a != 0.0))
            .collect();
        let d = problem.x.ncols();
        let l = problem.n_classes;
        let mut sv = Array2::zeros((keep.len(), d));
        let mut sa = Array2::zeros((keep.len(), l));
        for (r, &i) in keep.iter().enumerate() {
            sv.row_mut(r).assign(&problem.x.row(i));
            sa.row_mut(r).assign(&solution.alpha.row(i));
        }
        Model {
            kernel,
            label_map,
            train_meta,
            dim: d,
            support_vectors: sv,
            support_alpha: sa,
            support_index: keep,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn n_support(&self) -> usize {
        self.support_index.len()
    }

    /// `f_l(x) = sum_i alpha_il K(x_i, x)`.
    pub fn decision_values(&self, x: ArrayView1<f64>) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::input(format!(
                "point has dimension {}, model expects {}",
                x.len(),
                self.dim
            )));
        }
        let l = self.n_classes();
        if self.n_support() == 0 {
            return Ok(vec![0.0; l]);
        }
        let k = kernel_column(&self.kernel, self.support_vectors.view(), x)?;
        Ok((0..l)
            .map(|q| {
                k.iter()
                    .zip(self.support_alpha.column(q))
                    .map(|(kv, a)| kv * a)
                    .sum()
            })
            .collect())
    }

    /// Internal class index of the largest decision value.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<usize> {
        Ok(argmax(&self.decision_values(x)?))
    }

    pub fn predict_label(&self, x: ArrayView1<f64>) -> Result<&str> {
        Ok(self.label_map.name(self.predict(x)?))
    }

    pub fn predict_all(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        x.rows().into_iter().map(|r| self.predict(r)).collect()
    }

    /// Fraction of misclassified samples.
    pub fn evaluate(&self, x: ArrayView2<f64>, y: &[usize]) -> Result<f64> {
        if x.nrows() == 0 {
            return Err(Error::input("empty test set"));
        }
        if x.nrows() != y.len() {
            return Err(Error::input(format!(
                "{} test rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        let wrong = self
            .predict_all(x)?
            .iter()
            .zip(y)
            .filter(|(p, t)| p != t)
            .count();
        Ok(wrong as f64 / y.len() as f64)
    }

    /// Dual variables for all `rows` of the augmented problem, zero where
    /// the model stores nothing.
    pub fn full_alpha(&self, rows: usize) -> Result<Array2<f64>> {
        let mut alpha = Array2::zeros((rows, self.n_classes()));
        for (r, &i) in self.support_index.iter().enumerate() {
            if i >= rows {
                return Err(Error::input(format!(
                    "support index {i} outside a problem of {rows} rows"
                )));
            }
            alpha.row_mut(i).assign(&self.support_alpha.row(r));
        }
        Ok(alpha)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            kernel: self.kernel.kind,
            gamma: self.kernel.gamma,
            n_classes: self.n_classes(),
            dim: self.dim,
            label_map: self.label_map.clone(),
            train_meta: self.train_meta.clone(),
            support_index: self.support_index.clone(),
            support_vectors: rows_of(&self.support_vectors),
            alpha: rows_of(&self.support_alpha),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Model> {
        let f: ModelFile = serde_json::from_str(s)?;
        let kernel = KernelSpec {
            kind: f.kernel,
            gamma: f.gamma,
        };
        kernel.validate()?;
        if f.label_map.len() != f.n_classes {
            return Err(Error::input("label_map length differs from L"));
        }
        let n_sv = f.support_index.len();
        let support_vectors = matrix_of(&f.support_vectors, n_sv, f.dim, "support_vectors")?;
        let support_alpha = matrix_of(&f.alpha, n_sv, f.n_classes, "alpha")?;
        Ok(Model {
            kernel,
            label_map: f.label_map,
            train_meta: f.train_meta,
            dim: f.dim,
            support_vectors,
            support_alpha,
            support_index: f.support_index,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_json(&s)
    }
}

/// On-disk model layout.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    kernel: KernelKind,
    gamma: f64,
    #[serde(rename = "L")]
    n_classes: usize,
    dim: usize,
    label_map: LabelMap,
    train_meta: TrainMeta,
    support_index: Vec<usize>,
    support_vectors: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix_of(rows: &[Vec<f64>], n: usize, width: usize, what: &str) -> Result<Array2<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != width) {
        return Err(Error::input(format!(
            "model field '{what}' must be {n} rows of {width} values"
        )));
    }
    Ok(Array2::from_shape_vec((n, width), rows.concat()).expect("checked"))
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Support-vector categories of a dual solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvPartition {
    /// Rows with `0 < alpha_{i,y_i} < C_i` (on the margin).
    pub sv1: Vec<usize>,
    /// Rows with `alpha_{i,y_i} = C_i` (at the cap).
    pub sv2: Vec<usize>,
    pub non_sv: Vec<usize>,
    pub sv_eps: f64,
}

/// The tolerance band used for the category boundaries.
pub fn default_sv_eps(c: f64, cstar: f64) -> f64 {
    1e-8 * c.max(cstar)
}

/// Splits rows by their own-label dual variable.
pub fn categorize_svs(
    alpha: &Array2<f64>,
    costs: &[f64],
    labels: &[usize],
    sv_eps: f64,
) -> SvPartition {
    let mut p = SvPartition {
        sv1: Vec::new(),
        sv2: Vec::new(),
        non_sv: Vec::new(),
        sv_eps,
    };
    for (i, (&c, &y)) in costs.iter().zip(labels).enumerate() {
        let a = alpha[[i, y]];
        if a >= c - sv_eps && a > sv_eps {
            p.sv2.push(i);
        } else if a > sv_eps {
            p.sv1.push(i);
        } else {
            p.non_sv.push(i);
        }
    }
    p
}

/// Everything produced by one training run.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    pub problem: AugmentedProblem,
    pub gram: GramMatrix,
    pub solution: DualSolution,
}

impl Fitted {
    pub fn partition(&self) -> SvPartition {
        let eps = default_sv_eps(self.model.train_meta.c, self.model.train_meta.cstar);
        categorize_svs(&self.solution.alpha, &self.problem.cost, &self.problem.y, eps)
    }
}

/// Augments, builds the Gram matrix and solves.
pub fn fit(ds: &Dataset, params: &TrainParams, cfg: &SolverConfig) -> Result<Fitted> {
    let cstar = params
        .cstar
        .resolve(params.c, ds.n_train(), ds.n_universum(), ds.n_classes());
    let problem = augment(ds, params.delta, params.c, cstar)?;
    let gram = problem.gram(&params.kernel)?;
    let solution = solve_dual(&problem, &gram, cfg)?;
    let meta = TrainMeta {
        n: ds.n_train(),
        m: ds.n_universum(),
        delta: params.delta,
        c: params.c,
        cstar,
        data_hash: ds.content_hash(),
    };
    let model = Model::from_solution(&problem, &solution, params.kernel, ds.label_map.clone(), meta);
    Ok(Fitted {
        model,
        problem,
        gram,
        solution,
    })
}
