//! Two-step model selection.
//!
//! Step a tunes `C` (and `gamma` for rbf) on the plain multiclass SVM. Step
//! b keeps that choice and tunes the universum insensitivity `delta` with
//! `C*` tied to `C` by a fixed ratio. Each grid point is scored either by
//! the span bound or by stratified cross-validation error.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CstarSpec, Dataset};
use crate::error::{Error, Result};
use crate::kernel::{KernelKind, KernelSpec};
use crate::model::{fit, TrainParams};
use crate::solver::SolverConfig;
use crate::span::loo_bound;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    Bound,
    Cv,
}

impl std::str::FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bound" => Ok(Scoring::Bound),
            "cv" => Ok(Scoring::Cv),
            other => Err(Error::input(format!("unknown scoring '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scoring {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scoring::Bound => "bound",
            Scoring::Cv => "cv",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub c_values: Vec<f64>,
    /// Ignored for the linear kernel.
    pub gamma_values: Vec<f64>,
    pub delta_values: Vec<f64>,
    /// `C*` in step b; must be a ratio or `Auto`.
    pub cstar: CstarSpec,
    pub k_folds: usize,
    pub scoring: Scoring,
    pub seed: u64,
}

impl SearchGrid {
    /// The grid used throughout the experiments: `C` in `10^-4..10^3`,
    /// `delta` in `{0, 0.01, 0.05, 0.1}`, automatic `C*/C`, 5 folds.
    pub fn standard(scoring: Scoring, seed: u64) -> Self {
        SearchGrid {
            c_values: (-4..=3).map(|p| 10f64.powi(p)).collect(),
            gamma_values: vec![1.0],
            delta_values: vec![0.0, 0.01, 0.05, 0.1],
            cstar: CstarSpec::Auto,
            k_folds: 5,
            scoring,
            seed,
        }
    }

    pub fn validate(&self, kind: KernelKind) -> Result<()> {
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        if self.c_values.is_empty() || !positive(&self.c_values) {
            return Err(Error::input("C grid must be nonempty and positive"));
        }
        if kind == KernelKind::Rbf && (self.gamma_values.is_empty() || !positive(&self.gamma_values)) {
            return Err(Error::input("gamma grid must be nonempty and positive"));
        }
        if self.delta_values.is_empty()
            || !self.delta_values.iter().all(|&d| d >= 0.0 && d.is_finite())
        {
            return Err(Error::input("delta grid must be nonempty and nonnegative"));
        }
        match self.cstar {
            CstarSpec::Fixed(_) => {
                return Err(Error::input("step b needs a C*/C ratio, not an absolute C*"))
            }
            CstarSpec::Ratio(r) if !(r >= 0.0 && r.is_finite()) => {
                return Err(Error::input("C*/C ratio must be nonnegative"))
            }
            _ => {}
        }
        if self.scoring == Scoring::Cv && self.k_folds < 2 {
            return Err(Error::input("cross-validation needs at least 2 folds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    NotConverged,
    Failed,
}

impl std::fmt::Display for PointStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PointStatus::Ok => "ok",
            PointStatus::NotConverged => "not_converged",
            PointStatus::Failed => "failed",
        })
    }
}

/// Score of one parameter setting. Non-converged or failed points score 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScore {
    pub score: f64,
    pub status: PointStatus,
}

impl PointScore {
    fn worst(status: PointStatus) -> Self {
        PointScore { score: 1.0, status }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub step: String,
    pub c: f64,
    pub gamma: Option<f64>,
    pub delta: f64,
    pub cstar: f64,
    pub score: f64,
    pub status: PointStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepA {
    pub c: f64,
    pub gamma: Option<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepB {
    pub delta: f64,
    pub cstar: f64,
    pub cstar_ratio: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub kernel: KernelKind,
    pub scoring: Scoring,
    pub seed: u64,
    pub k_folds: usize,
    pub step_a: StepA,
    pub step_b: StepB,
    pub scores: Vec<GridPoint>,
    /// Parameters of the final model, with `C*` resolved to an absolute value.
    pub final_params: TrainParams,
}

impl SelectionResult {
    /// Score table as CSV: `step,C,gamma,delta,cstar,score,status`.
    pub fn score_table_csv(&self) -> String {
        let mut out = String::from("step,C,gamma,delta,cstar,score,status\n");
        for p in &self.scores {
            let gamma = p.gamma.map(|g| g.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.step, p.c, gamma, p.delta, p.cstar, p.score, p.status
            );
        }
        out
    }
}

/// Cross-validation splits as `(train, validation)` index lists.
pub type Folds = Vec<(Vec<usize>, Vec<usize>)>;

/// Stratified k-fold split. Each class is shuffled with the seeded
/// generator and dealt round-robin; the dealing position carries over from
/// one class to the next so fold sizes stay balanced overall.
pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<Folds> {
    if k < 2 {
        return Err(Error::input("need at least 2 folds"));
    }
    let counts = ds.class_counts();
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt > 0 && cnt < k {
            return Err(Error::input(format!(
                "class '{}' has {cnt} samples, fewer than {k} folds",
                ds.label_map.name(c)
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0usize; ds.n_train()];
    let mut next = 0usize;
    for c in 0..ds.n_classes() {
        let mut members: Vec<usize> = (0..ds.n_train()).filter(|&i| ds.train_y[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            assign[i] = next % k;
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) =
                (0..ds.n_train()).partition(|&i| assign[i] == f);
            (train, val)
        })
        .collect())
}

/// Trains once on all of `ds` and returns the span bound.
pub fn score_bound(ds: &Dataset, params: &TrainParams, cfg: &SolverConfig) -> PointScore {
    let fitted = match fit(ds, params, cfg) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("grid point failed: {e}");
            return PointScore::worst(PointStatus::Failed);
        }
    };
    if !fitted.solution.converged() {
        log::warn!("grid point C={} delta={} did not converge", params.c, params.delta);
        return PointScore::worst(PointStatus::NotConverged);
    }
    match loo_bound(&fitted.solution, &fitted.partition(), &fitted.gram, &fitted.problem) {
        Ok(r) => PointScore {
            score: r.bound,
            status: PointStatus::Ok,
        },
        Err(e) => {
            log::warn!("span bound failed: {e}");
            PointScore::worst(PointStatus::Failed)
        }
    }
}

/// Mean validation error over the folds. The universum joins every
/// training split and never a validation split.
pub fn score_cv(ds: &Dataset, folds: &Folds, params: &TrainParams, cfg: &SolverConfig) -> PointScore {
    let mut total = 0.0;
    for (train, val) in folds {
        let sub = ds.select_train(train);
        let fitted = match fit(&sub, params, cfg) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("grid point failed: {e}");
                return PointScore::worst(PointStatus::Failed);
            }
        };
        if !fitted.solution.converged() {
            return PointScore::worst(PointStatus::NotConverged);
        }
        let vx = ds.train_x.select(ndarray::Axis(0), val);
        let vy: Vec<usize> = val.iter().map(|&i| ds.train_y[i]).collect();
        match fitted.model.evaluate(vx.view(), &vy) {
            Ok(err) => total += err,
            Err(_) => return PointScore::worst(PointStatus::Failed),
        }
    }
    PointScore {
        score: total / folds.len() as f64,
        status: PointStatus::Ok,
    }
}

fn sorted_unique(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// First strictly smallest score; the candidates come in tie-break order.
fn best_index(scores: &[PointScore]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.score < scores[best].score {
            best = i;
        }
    }
    best
}

/// Runs both selection steps. Ties go to the smaller `C`, then the smaller
/// `gamma`, then the smaller `delta`.
pub fn select(
    ds: &Dataset,
    grid: &SearchGrid,
    kind: KernelKind,
    cfg: &SolverConfig,
) -> Result<SelectionResult> {
    grid.validate(kind)?;
    let deltas = sorted_unique(&grid.delta_values);
    if ds.n_universum() == 0 && deltas.iter().any(|&d| d > 0.0) {
        return Err(Error::input("tuning delta needs universum samples"));
    }
    let folds = match grid.scoring {
        Scoring::Cv => Some(stratified_kfold(ds, grid.k_folds, grid.seed)?),
        Scoring::Bound => None,
    };
    let score = |data: &Dataset, p: &TrainParams| match &folds {
        Some(f) => score_cv(data, f, p, cfg),
        None => score_bound(data, p, cfg),
    };

    let cs = sorted_unique(&grid.c_values);
    let gammas: Vec<Option<f64>> = match kind {
        KernelKind::Linear => vec![None],
        KernelKind::Rbf => sorted_unique(&grid.gamma_values).into_iter().map(Some).collect(),
    };
    let kernel_of = |g: Option<f64>| -> Result<KernelSpec> {
        match g {
            None => Ok(KernelSpec::linear()),
            Some(g) => KernelSpec::rbf(g),
        }
    };

    // step a: plain SVM
    let plain = ds.without_universum();
    let mut a_points = Vec::new();
    for &c in &cs {
        for &g in &gammas {
            a_points.push((c, g, TrainParams::plain(kernel_of(g)?, c)));
        }
    }
    let a_scores: Vec<PointScore> = a_points
        .par_iter()
        .map(|(_, _, p)| score(&plain, p))
        .collect();
    let ia = best_index(&a_scores);
    let (best_c, best_g, best_plain) = a_points[ia];

    // step b: fixed C and kernel, tune delta
    let ratio = grid
        .cstar
        .ratio(best_c, ds.n_train(), ds.n_universum(), ds.n_classes());
    let cstar = ratio * best_c;
    let b_params: Vec<TrainParams> = deltas
        .iter()
        .map(|&delta| TrainParams {
            kernel: best_plain.kernel,
            c: best_c,
            cstar: CstarSpec::Fixed(cstar),
            delta,
        })
        .collect();
    let b_scores: Vec<PointScore> = b_params.par_iter().map(|p| score(ds, p)).collect();
    let ib = best_index(&b_scores);

    let mut scores = Vec::new();
    for ((c, g, _), s) in a_points.iter().zip(&a_scores) {
        scores.push(GridPoint {
            step: "a".into(),
            c: *c,
            gamma: *g,
            delta: 0.0,
            cstar: 0.0,
            score: s.score,
            status: s.status,
        });
    }
    for (p, s) in b_params.iter().zip(&b_scores) {
        scores.push(GridPoint {
            step: "b".into(),
            c: best_c,
            gamma: best_g,
            delta: p.delta,
            cstar,
            score: s.score,
            status: s.status,
        });
    }
    Ok(SelectionResult {
        kernel: kind,
        scoring: grid.scoring,
        seed: grid.seed,
        k_folds: grid.k_folds,
        step_a: StepA {
            c: best_c,
            gamma: best_g,
            score: a_scores[ia].score,
        },
        step_b: StepB {
            delta: deltas[ib],
            cstar,
            cstar_ratio: ratio,
            score: b_scores[ib].score,
        },
        scores,
        final_params: b_params[ib],
    })
}

/// One row of the universum-size sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub errors: Vec<f64>,
    pub seeds: Vec<u64>,
    pub converged: bool,
}

/// Test error as a function of how many universum samples are used.
///
/// For each seed the universum is shuffled once and each size takes a
/// prefix, so larger sizes extend smaller ones. Errors are measured on
/// `test` when given, otherwise on a seeded stratified fifth of the
/// training data that is held out of training.
pub fn universum_size_sweep(
    ds: &Dataset,
    sizes: &[usize],
    params: &TrainParams,
    seeds: &[u64],
    test: Option<(ArrayView2<f64>, &[usize])>,
    cfg: &SolverConfig,
) -> Result<Vec<SweepRow>> {
    let m = ds.n_universum();
    if let Some(&s) = sizes.iter().find(|&&s| s > m) {
        return Err(Error::input(format!("sweep size {s} exceeds the {m} universum samples")));
    }
    if seeds.is_empty() {
        return Err(Error::input("sweep needs at least one seed"));
    }
    let per_seed: Vec<Result<Vec<(f64, bool)>>> = seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<(f64, bool)>> {
            let (train, tx, ty): (Dataset, Array2<f64>, Vec<usize>) = match test {
                Some((x, y)) => (ds.clone(), x.to_owned(), y.to_vec()),
                None => {
                    let folds = stratified_kfold(ds, 5, seed)?;
                    let (tr, val) = &folds[0];
                    (
                        ds.select_train(tr),
                        ds.train_x.select(ndarray::Axis(0), val),
                        val.iter().map(|&i| ds.train_y[i]).collect(),
                    )
                }
            };
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            sizes
                .iter()
                .map(|&s| {
                    let sub = train.select_universum(&order[..s]);
                    let fitted = fit(&sub, params, cfg)?;
                    let err = fitted.model.evaluate(tx.view(), &ty)?;
                    Ok((err, fitted.solution.converged()))
                })
                .collect()
        })
        .collect();
    let per_seed: Vec<Vec<(f64, bool)>> = per_seed.into_iter().collect::<Result<_>>()?;
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(k, &size)| {
            let errors: Vec<f64> = per_seed.iter().map(|r| r[k].0).collect();
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / errors.len() as f64;
            SweepRow {
                size,
                mean_error: mean,
                std_error: var.sqrt(),
                errors,
                seeds: seeds.to_vec(),
                converged: per_seed.iter().all(|r| r[k].1),
            }
        })
        .collect())
}

/// Sweep table as CSV: `size,mean_error,std_error,converged`.
pub fn sweep_table_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("size,mean_error,std_error,converged\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.size, r.mean_error, r.std_error, r.converged);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{auto_ratio, LabelMap};
    use crate::synthetic::SyntheticConfig;
    use ndarray::array;
    use proptest::prelude::*;

    fn labelled(counts: &[usize]) -> Dataset {
        let n: usize = counts.iter().sum();
        let mut y = Vec::new();
        for (c, &k) in counts.iter().enumerate() {
            y.extend(std::iter::repeat(c).take(k));
        }
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        Dataset::new(x, y, Array2::zeros((0, 2)), LabelMap::numbered(counts.len())).unwrap()
    }

    #[test]
    fn auto_ratio_examples() {
        assert!((auto_ratio(300, 500, 3) - 0.2).abs() < 1e-15);
        assert!((auto_ratio(600, 250, 4) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn even_folds() {
        let ds = labelled(&[10, 10, 10]);
        let folds = stratified_kfold(&ds, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        for (train, val) in &folds {
            assert_eq!(val.len(), 6);
            assert_eq!(train.len(), 24);
            for c in 0..3 {
                assert_eq!(val.iter().filter(|&&i| ds.train_y[i] == c).count(), 2);
            }
        }
        assert_eq!(folds, stratified_kfold(&ds, 5, 3).unwrap());
    }

    #[test]
    fn too_few_per_class() {
        assert!(stratified_kfold(&labelled(&[3, 10]), 5, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition(counts in proptest::collection::vec(3usize..12, 2..5), k in 2usize..4, seed in 0u64..1000) {
            let ds = labelled(&counts);
            let folds = stratified_kfold(&ds, k, seed).unwrap();
            let mut seen = vec![0; ds.n_train()];
            for (train, val) in &folds {
                for &i in val { seen[i] += 1; }
                let mut all: Vec<usize> = train.iter().chain(val).copied().collect();
                all.sort();
                prop_assert_eq!(all, (0..ds.n_train()).collect::<Vec<_>>());
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
            for c in 0..counts.len() {
                let per: Vec<usize> = folds.iter()
                    .map(|(_, v)| v.iter().filter(|&&i| ds.train_y[i] == c).count())
                    .collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn separable_bound_zero() {
        let x = array![[-10.0, 0.0], [10.0, 0.0]];
        let ds = Dataset::new(x, vec![0, 1], Array2::zeros((0, 2)), LabelMap::numbered(2)).unwrap();
        let s = score_bound(&ds, &TrainParams::plain(KernelSpec::linear(), 1.0), &SolverConfig::with_tol(1e-9));
        assert_eq!(s.status, PointStatus::Ok);
        assert!(s.score >= 0.0 && s.score <= 1.0);
    }

    #[test]
    fn single_delta_grid_is_trivial() {
        let data = SyntheticConfig::small(3, 5).generate(1);
        let grid = SearchGrid {
            c_values: vec![1.0, 0.1],
            gamma_values: vec![],
            delta_values: vec![0.0],
            cstar: CstarSpec::Auto,
            k_folds: 3,
            scoring: Scoring::Bound,
            seed: 0,
        };
        let r = select(&data.train, &grid, KernelKind::Linear, &SolverConfig::default()).unwrap();
        assert_eq!(r.step_b.delta, 0.0);
        assert_eq!(r.scores.len(), 3);
        assert!(r.step_a.c == 0.1 || r.step_a.c == 1.0);
        assert_eq!(r.final_params.c, r.step_a.c);
        let ratio = auto_ratio(data.train.n_train(), data.train.n_universum(), 3);
        assert!((r.step_b.cstar - ratio * r.step_a.c).abs() < 1e-15);
        let csv = r.score_table_csv();
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn delta_grid_without_universum_rejected() {
        let ds = labelled(&[5, 5]);
        let grid = SearchGrid {
            c_values: vec![1.0],
            gamma_values: vec![],
            delta_values: vec![0.0, 0.1],
            cstar: CstarSpec::Auto,
            k_folds: 2,
            scoring: Scoring::Cv,
            seed: 0,
        };
        assert!(select(&ds, &grid, KernelKind::Linear, &SolverConfig::default()).unwrap_err().is_input());
    }

    #[test]
    fn sweep_zero_is_plain_and_deterministic() {
        let data = SyntheticConfig {
            n_universum: 6,
            ..SyntheticConfig::small(3, 5)
        }
        .generate(2);
        let params = TrainParams {
            kernel: KernelSpec::linear(),
            c: 1.0,
            cstar: CstarSpec::Auto,
            delta: 0.05,
        };
        let cfg = SolverConfig::default();
        let rows = universum_size_sweep(&data.train, &[0, 3], &params, &[7], None, &cfg).unwrap();
        let again = universum_size_sweep(&data.train, &[0, 3], &params, &[7], None, &cfg).unwrap();
        assert_eq!(rows, again);
        assert!(universum_size_sweep(&data.train, &[10_000], &params, &[7], None, &cfg).is_err());
    }
}
