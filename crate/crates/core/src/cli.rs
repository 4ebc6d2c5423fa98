//! Command-line front end.
//!
//! Every command writes `manifest.json` (the fully resolved configuration)
//! into the output directory before any result file. Exit status is 0 on
//! success, 1 when a numeric or convergence problem flagged the results and
//! 2 for bad input or configuration.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use crate::dataset::{augment, load_csv, load_labelled_csv, read_unlabelled, CstarSpec, Dataset};
use crate::diagnostics::{ProjectionSet, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::kernel::{KernelKind, KernelSpec};
use crate::model::{categorize_svs, default_sv_eps, fit, Model, TrainParams};
use crate::select::{select, sweep_table_csv, universum_size_sweep, Scoring, SearchGrid};
use crate::solver::{dual_objective, kkt_residual, DualSolution, SolveStatus, SolverConfig};
use crate::span::{check_assumption2, exact_loo, loo_bound};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERIC: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "musvm", version, about = "Multiclass SVM with universum samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model.
    Train(RunArgs),
    /// Predict labels for a CSV file with a trained model.
    Predict(RunArgs),
    /// Span leave-one-out bound of a trained model.
    Bound(RunArgs),
    /// Two-step model selection, then train the selected model.
    Tune(RunArgs),
    /// Histograms of margin projections.
    Project(RunArgs),
    /// Test error against the number of universum samples.
    Sweep(RunArgs),
    /// Exact leave-one-out error by retraining.
    Loo(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Bound(_) => "bound",
            Command::Tune(_) => "tune",
            Command::Project(_) => "project",
            Command::Sweep(_) => "sweep",
            Command::Loo(_) => "loo",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Train(a)
            | Command::Predict(a)
            | Command::Bound(a)
            | Command::Tune(a)
            | Command::Project(a)
            | Command::Sweep(a)
            | Command::Loo(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Labelled training CSV (`label,f1,...,fd`).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Unlabelled universum CSV (`f1,...,fd`).
    #[arg(long)]
    pub universum: Option<PathBuf>,
    /// Evaluation CSV, labelled or unlabelled.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Model JSON to read (predict, bound, project).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "musvm-out")]
    pub out: PathBuf,
    #[arg(long, default_value = "linear")]
    pub kernel: KernelKind,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    /// Absolute universum cost; overrides --cstar-ratio.
    #[arg(long)]
    pub cstar: Option<f64>,
    /// `C*/C` as a number, or `auto` for n/(mL).
    #[arg(long, default_value = "auto")]
    pub cstar_ratio: String,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value = "bound")]
    pub scoring: Scoring,
    #[arg(long = "grid-C", value_delimiter = ',', default_values_t = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0])]
    pub grid_c: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
    pub grid_gamma: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.05, 0.1])]
    pub grid_delta: Vec<f64>,
    /// Worker threads for tune and sweep.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Histogram bins (project).
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Universum sizes (sweep); defaults to 0, m/4, m/2, 3m/4, m.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    /// Seeds per size (sweep), starting at --seed.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
}

impl RunArgs {
    fn cstar_spec(&self) -> Result<CstarSpec> {
        if let Some(v) = self.cstar {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::input(format!("--cstar must be >= 0, got {v}")));
            }
            return Ok(CstarSpec::Fixed(v));
        }
        if self.cstar_ratio == "auto" {
            return Ok(CstarSpec::Auto);
        }
        match self.cstar_ratio.parse::<f64>() {
            Ok(r) if r >= 0.0 && r.is_finite() => Ok(CstarSpec::Ratio(r)),
            _ => Err(Error::input(format!(
                "--cstar-ratio must be 'auto' or a nonnegative number, got '{}'",
                self.cstar_ratio
            ))),
        }
    }

    fn kernel_spec(&self) -> Result<KernelSpec> {
        match self.kernel {
            KernelKind::Linear => Ok(KernelSpec::linear()),
            KernelKind::Rbf => KernelSpec::rbf(self.gamma),
        }
    }

    fn solver_config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            tol: self.tol,
            max_outer_iters: self.max_iter,
            ..SolverConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn train_params(&self) -> Result<TrainParams> {
        Ok(TrainParams {
            kernel: self.kernel_spec()?,
            c: self.c,
            cstar: self.cstar_spec()?,
            delta: self.delta,
        })
    }

    fn required<'a>(&self, p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::input(format!("--{flag} is required")))
    }

    fn dataset(&self) -> Result<Dataset> {
        load_csv(self.required(&self.train, "train")?, self.universum.as_deref())
    }

    fn base_manifest(&self, command: &str) -> serde_json::Value {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "paths": {
                "train": path(&self.train),
                "universum": path(&self.universum),
                "test": path(&self.test),
                "model": path(&self.model),
                "out": self.out.display().to_string(),
            },
            "kernel": self.kernel,
            "gamma": if self.kernel == KernelKind::Rbf { Some(self.gamma) } else { None },
            "tol": self.tol,
            "max_iter": self.max_iter,
            "seed": self.seed,
            "jobs": self.jobs,
        })
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

/// Manifest-first: the output directory and its manifest exist before any
/// work is done.
fn start_run(args: &RunArgs, manifest: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_json(&args.out.join("manifest.json"), &manifest)
}

fn merge(mut base: serde_json::Value, extra: serde_json::Value) -> serde_json::Value {
    if let (Some(b), Some(e)) = (base.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            b.insert(k.clone(), v.clone());
        }
    }
    base
}

fn status_code(ok: bool) -> i32 {
    if ok {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    }
}

fn resolved_params(ds: &Dataset, p: &TrainParams) -> serde_json::Value {
    let (n, m, l) = (ds.n_train(), ds.n_universum(), ds.n_classes());
    json!({
        "C": p.c,
        "cstar": p.cstar.resolve(p.c, n, m, l),
        "cstar_ratio": p.cstar.ratio(p.c, n, m, l),
        "cstar_mode": p.cstar,
        "delta": p.delta,
        "n": n,
        "m": m,
        "L": l,
    })
}

/// Evaluation data: labelled when the label map accepts it, otherwise
/// unlabelled with the model's dimension.
fn load_eval(path: &Path, model: &Model) -> Result<(Array2<f64>, Option<Vec<usize>>)> {
    match load_labelled_csv(path, &model.label_map, model.dim) {
        Ok((x, y)) => Ok((x, Some(y))),
        Err(labelled_err) => match read_unlabelled(path, model.dim) {
            Ok(x) => Ok((x, None)),
            Err(_) => Err(labelled_err),
        },
    }
}

pub fn cmd_train(args: &RunArgs) -> Result<i32> {
    let params = args.train_params()?;
    let cfg = args.solver_config()?;
    let ds = args.dataset()?;
    start_run(
        args,
        merge(args.base_manifest("train"), resolved_params(&ds, &params)),
    )?;
    let fitted = fit(&ds, &params, &cfg)?;
    let part = fitted.partition();
    let sol = &fitted.solution;
    let test_error = match &args.test {
        Some(p) => {
            let (x, y) = load_labelled_csv(p, &ds.label_map, ds.dim())?;
            Some(fitted.model.evaluate(x.view(), &y)?)
        }
        None => None,
    };
    let train_error = fitted.model.evaluate(ds.train_x.view(), &ds.train_y)?;
    let sv1_train = part.sv1.iter().filter(|&&i| i < ds.n_train()).count();
    let sv2_train = part.sv2.iter().filter(|&&i| i < ds.n_train()).count();
    let report = json!({
        "status": sol.status,
        "objective": sol.objective,
        "iterations": sol.iterations,
        "kkt_residual": sol.kkt_residual,
        "n_support": fitted.model.n_support(),
        "sv1_count": part.sv1.len(),
        "sv2_count": part.sv2.len(),
        "sv1_train": sv1_train,
        "sv2_train": sv2_train,
        "sv_eps": part.sv_eps,
        "assumption2_fraction": check_assumption2(sol, &part, part.sv_eps),
        "train_error": train_error,
        "test_error": test_error,
    });
    fitted.model.save(&args.out.join("model.json"))?;
    write_json(&args.out.join("train_report.json"), &report)?;
    Ok(status_code(sol.converged()))
}

pub fn cmd_predict(args: &RunArgs) -> Result<i32> {
    let model = Model::load(args.required(&args.model, "model")?)?;
    let test = args.required(&args.test, "test")?;
    let (x, y) = load_eval(test, &model)?;
    start_run(args, args.base_manifest("predict"))?;
    let mut csv = String::from("label");
    for l in model.label_map.labels() {
        csv.push_str(&format!(",f_{l}"));
    }
    csv.push('\n');
    let mut wrong = 0usize;
    for (r, row) in x.outer_iter().enumerate() {
        let f = model.decision_values(row)?;
        let k = crate::model::argmax(&f);
        if let Some(y) = &y {
            wrong += usize::from(y[r] != k);
        }
        csv.push_str(model.label_map.name(k));
        for v in f {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    write_text(&args.out.join("predictions.csv"), &csv)?;
    let n = x.nrows();
    let report = json!({
        "n": n,
        "labelled": y.is_some(),
        "error": y.as_ref().map(|_| if n == 0 { 0.0 } else { wrong as f64 / n as f64 }),
    });
    write_json(&args.out.join("predict_report.json"), &report)?;
    Ok(EXIT_OK)
}

pub fn cmd_bound(args: &RunArgs) -> Result<i32> {
    let model = Model::load(args.required(&args.model, "model")?)?;
    let ds = args.dataset()?;
    let hash = ds.content_hash();
    if hash != model.train_meta.data_hash {
        return Err(Error::input(format!(
            "training data hash {hash} does not match the model's {}",
            model.train_meta.data_hash
        )));
    }
    let meta = &model.train_meta;
    start_run(
        args,
        merge(
            args.base_manifest("bound"),
            json!({ "C": meta.c, "cstar": meta.cstar, "delta": meta.delta, "n": meta.n, "m": meta.m }),
        ),
    )?;
    let problem = augment(&ds, meta.delta, meta.c, meta.cstar)?;
    let gram = problem.gram(&model.kernel)?;
    let alpha = model.full_alpha(problem.n_rows())?;
    let residual = kkt_residual(&problem, &gram, &alpha)?;
    let solution = DualSolution {
        objective: dual_objective(&alpha, &gram, &problem.e)?,
        alpha,
        kkt_residual: residual,
        iterations: 0,
        status: SolveStatus::Converged,
        objective_trace: Vec::new(),
    };
    let part = categorize_svs(
        &solution.alpha,
        &problem.cost,
        &problem.y,
        default_sv_eps(meta.c, meta.cstar),
    );
    let report = loo_bound(&solution, &part, &gram, &problem)?;
    write_json(&args.out.join("span_report.json"), &report)?;
    Ok(status_code(report.failures.is_empty()))
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    let pool = b
        .build()
        .map_err(|e| Error::input(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn cmd_tune(args: &RunArgs) -> Result<i32> {
    let cfg = args.solver_config()?;
    let ds = args.dataset()?;
    let cstar = match args.cstar_spec()? {
        CstarSpec::Fixed(v) => CstarSpec::Ratio(v / args.c),
        other => other,
    };
    let grid = SearchGrid {
        c_values: args.grid_c.clone(),
        gamma_values: args.grid_gamma.clone(),
        delta_values: args.grid_delta.clone(),
        cstar,
        k_folds: args.folds,
        scoring: args.scoring,
        seed: args.seed,
    };
    grid.validate(args.kernel)?;
    let auto = crate::dataset::auto_ratio(ds.n_train(), ds.n_universum(), ds.n_classes());
    start_run(
        args,
        merge(
            args.base_manifest("tune"),
            json!({
                "grid": grid,
                "cstar_ratio": cstar.ratio(1.0, ds.n_train(), ds.n_universum(), ds.n_classes()),
                "auto_ratio": auto,
                "n": ds.n_train(), "m": ds.n_universum(), "L": ds.n_classes(),
            }),
        ),
    )?;
    let result = with_pool(args.jobs, || select(&ds, &grid, args.kernel, &cfg))??;
    write_text(&args.out.join("scores.csv"), &result.score_table_csv())?;
    write_json(&args.out.join("selection.json"), &result)?;
    let fitted = fit(&ds, &result.final_params, &cfg)?;
    fitted.model.save(&args.out.join("model.json"))?;
    let all_ok = result
        .scores
        .iter()
        .all(|p| p.status == crate::select::PointStatus::Ok);
    Ok(status_code(fitted.solution.converged() && all_ok))
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn cmd_project(args: &RunArgs) -> Result<i32> {
    let model = Model::load(args.required(&args.model, "model")?)?;
    let train = args.required(&args.train, "train")?;
    let (x, y) = load_labelled_csv(train, &model.label_map, model.dim)?;
    let u = match &args.universum {
        Some(p) => Some(read_unlabelled(p, model.dim)?),
        None => None,
    };
    if args.bins == 0 {
        return Err(Error::input("--bins must be at least 1"));
    }
    start_run(
        args,
        merge(args.base_manifest("project"), json!({ "bins": args.bins })),
    )?;
    let set = ProjectionSet::compute(&model, x.view(), &y, u.as_ref().map(|u| u.view()), args.bins)?;
    for (k, label) in set.labels.iter().enumerate() {
        let csv = match &set.training_hist[k] {
            Some(h) => h.to_csv(),
            None => String::from("edge_low,edge_high,count\n"),
        };
        write_text(&args.out.join(format!("train_class_{}.csv", sanitize(label))), &csv)?;
        if let Some(hists) = &set.universum_hist {
            write_text(
                &args.out.join(format!("universum_class_{}.csv", sanitize(label))),
                &hists[k].to_csv(),
            )?;
        }
    }
    write_json(&args.out.join("summary.json"), &set.summary(args.bins))?;
    Ok(EXIT_OK)
}

pub fn cmd_sweep(args: &RunArgs) -> Result<i32> {
    let params = args.train_params()?;
    let cfg = args.solver_config()?;
    let ds = args.dataset()?;
    let m = ds.n_universum();
    let sizes = if args.sizes.is_empty() {
        let mut s: Vec<usize> = (0..=4).map(|q| q * m / 4).collect();
        s.dedup();
        s
    } else {
        args.sizes.clone()
    };
    if args.repeats == 0 {
        return Err(Error::input("--repeats must be at least 1"));
    }
    let seeds: Vec<u64> = (0..args.repeats as u64).map(|r| args.seed + r).collect();
    let test = match &args.test {
        Some(p) => Some(load_labelled_csv(p, &ds.label_map, ds.dim())?),
        None => None,
    };
    start_run(
        args,
        merge(
            args.base_manifest("sweep"),
            merge(
                resolved_params(&ds, &params),
                json!({ "sizes": sizes, "seeds": seeds }),
            ),
        ),
    )?;
    let rows = with_pool(args.jobs, || {
        universum_size_sweep(
            &ds,
            &sizes,
            &params,
            &seeds,
            test.as_ref().map(|(x, y)| (x.view(), y.as_slice())),
            &cfg,
        )
    })??;
    write_text(&args.out.join("sweep.csv"), &sweep_table_csv(&rows))?;
    write_json(&args.out.join("sweep.json"), &rows)?;
    Ok(status_code(rows.iter().all(|r| r.converged)))
}

pub fn cmd_loo(args: &RunArgs) -> Result<i32> {
    let params = args.train_params()?;
    let cfg = args.solver_config()?;
    let ds = args.dataset()?;
    start_run(
        args,
        merge(args.base_manifest("loo"), resolved_params(&ds, &params)),
    )?;
    let cstar = params
        .cstar
        .resolve(params.c, ds.n_train(), ds.n_universum(), ds.n_classes());
    let problem = augment(&ds, params.delta, params.c, cstar)?;
    let gram = problem.gram(&params.kernel)?;
    let report = exact_loo(&problem, &gram, &cfg)?;
    write_json(&args.out.join("loo_report.json"), &report)?;
    Ok(status_code(report.all_converged))
}

/// Runs a parsed command. Non-parallel commands run on a single thread.
pub fn run(cli: &Cli) -> Result<i32> {
    let args = cli.command.args();
    match &cli.command {
        Command::Tune(a) => cmd_tune(a),
        Command::Sweep(a) => cmd_sweep(a),
        cmd => with_pool(Some(1), || match cmd {
            Command::Train(a) => cmd_train(a),
            Command::Predict(a) => cmd_predict(a),
            Command::Bound(a) => cmd_bound(a),
            Command::Project(a) => cmd_project(a),
            Command::Loo(a) => cmd_loo(a),
            Command::Tune(_) | Command::Sweep(_) => unreachable!(),
        })?,
    }
    .map_err(|e| {
        log::debug!("{} failed for output {}", cli.command.name(), args.out.display());
        e
    })
}

/// Maps an error to its exit status.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_input() {
        EXIT_INPUT
    } else {
        EXIT_NUMERIC
    }
}
