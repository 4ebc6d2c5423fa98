//! Reference implementations shared by the integration tests. They favour
//! obviously-correct code over speed and share no code path with the
//! library's solver or span computation.

#![allow(dead_code)]

use musvm::dataset::{augment, AugmentedProblem, Dataset, LabelMap};
use musvm::kernel::{GramMatrix, KernelSpec};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Cap of coordinate `l` in a row with label `y` and cost `cost`.
pub fn cap(l: usize, y: usize, cost: f64) -> f64 {
    if l == y {
        cost
    } else {
        0.0
    }
}

/// Euclidean projection onto `{a : sum a = 0, a <= u}` by bisection on the
/// shift `theta` in `a = min(u, v - theta)`.
pub fn project_bisect(v: &[f64], u: &[f64]) -> Vec<f64> {
    let h = |t: f64| -> f64 { v.iter().zip(u).map(|(vi, ui)| ui.min(vi - t)).sum() };
    let mut lo = v.iter().zip(u).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().zip(u).map(|(vi, ui)| ui.min(vi - t)).collect()
}

/// `W(alpha)` by explicit triple loop.
pub fn naive_objective(alpha: &Array2<f64>, k: &Array2<f64>, e: &Array2<f64>) -> f64 {
    let (n, l) = alpha.dim();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            for q in 0..l {
                quad += alpha[[i, q]] * alpha[[j, q]] * k[[i, j]];
            }
        }
    }
    let mut lin = 0.0;
    for i in 0..n {
        for q in 0..l {
            lin += alpha[[i, q]] * e[[i, q]];
        }
    }
    -0.5 * quad - lin
}

fn largest_eigenvalue(k: &Array2<f64>) -> f64 {
    let n = k.nrows();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[[i, j]] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Maximises the dual by accelerated projected gradient with restarts.
/// Returns the final point and its objective.
pub fn pg_dual_oracle(problem: &AugmentedProblem, k: &Array2<f64>, iters: usize) -> (Array2<f64>, f64) {
    let n = problem.n_rows();
    let l = problem.n_classes;
    let step = 1.0 / (largest_eigenvalue(k) * 1.02 + 1e-12);
    let caps: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..l).map(|q| cap(q, problem.y[i], problem.cost[i])).collect())
        .collect();
    let neg_w = |a: &Array2<f64>| -naive_objective(a, k, &problem.e);
    let project = |z: &Array2<f64>| -> Array2<f64> {
        let mut out = Array2::zeros((n, l));
        for i in 0..n {
            let p = project_bisect(&z.row(i).to_vec(), &caps[i]);
            for q in 0..l {
                out[[i, q]] = p[q];
            }
        }
        out
    };
    let mut x = Array2::<f64>::zeros((n, l));
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut fx = neg_w(&x);
    for it in 0..iters {
        if it % 50 == 0 {
            // stop at a fixed point of the projected-gradient map
            let g = k.dot(&x) + &problem.e;
            let moved = &project(&(&x - &(g * step))) - &x;
            if moved.iter().all(|d| d.abs() < 1e-14) {
                break;
            }
        }
        let grad = k.dot(&y) + &problem.e;
        let x_new = project(&(&y - &(grad * step)));
        let f_new = neg_w(&x_new);
        if f_new > fx {
            // restart momentum
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_new + &((&x_new - &x) * ((t - 1.0) / t_new));
        x = x_new;
        fx = f_new;
        t = t_new;
    }
    (x.clone(), -fx)
}

/// Minimiser of `g . d + k/2 |d|^2` over feasible rows `alpha + d`, by
/// projected gradient with a fixed step of `1/(2k)`.
pub fn subproblem_oracle(g: &[f64], k: f64, y: usize, cost: f64, alpha: &[f64]) -> Vec<f64> {
    let l = g.len();
    let u: Vec<f64> = (0..l).map(|q| cap(q, y, cost)).collect();
    let mut a = project_bisect(alpha, &u);
    let step = 0.5 / k;
    for _ in 0..400 {
        let z: Vec<f64> = (0..l)
            .map(|q| a[q] - step * (g[q] + k * (a[q] - alpha[q])))
            .collect();
        a = project_bisect(&z, &u);
    }
    a
}

/// Largest violation of the dual's feasibility conditions.
pub fn feasibility_violation(alpha: &Array2<f64>, problem: &AugmentedProblem) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..problem.n_rows() {
        let row = alpha.row(i);
        worst = worst.max(row.sum().abs());
        for (q, &a) in row.iter().enumerate() {
            worst = worst.max(a - cap(q, problem.y[i], problem.cost[i]));
            if q == problem.y[i] {
                worst = worst.max(-a);
            }
        }
    }
    worst
}

pub fn kernel_matrix(x: &Array2<f64>, spec: &KernelSpec) -> Array2<f64> {
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let xi = x.row(i);
        let xj = x.row(j);
        match spec.kind {
            musvm::KernelKind::Linear => xi.dot(&xj),
            musvm::KernelKind::Rbf => {
                let d2: f64 = xi.iter().zip(xj.iter()).map(|(a, b)| (a - b).powi(2)).sum();
                (-spec.gamma * d2).exp()
            }
        }
    })
}

/// Random dataset with every class present.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, m: usize, l: usize, d: usize) -> Dataset {
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let y: Vec<usize> = (0..n)
        .map(|i| if i < l { i } else { rng.random_range(0..l) })
        .collect();
    let u = Array2::from_shape_fn((m, d), |_| rng.random_range(-0.5..0.5));
    Dataset::new(x, y, u, LabelMap::numbered(l)).unwrap()
}

pub fn random_kernel(rng: &mut ChaCha8Rng) -> KernelSpec {
    if rng.random_bool(0.5) {
        KernelSpec::linear()
    } else {
        KernelSpec::rbf(rng.random_range(0.2..2.0)).unwrap()
    }
}

/// Random small augmented problem and its Gram matrix.
pub fn random_problem(
    rng: &mut ChaCha8Rng,
    max_n: usize,
    max_m: usize,
    classes: &[usize],
) -> (Dataset, AugmentedProblem, GramMatrix, KernelSpec) {
    let l = classes[rng.random_range(0..classes.len())];
    let n = rng.random_range(l..=max_n.max(l));
    let m = rng.random_range(0..=max_m);
    let d = rng.random_range(1..=4);
    let ds = random_dataset(rng, n, m, l, d);
    let c = 10f64.powf(rng.random_range(-1.0..1.0));
    let cstar = if m > 0 { c * rng.random_range(0.0..1.0) } else { 0.0 };
    let delta = rng.random_range(0.0..0.2);
    let problem = augment(&ds, delta, c, cstar).unwrap();
    let spec = random_kernel(rng);
    let gram = problem.gram(&spec).unwrap();
    (ds, problem, gram, spec)
}

/// Writes `label,f1,...` rows.
pub fn write_labelled_csv(path: &std::path::Path, x: &Array2<f64>, y: &[usize], labels: &LabelMap) {
    let mut s = String::new();
    for (row, &k) in x.outer_iter().zip(y) {
        s.push_str(labels.name(k));
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

/// Writes `f1,...` rows.
pub fn write_unlabelled_csv(path: &std::path::Path, x: &Array2<f64>) {
    let mut s = String::new();
    for row in x.outer_iter() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

/// Writes a dataset as `train.csv` and, if it has any, `universum.csv`.
pub fn write_dataset(dir: &std::path::Path, ds: &Dataset) -> (std::path::PathBuf, Option<std::path::PathBuf>) {
    let train = dir.join("train.csv");
    write_labelled_csv(&train, &ds.train_x, &ds.train_y, &ds.label_map);
    let universum = if ds.n_universum() > 0 {
        let p = dir.join("universum.csv");
        write_unlabelled_csv(&p, &ds.universum_x);
        Some(p)
    } else {
        None
    };
    (train, universum)
}
