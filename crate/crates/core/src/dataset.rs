//! Training/universum data and the replica augmentation that turns a
//! universum problem into an ordinary multiclass SVM over `n + m*L` rows.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{gram, GramMatrix, KernelSpec};

/// Bidirectional map between external label strings and internal class
/// indices `0..L`, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap {
    labels: Vec<String>,
}

impl LabelMap {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::input(format!("duplicate label '{l}'")));
            }
        }
        Ok(LabelMap { labels })
    }

    /// Labels `"1".."L"`, used by generators and tests.
    pub fn numbered(n_classes: usize) -> Self {
        LabelMap {
            labels: (1..=n_classes).map(|i| i.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Labelled training samples plus unlabelled universum samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_x: Array2<f64>,
    /// Internal class indices in `0..L`.
    pub train_y: Vec<usize>,
    pub universum_x: Array2<f64>,
    pub label_map: LabelMap,
}

impl Dataset {
    pub fn new(
        train_x: Array2<f64>,
        train_y: Vec<usize>,
        universum_x: Array2<f64>,
        label_map: LabelMap,
    ) -> Result<Self> {
        let ds = Dataset {
            train_x,
            train_y,
            universum_x,
            label_map,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let l = self.n_classes();
        if l < 2 {
            return Err(Error::input(format!("need at least 2 classes, found {l}")));
        }
        if self.train_x.nrows() != self.train_y.len() {
            return Err(Error::input(format!(
                "{} training rows but {} labels",
                self.train_x.nrows(),
                self.train_y.len()
            )));
        }
        if self.n_train() == 0 {
            return Err(Error::input("no training samples"));
        }
        if self.dim() == 0 {
            return Err(Error::input("samples have no features"));
        }
        if self.universum_x.nrows() > 0 && self.universum_x.ncols() != self.dim() {
            return Err(Error::input(format!(
                "universum dimension {} differs from training dimension {}",
                self.universum_x.ncols(),
                self.dim()
            )));
        }
        if let Some(&bad) = self.train_y.iter().find(|&&y| y >= l) {
            return Err(Error::input(format!("label index {bad} outside 0..{l}")));
        }
        let counts = self.class_counts();
        for (k, &c) in counts.iter().enumerate() {
            if c == 0 {
                log::warn!("class '{}' has no training samples", self.label_map.name(k));
            }
        }
        if !self
            .train_x
            .iter()
            .chain(self.universum_x.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::input("non-finite feature value"));
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        self.train_y.len()
    }

    pub fn n_universum(&self) -> usize {
        self.universum_x.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn dim(&self) -> usize {
        self.train_x.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.train_y {
            counts[y] += 1;
        }
        counts
    }

    /// Same data with the universum dropped.
    pub fn without_universum(&self) -> Dataset {
        Dataset {
            universum_x: Array2::zeros((0, self.dim())),
            ..self.clone()
        }
    }

    /// Subset of training rows (in the given order); universum kept whole.
    pub fn select_train(&self, idx: &[usize]) -> Dataset {
        Dataset {
            train_x: self.train_x.select(Axis(0), idx),
            train_y: idx.iter().map(|&i| self.train_y[i]).collect(),
            universum_x: self.universum_x.clone(),
            label_map: self.label_map.clone(),
        }
    }

    /// Subset of universum rows; training rows kept whole.
    pub fn select_universum(&self, idx: &[usize]) -> Dataset {
        Dataset {
            universum_x: if idx.is_empty() {
                Array2::zeros((0, self.dim()))
            } else {
                self.universum_x.select(Axis(0), idx)
            },
            ..self.clone()
        }
    }

    /// SHA-256 over labels and the bit patterns of every feature value.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_classes() as u64).to_le_bytes());
        for l in self.label_map.labels() {
            h.update((l.len() as u64).to_le_bytes());
            h.update(l.as_bytes());
        }
        for (tag, x) in [(b'T', &self.train_x), (b'U', &self.universum_x)] {
            h.update([tag]);
            h.update((x.nrows() as u64).to_le_bytes());
            h.update((x.ncols() as u64).to_le_bytes());
            for v in x.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        for &y in &self.train_y {
            h.update((y as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_features(fields: &[&str], path: &Path, line: u64) -> Result<Vec<f64>> {
    fields
        .iter()
        .enumerate()
        .map(|(col, f)| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::input(format!(
                        "{}: row {line}, column {}: '{f}' is not a finite number",
                        path.display(),
                        col + 1
                    ))
                })
        })
        .collect()
}

/// Raw rows of a CSV file: `(line number, fields)`, skipping blank lines.
fn read_rows(path: &Path) -> Result<Vec<(u64, Vec<String>)>> {
    let mut rdr = csv_reader(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, dim: usize) -> Array2<f64> {
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, dim), flat).expect("row lengths checked")
}

/// Parses `label,f1,...,fd` rows. `labels` fixes the label map (prediction
/// time); `None` builds it from first appearance.
fn read_labelled(
    path: &Path,
    labels: Option<&LabelMap>,
    dim: Option<usize>,
) -> Result<(Array2<f64>, Vec<usize>, LabelMap)> {
    let rows = read_rows(path)?;
    let mut map: Vec<String> = labels.map(|m| m.labels().to_vec()).unwrap_or_default();
    let mut xs = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    let mut width = dim;
    for (line, fields) in rows {
        if fields.len() < 2 {
            return Err(Error::input(format!(
                "{}: row {line} needs a label and at least one feature",
                path.display()
            )));
        }
        let d = fields.len() - 1;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(Error::input(format!(
                    "{}: row {line} has {d} features, expected {w}",
                    path.display()
                )))
            }
            _ => {}
        }
        let label = &fields[0];
        let y = match map.iter().position(|l| l == label) {
            Some(y) => y,
            None if labels.is_some() => {
                return Err(Error::input(format!(
                    "{}: row {line}: unknown label '{label}'",
                    path.display()
                )))
            }
            None => {
                map.push(label.clone());
                map.len() - 1
            }
        };
        let refs: Vec<&str> = fields[1..].iter().map(String::as_str).collect();
        xs.push(parse_features(&refs, path, line)?);
        ys.push(y);
    }
    let d = width.unwrap_or(0);
    Ok((rows_to_matrix(xs, d), ys, LabelMap::new(map)?))
}

/// Parses `f1,...,fd` rows; an empty file gives `0 x dim`.
pub fn read_unlabelled(path: &Path, dim: usize) -> Result<Array2<f64>> {
    let rows = read_rows(path)?;
    let mut xs = Vec::with_capacity(rows.len());
    for (line, fields) in rows {
        if fields.len() != dim {
            return Err(Error::input(format!(
                "{}: row {line} has {} features, expected {dim}",
                path.display(),
                fields.len()
            )));
        }
        let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
        xs.push(parse_features(&refs, path, line)?);
    }
    Ok(rows_to_matrix(xs, dim))
}

/// Loads a training file and an optional universum file.
pub fn load_csv(train_path: &Path, universum_path: Option<&Path>) -> Result<Dataset> {
    let (train_x, train_y, label_map) = read_labelled(train_path, None, None)?;
    if train_y.is_empty() {
        return Err(Error::input(format!(
            "{}: no training rows",
            train_path.display()
        )));
    }
    let universum_x = match universum_path {
        Some(p) => read_unlabelled(p, train_x.ncols())?,
        None => Array2::zeros((0, train_x.ncols())),
    };
    Dataset::new(train_x, train_y, universum_x, label_map)
}

/// Loads a labelled evaluation file against an existing label map.
pub fn load_labelled_csv(
    path: &Path,
    labels: &LabelMap,
    dim: usize,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let (x, y, _) = read_labelled(path, Some(labels), Some(dim))?;
    Ok((x, y))
}

/// How the universum cost `C*` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum CstarSpec {
    /// Absolute `C*`.
    Fixed(f64),
    /// `C* = ratio * C`.
    Ratio(f64),
    /// `C* / C = n / (m L)`.
    Auto,
}

impl CstarSpec {
    /// Resolves to an absolute `C*`. With no universum the value is moot
    /// and `Auto` resolves to 0.
    pub fn resolve(&self, c: f64, n: usize, m: usize, n_classes: usize) -> f64 {
        match *self {
            CstarSpec::Fixed(v) => v,
            CstarSpec::Ratio(r) => r * c,
            CstarSpec::Auto => c * auto_ratio(n, m, n_classes),
        }
    }

    /// The ratio `C*/C` this spec implies.
    pub fn ratio(&self, c: f64, n: usize, m: usize, n_classes: usize) -> f64 {
        match *self {
            CstarSpec::Fixed(v) => v / c,
            CstarSpec::Ratio(r) => r,
            CstarSpec::Auto => auto_ratio(n, m, n_classes),
        }
    }
}

/// `n / (m L)`, the ratio that weighs training and universum losses equally.
pub fn auto_ratio(n: usize, m: usize, n_classes: usize) -> f64 {
    if m == 0 {
        0.0
    } else {
        n as f64 / (m * n_classes) as f64
    }
}

/// The augmented `n + m L` row problem.
///
/// Rows `0..n` are training rows; row `n + j*L + k` is universum point `j`
/// replicated with assigned class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedProblem {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    /// Margin targets, one row per sample.
    pub e: Array2<f64>,
    pub cost: Vec<f64>,
    pub n_train: usize,
    pub n_classes: usize,
    pub delta: f64,
    /// Index of each row's originating point in the stacked
    /// `[train_x; universum_x]` matrix.
    pub source: Vec<usize>,
}

impl AugmentedProblem {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn is_train_row(&self, i: usize) -> bool {
        i < self.n_train
    }

    /// Gram matrix over the augmented rows. Computed over the distinct
    /// points and expanded, so each entry equals the pairwise kernel value.
    pub fn gram(&self, spec: &KernelSpec) -> Result<GramMatrix> {
        let n_src = self.source.iter().copied().max().map_or(0, |m| m + 1);
        let mut distinct = Array2::zeros((n_src, self.x.ncols()));
        for (row, &src) in self.source.iter().enumerate() {
            distinct.row_mut(src).assign(&self.x.row(row));
        }
        let base = gram(spec, distinct.view())?;
        let n = self.n_rows();
        let mut values = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                values[[i, j]] = base.get(self.source[i], self.source[j]);
            }
        }
        GramMatrix::from_values(values)
    }

    /// Same problem with the cost of one row forced to zero, which pins the
    /// row's dual variables at zero.
    pub fn with_row_dropped(&self, t: usize) -> AugmentedProblem {
        let mut p = self.clone();
        p.cost[t] = 0.0;
        p
    }
}

/// Builds the augmented problem for costs `C` (training) and `C*`
/// (universum) and insensitivity `delta`.
pub fn augment(ds: &Dataset, delta: f64, c: f64, cstar: f64) -> Result<AugmentedProblem> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::input(format!("delta must be >= 0, got {delta}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::input(format!("C must be > 0, got {c}")));
    }
    if !(cstar >= 0.0 && cstar.is_finite()) {
        return Err(Error::input(format!("C* must be >= 0, got {cstar}")));
    }
    let n = ds.n_train();
    let m = ds.n_universum();
    let l = ds.n_classes();
    let rows = n + m * l;
    let d = ds.dim();

    let mut x = Array2::zeros((rows, d));
    let mut e = Array2::zeros((rows, l));
    let mut y = Vec::with_capacity(rows);
    let mut cost = Vec::with_capacity(rows);
    let mut source = Vec::with_capacity(rows);

    x.slice_mut(s![..n, ..]).assign(&ds.train_x);
    for (i, &yi) in ds.train_y.iter().enumerate() {
        for k in 0..l {
            e[[i, k]] = if k == yi { 0.0 } else { 1.0 };
        }
        y.push(yi);
        cost.push(c);
        source.push(i);
    }
    for j in 0..m {
        for k in 0..l {
            let row = n + j * l + k;
            x.row_mut(row).assign(&ds.universum_x.row(j));
            for q in 0..l {
                e[[row, q]] = if q == k { 0.0 } else { -delta };
            }
            y.push(k);
            cost.push(cstar);
            source.push(n + j);
        }
    }
    Ok(AugmentedProblem {
        x,
        y,
        e,
        cost,
        n_train: n,
        n_classes: l,
        delta,
        source,
    })
}

/// Stacks two sample matrices vertically.
pub fn stack(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    if a.nrows() == 0 {
        return b.to_owned();
    }
    if b.nrows() == 0 {
        return a.to_owned();
    }
    ndarray::concatenate(Axis(0), &[a, b]).expect("matching widths")
}
