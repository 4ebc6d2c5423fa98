//! Histograms of margin projections and universum label frequencies.
//!
//! The projection of `x` on class `k` is `f_k(x) - max_{l != k} f_l(x)`:
//! positive exactly when `k` wins, and at least 1 when a sample of class
//! `k` carries no hinge loss.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, Model};

pub const DEFAULT_BINS: usize = 50;

/// `f_k - max_{l != k} f_l`.
pub fn margin_coordinate(f: &[f64], k: usize) -> f64 {
    let rival = f
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != k)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    f[k] - rival
}

fn decision_rows(model: &Model, x: ArrayView2<f64>) -> Result<Vec<Vec<f64>>> {
    if x.ncols() != model.dim {
        return Err(Error::input(format!(
            "samples have dimension {}, model expects {}",
            x.ncols(),
            model.dim
        )));
    }
    (0..x.nrows())
        .into_par_iter()
        .map(|r| model.decision_values(x.row(r)))
        .collect()
}

/// Training samples grouped by class, each projected on its own class.
pub fn project_training(model: &Model, x: ArrayView2<f64>, y: &[usize]) -> Result<Vec<Vec<f64>>> {
    if x.nrows() != y.len() {
        return Err(Error::input("sample and label counts differ"));
    }
    let l = model.n_classes();
    if let Some(&bad) = y.iter().find(|&&c| c >= l) {
        return Err(Error::input(format!("label index {bad} outside 0..{l}")));
    }
    let f = decision_rows(model, x)?;
    let mut out = vec![Vec::new(); l];
    for (fi, &k) in f.iter().zip(y) {
        out[k].push(margin_coordinate(fi, k));
    }
    Ok(out)
}

/// Every universum point projected on every class: `L` lists of `|U|`.
pub fn project_universum(model: &Model, u: ArrayView2<f64>) -> Result<Vec<Vec<f64>>> {
    if u.nrows() == 0 {
        return Err(Error::input("no universum samples to project"));
    }
    let f = decision_rows(model, u)?;
    Ok((0..model.n_classes())
        .map(|k| f.iter().map(|fi| margin_coordinate(fi, k)).collect())
        .collect())
}

/// How often each class is predicted for the universum.
pub fn universum_label_frequencies(model: &Model, u: ArrayView2<f64>) -> Result<Vec<usize>> {
    if u.nrows() == 0 {
        return Err(Error::input("no universum samples to classify"));
    }
    let mut counts = vec![0; model.n_classes()];
    for fi in decision_rows(model, u)? {
        counts[argmax(&fi)] += 1;
    }
    Ok(counts)
}

/// Largest class share of the universum predictions.
pub fn max_share(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    *counts.iter().max().unwrap_or(&0) as f64 / total as f64
}

pub enum Bins {
    Count(usize),
    Edges(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `edge_low,edge_high,count` per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("edge_low,edge_high,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.edges[i], self.edges[i + 1], c);
        }
        out
    }
}

/// Bins `values`. With a bin count the bins are uniform over
/// `[min, max + 1e-9]`; with explicit edges, values outside are clamped
/// into the end bins. Every value is counted once.
pub fn histogram(values: &[f64], bins: Bins) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::input("cannot histogram an empty list"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("cannot histogram non-finite values"));
    }
    let edges = match bins {
        Bins::Count(0) => return Err(Error::input("need at least one bin")),
        Bins::Count(b) => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1e-9;
            let w = (hi - lo) / b as f64;
            let mut e: Vec<f64> = (0..b).map(|i| lo + w * i as f64).collect();
            e.push(hi);
            e
        }
        Bins::Edges(e) => {
            if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::input("histogram edges must be strictly increasing"));
            }
            e
        }
    };
    let b = edges.len() - 1;
    let mut counts = vec![0; b];
    for &v in values {
        // number of interior edges at or below v
        let k = edges[1..b].partition_point(|&e| e <= v);
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl ListStats {
    pub fn of(values: &[f64]) -> ListStats {
        let n = values.len();
        if n == 0 {
            return ListStats {
                count: 0,
                mean: 0.0,
                std: 0.0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        ListStats {
            count: n,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Everything needed to draw the projection plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSet {
    pub labels: Vec<String>,
    pub training_proj: Vec<Vec<f64>>,
    pub universum_proj: Option<Vec<Vec<f64>>>,
    pub training_hist: Vec<Option<Histogram>>,
    pub universum_hist: Option<Vec<Histogram>>,
    pub universum_frequencies: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub labels: Vec<String>,
    pub bins: usize,
    pub training: Vec<ListStats>,
    pub universum: Option<Vec<ListStats>>,
    pub universum_frequencies: Option<Vec<usize>>,
    pub universum_max_share: Option<f64>,
}

impl ProjectionSet {
    /// Projects and bins. Classes with no training samples get no histogram.
    pub fn compute(
        model: &Model,
        x: ArrayView2<f64>,
        y: &[usize],
        universum: Option<ArrayView2<f64>>,
        bins: usize,
    ) -> Result<ProjectionSet> {
        let training_proj = project_training(model, x, y)?;
        let training_hist = training_proj
            .iter()
            .map(|v| {
                if v.is_empty() {
                    Ok(None)
                } else {
                    histogram(v, Bins::Count(bins)).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        let (universum_proj, universum_hist, universum_frequencies) = match universum {
            Some(u) if u.nrows() > 0 => {
                let p = project_universum(model, u)?;
                let h = p
                    .iter()
                    .map(|v| histogram(v, Bins::Count(bins)))
                    .collect::<Result<Vec<_>>>()?;
                (Some(p), Some(h), Some(universum_label_frequencies(model, u)?))
            }
            _ => (None, None, None),
        };
        Ok(ProjectionSet {
            labels: model.label_map.labels().to_vec(),
            training_proj,
            universum_proj,
            training_hist,
            universum_hist,
            universum_frequencies,
        })
    }

    pub fn summary(&self, bins: usize) -> ProjectionSummary {
        ProjectionSummary {
            labels: self.labels.clone(),
            bins,
            training: self.training_proj.iter().map(|v| ListStats::of(v)).collect(),
            universum: self
                .universum_proj
                .as_ref()
                .map(|p| p.iter().map(|v| ListStats::of(v)).collect()),
            universum_max_share: self.universum_frequencies.as_deref().map(max_share),
            universum_frequencies: self.universum_frequencies.clone(),
        }
    }
}
