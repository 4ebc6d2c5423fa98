//! Kernel evaluation and dense Gram matrices.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelKind::Linear),
            "rbf" => Ok(KernelKind::Rbf),
            other => Err(Error::input(format!("unknown kernel '{other}'"))),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
        })
    }
}

/// A kernel choice. `gamma` is only meaningful for [`KernelKind::Rbf`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            gamma: 0.0,
        }
    }

    pub fn rbf(gamma: f64) -> Result<Self> {
        let spec = KernelSpec {
            kind: KernelKind::Rbf,
            gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::Rbf && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::input(format!(
                "rbf kernel needs a positive finite gamma, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Evaluates the kernel given the two self inner products and the cross
    /// inner product. Squared distances are clamped at zero.
    #[inline]
    fn from_dots(&self, xx: f64, zz: f64, xz: f64) -> f64 {
        match self.kind {
            KernelKind::Linear => xz,
            KernelKind::Rbf => {
                let d2 = (xx + zz - 2.0 * xz).max(0.0);
                (-self.gamma * d2).exp()
            }
        }
    }
}

#[inline]
fn dot(x: ArrayView1<f64>, z: ArrayView1<f64>) -> f64 {
    x.iter().zip(z.iter()).map(|(a, b)| a * b).sum()
}

/// Kernel value `K(x, z)`.
pub fn eval_kernel(spec: &KernelSpec, x: ArrayView1<f64>, z: ArrayView1<f64>) -> Result<f64> {
    spec.validate()?;
    if x.is_empty() || x.len() != z.len() {
        return Err(Error::input(format!(
            "kernel arguments have dimensions {} and {}",
            x.len(),
            z.len()
        )));
    }
    Ok(spec.from_dots(dot(x, x), dot(z, z), dot(x, z)))
}

/// Symmetric dense kernel matrix over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: Array2<f64>,
}

impl GramMatrix {
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::input("gram matrix must be square"));
        }
        Ok(GramMatrix { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    /// Sub-matrix on the given (ordered) index set.
    pub fn restrict(&self, idx: &[usize]) -> GramMatrix {
        let k = idx.len();
        let mut out = Array2::zeros((k, k));
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[[a, b]] = self.values[[i, j]];
            }
        }
        GramMatrix { values: out }
    }
}

/// Gram matrix of the rows of `x`.
pub fn gram(spec: &KernelSpec, x: ArrayView2<f64>) -> Result<GramMatrix> {
    spec.validate()?;
    let n = x.nrows();
    if n == 0 || x.ncols() == 0 {
        return Err(Error::input("gram matrix of an empty sample set"));
    }
    let norms: Vec<f64> = x.rows().into_iter().map(|r| dot(r, r)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            (0..n)
                .map(|j| spec.from_dots(norms[i], norms[j], dot(xi, x.row(j))))
                .collect()
        })
        .collect();
    let mut values = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    Ok(GramMatrix { values })
}

/// Kernel values between every row of `x` and a single point `z`.
pub fn kernel_column(spec: &KernelSpec, x: ArrayView2<f64>, z: ArrayView1<f64>) -> Result<Vec<f64>> {
    spec.validate()?;
    if x.ncols() != z.len() || z.is_empty() {
        return Err(Error::input(format!(
            "point has dimension {}, expected {}",
            z.len(),
            x.ncols()
        )));
    }
    let zz = dot(z, z);
    Ok(x
        .rows()
        .into_iter()
        .map(|r| spec.from_dots(dot(r, r), zz, dot(r, z)))
        .collect())
}
