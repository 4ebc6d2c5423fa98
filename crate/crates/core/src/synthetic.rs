//! Seeded Gaussian generator for desk-scale experiments.
//!
//! Classes are Gaussian blobs around random centres. Universum points sit
//! "in between": around the mean of the class centres. Optionally every
//! sample (training, test and universum alike) also carries variation along
//! a few shared nuisance directions, which is the structure a universum is
//! meant to expose.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelMap};

/// Placement of the class centres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterLayout {
    /// Independent Gaussian centres, roughly equidistant in high dimension.
    Random,
    /// Centres evenly spaced along one random direction, so each class
    /// borders at most two others.
    Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub layout: CenterLayout,
    pub n_classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub n_test_per_class: usize,
    pub n_universum: usize,
    /// Per-coordinate standard deviation of random centres, or the
    /// spacing of chained centres.
    pub center_spread: f64,
    /// Norm of a common offset added to every centre.
    pub center_offset: f64,
    /// Per-coordinate isotropic noise of class samples.
    pub noise: f64,
    /// Per-coordinate isotropic noise of universum samples.
    pub universum_noise: f64,
    /// Number of shared nuisance directions.
    pub nuisance_dims: usize,
    /// Standard deviation along each nuisance direction.
    pub nuisance_scale: f64,
}

impl SyntheticConfig {
    /// Small well-separated problem for unit tests.
    pub fn small(n_classes: usize, dim: usize) -> Self {
        SyntheticConfig {
            layout: CenterLayout::Random,
            n_classes,
            dim,
            n_per_class: 5,
            n_test_per_class: 5,
            n_universum: 0,
            center_spread: 1.0,
            center_offset: 0.0,
            noise: 0.5,
            universum_noise: 0.1,
            nuisance_dims: 0,
            nuisance_scale: 0.0,
        }
    }

    pub fn generate(&self, seed: u64) -> SyntheticData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let l = self.n_classes;
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

        let mut offset = Array1::from_shape_fn(d, |_| normal(&mut rng));
        let norm = offset.dot(&offset).sqrt();
        if norm > 0.0 {
            offset *= self.center_offset / norm;
        }
        let centers = match self.layout {
            CenterLayout::Random => Array2::from_shape_fn((l, d), |(_, j)| {
                offset[j] + self.center_spread * normal(&mut rng)
            }),
            CenterLayout::Chain => {
                let mut dir = Array1::from_shape_fn(d, |_| normal(&mut rng));
                dir /= dir.dot(&dir).sqrt();
                Array2::from_shape_fn((l, d), |(k, j)| {
                    offset[j] + self.center_spread * k as f64 * dir[j]
                })
            }
        };
        let mean = centers.mean_axis(ndarray::Axis(0)).expect("L >= 1");

        // orthonormal nuisance basis via Gram-Schmidt
        let mut basis: Vec<Array1<f64>> = Vec::new();
        while basis.len() < self.nuisance_dims.min(d) {
            let mut v = Array1::from_shape_fn(d, |_| normal(&mut rng));
            for b in &basis {
                let p = v.dot(b);
                v.scaled_add(-p, b);
            }
            let nv = v.dot(&v).sqrt();
            if nv > 1e-8 {
                basis.push(v / nv);
            }
        }

        let sample = |rng: &mut ChaCha8Rng, center: &Array1<f64>, iso: f64| -> Array1<f64> {
            let mut x = center.clone();
            for xj in x.iter_mut() {
                *xj += iso * normal(rng);
            }
            for b in &basis {
                x.scaled_add(self.nuisance_scale * normal(rng), b);
            }
            x
        };

        let draw_labelled = |rng: &mut ChaCha8Rng, per_class: usize| {
            let mut x = Array2::zeros((per_class * l, d));
            let mut y = Vec::with_capacity(per_class * l);
            for i in 0..per_class * l {
                let k = i % l;
                x.row_mut(i).assign(&sample(rng, &centers.row(k).to_owned(), self.noise));
                y.push(k);
            }
            (x, y)
        };
        let (train_x, train_y) = draw_labelled(&mut rng, self.n_per_class);
        let (test_x, test_y) = draw_labelled(&mut rng, self.n_test_per_class);

        let mut universum_x = Array2::zeros((self.n_universum, d));
        for j in 0..self.n_universum {
            universum_x
                .row_mut(j)
                .assign(&sample(&mut rng, &mean, self.universum_noise));
        }

        let train = Dataset::new(train_x, train_y, universum_x, LabelMap::numbered(l))
            .expect("generator produces valid data");
        SyntheticData {
            train,
            test_x,
            test_y,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test_x: Array2<f64>,
    pub test_y: Vec<usize>,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let cfg = SyntheticConfig {
            n_universum: 7,
            nuisance_dims: 2,
            nuisance_scale: 1.0,
            ..SyntheticConfig::small(3, 6)
        };
        let a = cfg.generate(11);
        let b = cfg.generate(11);
        assert_eq!(a.train, b.train);
        assert_eq!(a.train.n_train(), 15);
        assert_eq!(a.train.n_universum(), 7);
        assert_eq!(a.test_x.nrows(), 15);
        assert_eq!(a.train.class_counts(), vec![5, 5, 5]);
        assert_ne!(cfg.generate(12).train, a.train);
    }
}
