//! Synthetic multi-task data sharing one low-dimensional subspace.
//!
//! Every task lives in the row space of a common `d_true × d̂` matrix `L0`
//! with orthonormal rows. Task `t` draws a positive definite `W_t`; class
//! modes are `L0ᵀ u` with latent `u ~ N(0, s² W_t)`, so the directions
//! `W_t` weights most are the ones separating the classes. Samples add
//! isotropic Gaussian noise of scale `σ` in all `d̂` directions.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::LabeledDataset;
use crate::error::{LmlError, Result};
use crate::linalg;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub d_hat: usize,
    pub d_true: usize,
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    /// Fraction of off-diagonal pairs of each `W_t` that are non-zero.
    pub offdiag_density: f64,
    /// Scale `s` of the latent class means.
    pub class_separation: f64,
    /// Latent modes per class; samples cycle through them.
    pub modes_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            d_hat: 20,
            d_true: 5,
            num_tasks: 6,
            classes_per_task: 2,
            samples_per_class: 100,
            noise_sigma: 0.5,
            offdiag_density: 0.3,
            class_separation: 1.0,
            modes_per_class: 1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LmlError::config(m.to_string()));
        if self.d_true == 0 || self.d_true > self.d_hat {
            return bad("need 1 <= d_true <= d_hat");
        }
        if self.num_tasks == 0 || self.classes_per_task == 0 || self.samples_per_class == 0 || self.modes_per_class == 0
        {
            return bad("task, class, mode and sample counts must be >= 1");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.offdiag_density) {
            return bad("offdiag_density must lie in [0, 1]");
        }
        if !(self.class_separation >= 0.0) || !self.class_separation.is_finite() {
            return bad("class_separation must be finite and >= 0");
        }
        Ok(())
    }
}

/// Generating parameters behind a synthetic task set.
#[derive(Debug, Clone)]
pub struct GroundTruth<T> {
    pub l0: Array2<T>,
    pub weights: Vec<Array2<T>>,
}

impl<T: Real> GroundTruth<T> {
    /// `L0ᵀ W_t L0` for task index `t`.
    pub fn metric(&self, t: usize) -> Array2<T> {
        self.l0.t().dot(&self.weights[t]).dot(&self.l0)
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn orthonormal_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    loop {
        let mut q = gaussian_matrix(rng, rows, cols);
        let mut ok = true;
        for i in 0..rows {
            for j in 0..i {
                let proj = q.row(i).dot(&q.row(j));
                let prev = q.row(j).to_owned();
                q.row_mut(i).scaled_add(-proj, &prev);
            }
            let norm = q.row(i).dot(&q.row(i)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.row_mut(i).mapv_inplace(|v| v / norm);
        }
        if ok {
            return q;
        }
    }
}

/// Symmetric, strictly diagonally dominant (hence positive definite).
fn task_weights(rng: &mut ChaCha8Rng, d: usize, density: f64) -> Array2<f64> {
    let dm = gaussian_matrix(rng, d, d);
    let mut w = dm.t().dot(&dm) / d as f64;
    for i in 0..d {
        for j in 0..i {
            if rng.random::<f64>() >= density {
                w[[i, j]] = 0.0;
                w[[j, i]] = 0.0;
            }
        }
    }
    for i in 0..d {
        let off: f64 = (0..d).filter(|&j| j != i).map(|j| w[[i, j]].abs()).sum();
        w[[i, i]] += off + 1.0;
    }
    w
}

/// Draws `num_tasks` datasets (ids `task1`, `task2`, ...) and the
/// parameters that generated them. Rows are grouped by class, each class
/// holding exactly `samples_per_class` rows.
pub fn generate_synthetic<T: Real>(spec: &SyntheticSpec) -> Result<(Vec<LabeledDataset<T>>, GroundTruth<T>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (d, d_hat, sigma) = (spec.d_true, spec.d_hat, spec.noise_sigma);
    let l0 = orthonormal_rows(&mut rng, d, d_hat);

    let mut tasks = Vec::with_capacity(spec.num_tasks);
    let mut weights = Vec::with_capacity(spec.num_tasks);
    for t in 0..spec.num_tasks {
        let w = task_weights(&mut rng, d, spec.offdiag_density);
        // C e has covariance W when W = C Cᵀ
        let chol = linalg::cholesky(w.view())?;

        let n = spec.classes_per_task * spec.samples_per_class;
        let mut x = Array2::<f64>::zeros((n, d_hat));
        let mut y = Vec::with_capacity(n);
        let mut row = 0;
        for c in 0..spec.classes_per_task {
            let means: Vec<Array1<f64>> = (0..spec.modes_per_class)
                .map(|_| {
                    let e: Array1<f64> = Array1::from_shape_simple_fn(d, || rng.sample(StandardNormal));
                    l0.t().dot(&(chol.dot(&e) * spec.class_separation))
                })
                .collect();
            for i in 0..spec.samples_per_class {
                let mean = &means[i % means.len()];
                let ambient: Array1<f64> = Array1::from_shape_simple_fn(d_hat, || rng.sample(StandardNormal));
                let sample = mean + &(ambient * sigma);
                x.row_mut(row).assign(&sample);
                y.push(c as i64);
                row += 1;
            }
        }
        tasks.push(LabeledDataset::new(x.mapv(T::lit), y, format!("task{}", t + 1))?);
        weights.push(w.mapv(T::lit));
    }
    Ok((tasks, GroundTruth { l0: l0.mapv(T::lit), weights }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            d_hat: 8,
            d_true: 3,
            num_tasks: 3,
            classes_per_task: 3,
            samples_per_class: 7,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn shapes_balance_and_orthonormal_rows() {
        let (tasks, truth) = generate_synthetic::<f64>(&small()).unwrap();
        assert_eq!(tasks.len(), 3);
        for ds in &tasks {
            assert_eq!(ds.len(), 21);
            assert_eq!(ds.dim(), 8);
            for members in ds.class_members().values() {
                assert_eq!(members.len(), 7);
            }
        }
        let gram = truth.l0.dot(&truth.l0.t());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic() {
        let (a, _) = generate_synthetic::<f64>(&small()).unwrap();
        let (b, _) = generate_synthetic::<f64>(&small()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.features(), y.features());
            assert_eq!(x.labels(), y.labels());
        }
    }

    #[test]
    fn zero_density_gives_diagonal_weights() {
        let spec = SyntheticSpec { offdiag_density: 0.0, ..small() };
        let (_, truth) = generate_synthetic::<f64>(&spec).unwrap();
        for w in &truth.weights {
            for ((i, j), v) in w.indexed_iter() {
                if i != j {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn weights_are_positive_definite() {
        let spec = SyntheticSpec { offdiag_density: 1.0, ..small() };
        let (_, truth) = generate_synthetic::<f64>(&spec).unwrap();
        for w in &truth.weights {
            let eig = linalg::symmetric_eigen(w.view()).unwrap();
            assert!(eig.values.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(generate_synthetic::<f64>(&SyntheticSpec { d_true: 9, ..small() }).is_err());
        assert!(generate_synthetic::<f64>(&SyntheticSpec { offdiag_density: 1.5, ..small() }).is_err());
    }
}
