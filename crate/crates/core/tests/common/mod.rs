//! Independent reference implementations. Everything here works on plain
//! nested `Vec`s with explicit loops so it shares no code with the crate.
#![allow(dead_code)]

use lml::dataset::LabeledDataset;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

pub fn symmetric_gaussian(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let a = gaussian(rng, n, n);
    (0..n).map(|i| (0..n).map(|j| 0.5 * (a[i][j] + a[j][i])).collect()).collect()
}

pub fn to_array(m: &Mat) -> Array2<f64> {
    let (r, c) = (m.len(), m.first().map_or(0, Vec::len));
    Array2::from_shape_fn((r, c), |(i, j)| m[i][j])
}

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

pub fn transpose(a: &Mat) -> Mat {
    let (r, c) = (a.len(), a[0].len());
    (0..c).map(|j| (0..r).map(|i| a[i][j]).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            let aip = a[i][p];
            for j in 0..m {
                out[i][j] += aip * b[p][j];
            }
        }
    }
    out
}

pub fn sub(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect()).collect()
}

pub fn frob_sq(a: &Mat) -> f64 {
    a.iter().flatten().map(|v| v * v).sum()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn identity(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub fn l1_off(w: &Mat) -> f64 {
    let mut s = 0.0;
    for (i, row) in w.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                s += v.abs();
            }
        }
    }
    s
}

/// `½‖L0ᵀWL0 − M‖²_F + λ‖W‖_{1,off}`.
pub fn composite_objective(l0: &Mat, w: &Mat, m: &Mat, lambda: f64) -> f64 {
    let metric = matmul(&matmul(&transpose(l0), w), l0);
    0.5 * frob_sq(&sub(&metric, m)) + lambda * l1_off(w)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn top_eigenvalue(a: &Mat) -> f64 {
    let n = a.len();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i][j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Plain proximal gradient with the fixed step `1/L`, `L = λ_max(L0L0ᵀ)²`.
/// Returns the final iterate and the objective after every iteration.
pub fn ista(l0: &Mat, m: &Mat, w0: &Mat, lambda: f64, iters: usize) -> (Mat, Vec<f64>) {
    let g = matmul(l0, &transpose(l0));
    let b = matmul(&matmul(l0, m), &transpose(l0));
    let lip = top_eigenvalue(&g).powi(2) * (1.0 + 1e-9);
    let step = 1.0 / lip;
    let d = w0.len();
    let mut w = w0.clone();
    let mut history = Vec::with_capacity(iters);
    for _ in 0..iters {
        let grad = sub(&matmul(&matmul(&g, &w), &g), &b);
        for i in 0..d {
            for j in 0..d {
                let v = w[i][j] - step * grad[i][j];
                w[i][j] = if i == j { v } else { soft_threshold(v, lambda * step) };
            }
        }
        history.push(composite_objective(l0, &w, m, lambda));
    }
    (w, history)
}

/// Central difference of `f` with respect to entry `(i, j)` of `x`.
pub fn central_difference(f: impl Fn(&Mat) -> f64, x: &Mat, i: usize, j: usize, h: f64) -> f64 {
    let mut plus = x.clone();
    plus[i][j] += h;
    let mut minus = x.clone();
    minus[i][j] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `max |a − b| / max(|b|_∞, floor)` over all entries.
pub fn relative_error(a: &Mat, b: &Mat, floor: f64) -> f64 {
    let scale = b.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(floor);
    max_abs_diff(a, b) / scale
}

/// Squared-Euclidean kNN: neighbors by distance then index, majority vote,
/// vote ties to the smaller summed distance then the lower label.
pub fn euclidean_knn(train: &Mat, labels: &[i64], query: &[f64], k: usize) -> i64 {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, row)| (row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut tally: Vec<(i64, usize, f64)> = Vec::new();
    for &(dist, i) in &d[..k] {
        match tally.iter_mut().find(|t| t.0 == labels[i]) {
            Some(t) => {
                t.1 += 1;
                t.2 += dist;
            }
            None => tally.push((labels[i], 1, dist)),
        }
    }
    tally.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.partial_cmp(&b.2).unwrap()).then(a.0.cmp(&b.0)));
    tally[0].0
}

/// One Gaussian blob per class in `dim` dimensions.
pub fn blobs(seed: u64, per_class: usize, classes: usize, dim: usize, spread: f64) -> LabeledDataset<f64> {
    let mut r = rng(seed);
    let centers = gaussian(&mut r, classes, dim);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            rows.push(center.iter().map(|m| 3.0 * m + spread * r.sample::<f64, _>(StandardNormal)).collect());
            labels.push(c as i64);
        }
    }
    LabeledDataset::new(to_array(&rows), labels, "blobs").unwrap()
}
