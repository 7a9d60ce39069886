//! Seeded k-means (k-means++ seeding, Lloyd iterations).

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct KMeans<T> {
    pub centers: Array2<T>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist<T: Real>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

fn nearest<T: Real>(point: ArrayView1<T>, centers: &Array2<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, center) in centers.outer_iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Clusters the rows of `x` into `min(k, n)` groups.
pub fn kmeans<T: Real>(x: ArrayView2<T>, k: usize, seed: u64, max_iter: usize) -> KMeans<T> {
    let n = x.nrows();
    let k = k.clamp(1, n.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = Array2::<T>::zeros((k, x.ncols()));
    centers.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centers.row(0)).as_f64()).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(&mut rng),
            // all points coincide with chosen centers
            Err(_) => rng.random_range(0..n),
        };
        centers.row_mut(c).assign(&x.row(pick));
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(x.row(i), centers.row(c)).as_f64());
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        for (row, slot) in x.outer_iter().zip(assignments.iter_mut()) {
            let (c, _) = nearest(row, &centers);
            if *slot != c {
                *slot = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<T>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (row, &c) in x.outer_iter().zip(&assignments) {
            counts[c] += 1;
            let mut sum = sums.row_mut(c);
            sum += &row;
        }
        for (c, &count) in counts.iter().enumerate() {
            // empty clusters keep their previous center
            if count > 0 {
                let mean = &sums.row(c) / T::from_count(count);
                centers.row_mut(c).assign(&mean);
            }
        }
    }
    KMeans { centers, assignments, iterations }
}
