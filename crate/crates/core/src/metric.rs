//! Bilinear similarity and Mahalanobis-style distance under a dense metric
//! matrix, the triplet hinge losses of both base models, and their
//! aggregate (sub)gradients.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::dataset::LabeledDataset;
use crate::error::{ensure_shape, LmlError, Result};
use crate::linalg;
use crate::scalar::Real;
use crate::triplets::TripletSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    /// Scores `xᵀMy`; larger means more alike.
    Similarity,
    /// Scores `(x−y)ᵀM(x−y)`; smaller means more alike.
    Distance,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Similarity => "similarity",
            MetricKind::Distance => "distance",
        })
    }
}

impl FromStr for MetricKind {
    type Err = LmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "similarity" | "oasis" => Ok(MetricKind::Similarity),
            "distance" | "scml" => Ok(MetricKind::Distance),
            other => Err(LmlError::config(format!("unknown metric kind `{other}` (expected similarity or distance)"))),
        }
    }
}

/// Square metric matrix together with how it scores pairs. Positive
/// semi-definiteness is not enforced; see [`MetricMatrix::project_psd`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix<T> {
    values: Array2<T>,
    kind: MetricKind,
}

impl<T: Real> MetricMatrix<T> {
    pub fn new(values: Array2<T>, kind: MetricKind) -> Result<Self> {
        ensure_shape(values.is_square(), || {
            format!("metric must be square, got {}x{}", values.nrows(), values.ncols())
        })?;
        if !linalg::all_finite(values.view()) {
            return Err(LmlError::Divergence("metric has non-finite entries".into()));
        }
        Ok(MetricMatrix { values, kind })
    }

    pub fn identity(dim: usize, kind: MetricKind) -> Self {
        MetricMatrix { values: Array2::eye(dim), kind }
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..i).all(|j| (self.values[[i, j]] - self.values[[j, i]]).abs() <= tol))
    }

    /// Eigenvalue-clipped copy; the nearest PSD matrix in Frobenius norm.
    pub fn project_psd(&self) -> Result<Self> {
        Ok(MetricMatrix { values: linalg::project_psd(self.values.view())?, kind: self.kind })
    }

    /// Pair score dispatched on the metric kind.
    pub fn score(&self, x: ArrayView1<T>, y: ArrayView1<T>) -> Result<T> {
        match self.kind {
            MetricKind::Similarity => bilinear(self.values.view(), x, y),
            MetricKind::Distance => quadratic_distance(self.values.view(), x, y),
        }
    }
}

/// A triplet of row indices: anchor, same-class positive, other-class negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn new(anchor: usize, positive: usize, negative: usize) -> Self {
        Triplet { anchor, positive, negative }
    }
}

/// Aggregate triplet (sub)gradient with respect to the metric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSummary<T> {
    pub delta: Array2<T>,
    /// Number of triplets that contributed to `delta`.
    pub triplet_count: usize,
}

impl<T: Real> GradientSummary<T> {
    pub fn zeros(dim: usize) -> Self {
        GradientSummary { delta: Array2::zeros((dim, dim)), triplet_count: 0 }
    }
}

fn check_pair<T: Real>(m: ArrayView2<T>, x: ArrayView1<T>, y: ArrayView1<T>) -> Result<()> {
    ensure_shape(m.is_square() && x.len() == m.nrows() && y.len() == m.nrows(), || {
        format!("metric {}x{} with vectors of length {} and {}", m.nrows(), m.ncols(), x.len(), y.len())
    })
}

fn bilinear<T: Real>(m: ArrayView2<T>, x: ArrayView1<T>, y: ArrayView1<T>) -> Result<T> {
    check_pair(m, x, y)?;
    Ok(x.dot(&m.dot(&y)))
}

fn quadratic_distance<T: Real>(m: ArrayView2<T>, x: ArrayView1<T>, y: ArrayView1<T>) -> Result<T> {
    check_pair(m, x, y)?;
    let diff = &x - &y;
    Ok(diff.dot(&m.dot(&diff)))
}

fn require_kind<T: Real>(m: &MetricMatrix<T>, kind: MetricKind) -> Result<()> {
    if m.kind == kind {
        Ok(())
    } else {
        Err(LmlError::config(format!("expected a {kind} metric, got {}", m.kind)))
    }
}

/// `xᵀ M y`.
pub fn similarity<T: Real>(m: &MetricMatrix<T>, x: ArrayView1<T>, y: ArrayView1<T>) -> Result<T> {
    require_kind(m, MetricKind::Similarity)?;
    bilinear(m.values.view(), x, y)
}

/// `(x−y)ᵀ M (x−y)`.
pub fn distance<T: Real>(m: &MetricMatrix<T>, x: ArrayView1<T>, y: ArrayView1<T>) -> Result<T> {
    require_kind(m, MetricKind::Distance)?;
    quadratic_distance(m.values.view(), x, y)
}

fn check_triplet<T: Real>(t: &Triplet, data: &LabeledDataset<T>) -> Result<()> {
    let n = data.len();
    if t.anchor >= n || t.positive >= n || t.negative >= n {
        return Err(LmlError::Index(format!(
            "triplet ({}, {}, {}) into dataset of {n} rows",
            t.anchor, t.positive, t.negative
        )));
    }
    Ok(())
}

/// The quantity inside the hinge: `1 − s(i,j) + s(i,k)` for similarities and
/// `1 + d(i,j) − d(i,k)` for distances.
pub fn hinge_argument<T: Real>(m: &MetricMatrix<T>, t: &Triplet, data: &LabeledDataset<T>) -> Result<T> {
    check_triplet(t, data)?;
    let (xi, xj, xk) = (data.row(t.anchor), data.row(t.positive), data.row(t.negative));
    Ok(match m.kind {
        MetricKind::Similarity => T::one() - bilinear(m.values.view(), xi, xj)? + bilinear(m.values.view(), xi, xk)?,
        MetricKind::Distance => {
            T::one() + quadratic_distance(m.values.view(), xi, xj)? - quadratic_distance(m.values.view(), xi, xk)?
        }
    })
}

pub fn triplet_hinge_loss<T: Real>(m: &MetricMatrix<T>, t: &Triplet, data: &LabeledDataset<T>) -> Result<T> {
    Ok(hinge_argument(m, t, data)?.max(T::zero()))
}

/// Hinge arguments for every triplet, evaluated with batched products.
pub fn hinge_arguments<T: Real>(
    m: &MetricMatrix<T>,
    triplets: &TripletSet,
    data: &LabeledDataset<T>,
) -> Result<Vec<T>> {
    ensure_shape(m.dim() == data.dim(), || {
        format!("metric is {}x{} but data has {} features", m.dim(), m.dim(), data.dim())
    })?;
    for t in triplets.iter() {
        check_triplet(t, data)?;
    }
    let x = data.features();
    let mv = m.values.view();
    let args = match m.kind {
        MetricKind::Similarity => {
            // row i of XM is x_iᵀM
            let xm = x.dot(&mv);
            triplets
                .iter()
                .map(|t| {
                    let a = xm.row(t.anchor);
                    T::one() - a.dot(&x.row(t.positive)) + a.dot(&x.row(t.negative))
                })
                .collect()
        }
        MetricKind::Distance => {
            let quad = |a: usize, b: usize| {
                let diff = &x.row(a) - &x.row(b);
                diff.dot(&mv.dot(&diff))
            };
            triplets.iter().map(|t| T::one() + quad(t.anchor, t.positive) - quad(t.anchor, t.negative)).collect()
        }
    };
    Ok(args)
}

/// Sum of hinge losses over a triplet set.
pub fn total_hinge_loss<T: Real>(m: &MetricMatrix<T>, triplets: &TripletSet, data: &LabeledDataset<T>) -> Result<T> {
    Ok(hinge_arguments(m, triplets, data)?.into_iter().fold(T::zero(), |acc, a| acc + a.max(T::zero())))
}

/// Per-triplet gradient matrix in the symmetrized form used for dictionary
/// updates: `x_i(x_k−x_j)ᵀ + (x_k−x_j)x_iᵀ` for similarities and
/// `(x_i−x_j)(x_i−x_j)ᵀ − (x_i−x_k)(x_i−x_k)ᵀ` for distances.
pub fn triplet_gradient<T: Real>(kind: MetricKind, t: &Triplet, data: &LabeledDataset<T>) -> Result<Array2<T>> {
    check_triplet(t, data)?;
    let (xi, xj, xk) = (data.row(t.anchor), data.row(t.positive), data.row(t.negative));
    let outer =
        |a: ArrayView1<T>, b: ArrayView1<T>| a.to_owned().insert_axis(Axis(1)).dot(&b.to_owned().insert_axis(Axis(0)));
    Ok(match kind {
        MetricKind::Similarity => {
            let d = &xk - &xj;
            let g = outer(xi, d.view());
            let gt = g.t().to_owned();
            g + gt
        }
        MetricKind::Distance => {
            let a = &xi - &xj;
            let b = &xi - &xk;
            outer(a.view(), a.view()) - outer(b.view(), b.view())
        }
    })
}

/// Sums the per-triplet gradient over `triplets`. With `active_only`, only
/// triplets whose hinge argument is strictly positive at `m` contribute,
/// giving a subgradient of the summed hinge loss; otherwise every triplet
/// contributes.
pub fn aggregate_gradient<T: Real>(
    m: &MetricMatrix<T>,
    triplets: &TripletSet,
    data: &LabeledDataset<T>,
    active_only: bool,
) -> Result<GradientSummary<T>> {
    let dim = data.dim();
    ensure_shape(m.dim() == dim, || format!("metric is {0}x{0} but data has {dim} features", m.dim()))?;
    if triplets.is_empty() {
        return Ok(GradientSummary::zeros(dim));
    }
    let chosen: Vec<usize> = if active_only {
        hinge_arguments(m, triplets, data)?
            .into_iter()
            .enumerate()
            .filter(|(_, a)| *a > T::zero())
            .map(|(i, _)| i)
            .collect()
    } else {
        for t in triplets.iter() {
            check_triplet(t, data)?;
        }
        (0..triplets.len()).collect()
    };
    if chosen.is_empty() {
        return Ok(GradientSummary::zeros(dim));
    }

    // Batched form: stack the per-triplet vectors as rows and contract.
    let x = data.features();
    let ts = triplets.as_slice();
    let delta = match m.kind {
        MetricKind::Similarity => {
            let anchors = Array2::from_shape_fn((chosen.len(), dim), |(r, c)| x[[ts[chosen[r]].anchor, c]]);
            let diffs = Array2::from_shape_fn((chosen.len(), dim), |(r, c)| {
                let t = &ts[chosen[r]];
                x[[t.negative, c]] - x[[t.positive, c]]
            });
            let g = anchors.t().dot(&diffs);
            let gt = g.t().to_owned();
            g + gt
        }
        MetricKind::Distance => {
            let pos = Array2::from_shape_fn((chosen.len(), dim), |(r, c)| {
                let t = &ts[chosen[r]];
                x[[t.anchor, c]] - x[[t.positive, c]]
            });
            let neg = Array2::from_shape_fn((chosen.len(), dim), |(r, c)| {
                let t = &ts[chosen[r]];
                x[[t.anchor, c]] - x[[t.negative, c]]
            });
            pos.t().dot(&pos) - neg.t().dot(&neg)
        }
    };
    Ok(GradientSummary { delta, triplet_count: chosen.len() })
}

/// Reference implementation of [`aggregate_gradient`]: one outer product per
/// triplet, accumulated in triplet order.
pub fn aggregate_gradient_sequential<T: Real>(
    m: &MetricMatrix<T>,
    triplets: &TripletSet,
    data: &LabeledDataset<T>,
    active_only: bool,
) -> Result<GradientSummary<T>> {
    let dim = data.dim();
    ensure_shape(m.dim() == dim, || format!("metric is {0}x{0} but data has {dim} features", m.dim()))?;
    let mut out = GradientSummary::zeros(dim);
    for t in triplets.iter() {
        if active_only && hinge_argument(m, t, data)? <= T::zero() {
            continue;
        }
        out.delta += &triplet_gradient(m.kind, t, data)?;
        out.triplet_count += 1;
    }
    Ok(out)
}
