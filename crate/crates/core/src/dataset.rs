use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{ensure_shape, LmlError, Result};
use crate::scalar::Real;

/// Rows of feature vectors with integer class labels, tagged with the task
/// they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    x: Array2<T>,
    y: Vec<i64>,
    task_id: String,
}

impl<T: Real> LabeledDataset<T> {
    pub fn new(x: Array2<T>, y: Vec<i64>, task_id: impl Into<String>) -> Result<Self> {
        ensure_shape(x.nrows() == y.len(), || format!("{} feature rows but {} labels", x.nrows(), y.len()))?;
        if x.nrows() == 0 {
            return Err(LmlError::config("no samples"));
        }
        if let Some((pos, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(LmlError::config(format!(
                "non-finite feature at row {}, column {}",
                pos / x.ncols(),
                pos % x.ncols()
            )));
        }
        Ok(LabeledDataset { x, y, task_id: task_id.into() })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Ambient feature dimension.
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn features(&self) -> &Array2<T> {
        &self.x
    }

    pub fn labels(&self) -> &[i64] {
        &self.y
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn set_task_id(&mut self, id: impl Into<String>) {
        self.task_id = id.into();
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.x.row(i)
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<i64> {
        let mut c = self.y.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Row indices grouped by label, in ascending label order.
    pub fn class_members(&self) -> BTreeMap<i64, Vec<usize>> {
        let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &label) in self.y.iter().enumerate() {
            groups.entry(label).or_default().push(i);
        }
        groups
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(LmlError::Index(format!("row {bad} of {}", self.len())));
        }
        let x = self.x.select(Axis(0), indices);
        let y = indices.iter().map(|&i| self.y[i]).collect();
        LabeledDataset::new(x, y, self.task_id.clone())
    }

    /// Appends the rows of `other` below these rows.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        ensure_shape(self.dim() == other.dim(), || {
            format!("cannot append {}-dim rows to {}-dim dataset", other.dim(), self.dim())
        })?;
        let x = ndarray::concatenate(Axis(0), &[self.x.view(), other.x.view()])
            .map_err(|e| LmlError::shape(e.to_string()))?;
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        LabeledDataset::new(x, y, self.task_id.clone())
    }
}
