use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample class probabilities: rows are samples, columns are class codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix(Array2<f64>);

impl ProbabilityMatrix {
    pub const ROW_SUM_TOL: f64 = 1e-9;

    /// Wraps a matrix, checking entries lie in [0, 1] and rows sum to one.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for (i, row) in values.rows().into_iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0 + Self::ROW_SUM_TOL).contains(&p)) {
                return Err(Error::ShapeMismatch(format!(
                    "probability row {i} has an entry outside [0, 1]"
                )));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > Self::ROW_SUM_TOL {
                return Err(Error::ShapeMismatch(format!(
                    "probability row {i} sums to {s}"
                )));
            }
        }
        Ok(Self(values))
    }

    pub(crate) fn new_unchecked(values: Array2<f64>) -> Self {
        Self(values)
    }

    pub fn n_samples(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Column of scores for one class.
    pub fn class_scores(&self, class: usize) -> Vec<f64> {
        self.0.column(class).to_vec()
    }

    /// Row-wise argmax; ties go to the lowest class code.
    pub fn argmax(&self) -> Vec<usize> {
        self.0.rows().into_iter().map(|r| argmax(r.iter().copied())).collect()
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Numerically stable softmax of one score row, written in place.
pub fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}
