//! The point cloud: N points in R^n, one per matrix row, with optional class labels.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Scalar> {
    points: DMatrix<T>,
    labels: Option<Vec<String>>,
}

impl<T: Scalar> PointCloud<T> {
    /// Wraps an N x n matrix. Rejects empty clouds and non-finite entries.
    pub fn new(points: DMatrix<T>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "point cloud must be non-empty, got {}x{}",
                points.nrows(),
                points.ncols()
            )));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            // column-major storage
            let (row, col) = (pos % points.nrows(), pos / points.nrows());
            return Err(Error::InvalidInput(format!(
                "non-finite entry at row {row}, column {col}"
            )));
        }
        Ok(Self {
            points,
            labels: None,
        })
    }

    /// Builds a cloud from row-major data.
    pub fn from_row_slice(n_points: usize, dim: usize, data: &[T]) -> Result<Self> {
        if data.len() != n_points * dim {
            return Err(Error::InvalidInput(format!(
                "expected {} values for a {n_points}x{dim} cloud, got {}",
                n_points * dim,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n_points, dim, data))
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: rows[i].len(),
            });
        }
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        Self::from_row_slice(rows.len(), dim, &flat)
    }

    /// Attaches one class label per point.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} points",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// Number of points N.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    /// Always false: clouds hold at least one point.
    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Ambient dimension n.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<T> {
        &self.points
    }

    pub fn into_points(self) -> DMatrix<T> {
        self.points
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Copy of point `i` as a plain vector.
    pub fn row(&self, i: usize) -> Vec<T> {
        self.points.row(i).iter().copied().collect()
    }

    pub fn row_vector(&self, i: usize) -> DVector<T> {
        self.points.row(i).transpose()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<T>> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// Row-major copy of all coordinates.
    pub fn to_row_major(&self) -> Vec<T> {
        self.points.transpose().as_slice().to_vec()
    }

    /// Sub-cloud made of the given rows (labels follow).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidInput("empty selection".into()));
        }
        let points = self.points.select_rows(indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i].clone()).collect());
        Ok(Self { points, labels })
    }

    /// Column means.
    pub fn mean(&self) -> DVector<T> {
        self.points.row_mean().transpose()
    }

    /// Euclidean norm of every point.
    pub fn norms(&self) -> Vec<T> {
        self.points.row_iter().map(|r| r.norm()).collect()
    }

    /// Converts to another scalar type through `f64`.
    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        PointCloud {
            points: self.points.map(|v| U::of(v.f64())),
            labels: self.labels.clone(),
        }
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for PointCloud<T> {
    type Output = T;

    fn index(&self, idx: (usize, usize)) -> &T {
        &self.points[idx]
    }
}
