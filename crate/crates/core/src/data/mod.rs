//! Datasets: synthetic generators, file readers, normalization and splitting.

mod generators;
mod io;
mod normalize;
mod split;

pub use generators::{gen_blobs, gen_two_moons, gen_two_spirals, MoonsParams, SPIRAL_POINTS_PER_CLASS};
pub use io::{load_csv, load_idx, load_idx_limited, parse_csv, parse_idx, write_csv, LabelColumn};
pub use normalize::{apply_transform, normalize, NormalizeMode, Transform, WHITEN_EIGEN_FLOOR};
pub use split::split;

use crate::error::{check_len, LdnnError, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    classes: usize,
    /// Transform that produced these features, if any.
    pub normalization: Option<Transform>,
    /// `(height, width)` when rows are flattened single-channel images.
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    /// `classes` must exceed every label.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(LdnnError::param("dataset dimension must be positive"));
        }
        check_len("dataset features", labels.len() * dim, features.len())?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(LdnnError::param(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            dim,
            labels,
            classes,
            normalization: None,
            image_shape: None,
        })
    }

    /// Builds a dataset from rows; the class count is `max label + 1` (at least 2).
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], labels: Vec<usize>) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| LdnnError::EmptyInput("dataset has no rows".into()))?;
        let mut features = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            check_len("dataset row", dim, r.as_ref().len())?;
            features.extend_from_slice(r.as_ref());
        }
        let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
        Dataset::new(features, dim, labels, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    /// Rows whose label equals `class`, in dataset order.
    pub fn class_rows(&self, class: usize) -> Vec<&[f64]> {
        self.rows()
            .zip(&self.labels)
            .filter(|(_, &l)| l == class)
            .map(|(r, _)| r)
            .collect()
    }

    /// Rows whose label differs from `class`, in dataset order.
    pub fn other_rows(&self, class: usize) -> Vec<&[f64]> {
        self.rows()
            .zip(&self.labels)
            .filter(|(_, &l)| l != class)
            .map(|(r, _)| r)
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// New dataset made of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            dim: self.dim,
            labels,
            classes: self.classes,
            normalization: self.normalization.clone(),
            image_shape: self.image_shape,
        }
    }

    /// Copy with the features replaced (same row count).
    pub(crate) fn with_features(&self, features: Vec<f64>, dim: usize) -> Dataset {
        debug_assert_eq!(features.len(), dim * self.len());
        Dataset {
            features,
            dim,
            labels: self.labels.clone(),
            classes: self.classes,
            normalization: self.normalization.clone(),
            image_shape: if dim == self.dim { self.image_shape } else { None },
        }
    }

    /// Ensures the labels are exactly {0, 1} with both classes present.
    pub fn require_binary(&self) -> Result<()> {
        if self.classes != 2 {
            return Err(LdnnError::param(format!(
                "expected binary labels, dataset has {} classes",
                self.classes
            )));
        }
        let counts = self.class_counts();
        if counts.contains(&0) {
            return Err(LdnnError::param(format!(
                "binary training needs both classes, counts are {counts:?}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], 2, vec![0], 2).is_err());
        assert!(Dataset::new(vec![1.0, 2.0], 2, vec![2], 2).is_err());
        let d = Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![0, 1]).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert_eq!(d.class_counts(), vec![1, 1]);
    }

    #[test]
    fn require_binary() {
        let d = Dataset::from_rows(&[vec![1.0], vec![3.0]], vec![1, 1]).unwrap();
        assert!(d.require_binary().is_err());
        let d = Dataset::from_rows(&[vec![1.0], vec![3.0]], vec![0, 1]).unwrap();
        assert!(d.require_binary().is_ok());
    }
}
