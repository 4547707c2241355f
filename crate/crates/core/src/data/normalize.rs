use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{check_len, LdnnError, Result};

/// Eigenvalues below this fraction of the largest are floored before whitening.
pub const WHITEN_EIGEN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    #[default]
    None,
    Zscore,
    Whiten,
}

/// A fitted affine feature transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// `(x - mean) / std` per dimension; zero-variance dimensions map to 0.
    Zscore {
        means: Vec<f64>,
        stds: Vec<f64>,
        zero_variance: Vec<usize>,
    },
    /// `Lambda^{-1/2} U^T (x - mean)`; `matrix` is row-major `dim x dim`.
    Whiten { mean: Vec<f64>, matrix: Vec<f64> },
}

impl Transform {
    pub fn dim(&self) -> usize {
        match self {
            Transform::Zscore { means, .. } => means.len(),
            Transform::Whiten { mean, .. } => mean.len(),
        }
    }

    pub fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Transform::Zscore { means, stds, .. } => {
                for ((o, v), (m, s)) in out.iter_mut().zip(x).zip(means.iter().zip(stds)) {
                    *o = if *s > 0.0 { (v - m) / s } else { 0.0 };
                }
            }
            Transform::Whiten { mean, matrix } => {
                let d = mean.len();
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &matrix[r * d..(r + 1) * d];
                    *o = row
                        .iter()
                        .zip(x.iter().zip(mean))
                        .map(|(w, (v, m))| w * (v - m))
                        .sum();
                }
            }
        }
    }
}

fn column_means(ds: &Dataset) -> Vec<f64> {
    let mut means = vec![0.0; ds.dim()];
    for row in ds.rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= ds.len() as f64);
    means
}

/// Fits `mode` on `dataset` and returns the transformed data with its transform.
/// Moments are population moments (divide by the row count).
pub fn normalize(dataset: &Dataset, mode: NormalizeMode) -> Result<(Dataset, Option<Transform>)> {
    if dataset.is_empty() {
        return Err(LdnnError::EmptyInput("cannot normalize an empty dataset".into()));
    }
    let transform = match mode {
        NormalizeMode::None => return Ok((dataset.clone(), None)),
        NormalizeMode::Zscore => fit_zscore(dataset),
        NormalizeMode::Whiten => fit_whiten(dataset)?,
    };
    let out = apply_transform(&transform, dataset)?;
    Ok((out, Some(transform)))
}

fn fit_zscore(ds: &Dataset) -> Transform {
    let means = column_means(ds);
    let mut vars = vec![0.0; ds.dim()];
    for row in ds.rows() {
        for ((v, x), m) in vars.iter_mut().zip(row).zip(&means) {
            *v += (x - m) * (x - m);
        }
    }
    let stds: Vec<f64> = vars.iter().map(|v| (v / ds.len() as f64).sqrt()).collect();
    let zero_variance: Vec<usize> = stds
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 0.0)
        .map(|(d, _)| d)
        .collect();
    if !zero_variance.is_empty() {
        log::warn!("zero-variance dimensions mapped to 0: {zero_variance:?}");
    }
    Transform::Zscore {
        means,
        stds,
        zero_variance,
    }
}

fn fit_whiten(ds: &Dataset) -> Result<Transform> {
    let d = ds.dim();
    let mean = column_means(ds);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in ds.rows() {
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    let n = ds.len() as f64;
    for a in 0..d {
        for b in a..d {
            cov[(a, b)] /= n;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if !(largest > 0.0) {
        return Err(LdnnError::param("cannot whiten data with zero covariance"));
    }
    let floor = largest * WHITEN_EIGEN_FLOOR;
    let mut matrix = vec![0.0; d * d];
    for (r, &e) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[e].max(floor);
        let scale = 1.0 / lambda.sqrt();
        let vec = eig.eigenvectors.column(e);
        // Fix the eigenvector sign so the transform is reproducible.
        let pivot = vec.iter().fold(0.0f64, |acc, &v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for c in 0..d {
            matrix[r * d + c] = sign * scale * vec[c];
        }
    }
    Ok(Transform::Whiten { mean, matrix })
}

/// Applies a previously fitted transform unchanged.
pub fn apply_transform(transform: &Transform, dataset: &Dataset) -> Result<Dataset> {
    check_len("transform input", transform.dim(), dataset.dim())?;
    let d = dataset.dim();
    let mut features = vec![0.0; dataset.len() * d];
    for (row, out) in dataset.rows().zip(features.chunks_exact_mut(d)) {
        transform.apply_row(row, out);
    }
    let mut out = dataset.with_features(features, d);
    out.normalization = Some(transform.clone());
    Ok(out)
}
