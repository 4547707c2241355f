//! Modular-network baseline: the same `N x M` discriminant grid as an LDNN,
//! but every discriminant is trained on its own pair of clusters and the
//! outputs are combined with `max_i min_j sigma_ij`.

use crate::data::Dataset;
use crate::error::{check_len, LdnnError, Result};
use crate::init::{cluster_classes, initialize_from_centroids, Clustering, InitMode};
use crate::model::{sigmoid, LdnnModel};
use crate::seed::{derive_seed, rng_from};
use crate::train::{train_epoch, TrainConfig, Velocity, INIT_TAG, SHUFFLE_TAG};

#[derive(Debug, Clone, PartialEq)]
pub struct ModnModel {
    grid: LdnnModel,
    /// True when the discriminants were fitted pair by pair.
    pub pairwise: bool,
}

impl ModnModel {
    pub fn new(grid: LdnnModel, pairwise: bool) -> Self {
        ModnModel { grid, pairwise }
    }

    pub fn grid(&self) -> &LdnnModel {
        &self.grid
    }

    /// `(max_i min_j sigma_ij(x), score >= 0.5)`.
    pub fn classify(&self, x: &[f64]) -> Result<(f64, bool)> {
        check_len("modn input", self.grid.inputs(), x.len())?;
        let m = self.grid.per_group();
        let mut score = f64::NEG_INFINITY;
        for i in 0..self.grid.groups() {
            let group_min = (0..m)
                .map(|j| sigmoid(self.grid.preactivation(i * m + j, x)))
                .fold(f64::INFINITY, f64::min);
            score = score.max(group_min);
        }
        Ok((score, score >= 0.5))
    }
}

pub fn modn_classify(model: &ModnModel, x: &[f64]) -> Result<(f64, bool)> {
    model.classify(x)
}

/// Training data for discriminant `(i, j)`: positive cluster `i` and negative
/// cluster `j` only, in original dataset order.
pub fn pair_data(
    positives: &Dataset,
    negatives: &Dataset,
    pos_clusters: &Clustering,
    neg_clusters: &Clustering,
    i: usize,
    j: usize,
) -> Result<Dataset> {
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut labels = Vec::new();
    for p in pos_clusters.members(i) {
        rows.push(positives.row(p));
        labels.push(1);
    }
    for q in neg_clusters.members(j) {
        rows.push(negatives.row(q));
        labels.push(0);
    }
    Dataset::new(rows.concat(), positives.dim(), labels, 2)
}

/// Fits one logistic discriminant starting from `(w, b)`; returns the new pair.
pub fn fit_pair(data: &Dataset, w: &[f64], b: f64, cfg: &TrainConfig, shuffle_seed: u64) -> Result<(Vec<f64>, f64)> {
    let mut unit = LdnnModel::from_parts(data.dim(), 1, 1, w.to_vec(), vec![b])?;
    let mut velocity = Velocity::zeros_like(&unit);
    let mut rng = rng_from(shuffle_seed);
    for (e, step) in cfg.schedule().into_iter().enumerate() {
        train_epoch(&mut unit, data, step, cfg.momentum, cfg.loss, &mut velocity, &mut rng, e + 1)?;
    }
    Ok((unit.weights().to_vec(), unit.biases()[0]))
}

/// Clusters each class, initializes every discriminant with the pairwise
/// centroid rule (same seeds as [`crate::train::fit`], so both start from the
/// identical grid) and trains each one on its cluster pair alone.
///
/// Step, momentum, loss and epochs come from `cfg`; early stopping is not
/// applied to the pairwise fits.
pub fn train_modn(data: &Dataset, init: &InitMode, cfg: &TrainConfig) -> Result<ModnModel> {
    data.require_binary()?;
    cfg.validate()?;
    if !init.is_clustered() {
        return Err(LdnnError::param("the modular baseline needs a clustering initialization"));
    }
    let positives = data.subset(&indices_of(data, 1));
    let negatives = data.subset(&indices_of(data, 0));
    let init_seed = derive_seed(cfg.seed, INIT_TAG);
    let pos_rows: Vec<&[f64]> = positives.rows().collect();
    let neg_rows: Vec<&[f64]> = negatives.rows().collect();
    let (pc, nc) = cluster_classes(&pos_rows, &neg_rows, init, init_seed)?;
    let mut grid = initialize_from_centroids(&pc.centroids, &nc.centroids, derive_seed(init_seed, 3))?;
    let m = grid.per_group();
    let shuffle_base = derive_seed(cfg.seed, SHUFFLE_TAG);
    for i in 0..grid.groups() {
        for j in 0..m {
            let u = i * m + j;
            let pair = pair_data(&positives, &negatives, &pc, &nc, i, j)?;
            // Pair 0 reuses the LDNN shuffling stream; see `SHUFFLE_TAG`.
            let seed = if u == 0 {
                shuffle_base
            } else {
                derive_seed(cfg.seed, SHUFFLE_TAG + u as u64)
            };
            let (w, b) = fit_pair(&pair, grid.discriminant(i, j), grid.bias(i, j), cfg, seed)?;
            grid.discriminant_mut(i, j).copy_from_slice(&w);
            grid.set_bias(i, j, b);
        }
    }
    Ok(ModnModel::new(grid, true))
}

fn indices_of(data: &Dataset, class: usize) -> Vec<usize> {
    (0..data.len()).filter(|&i| data.label(i) == class).collect()
}
