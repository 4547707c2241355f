//! Clustering and weight initialization.
//!
//! A cluster-initialized `N x M` network places one discriminant between every
//! (positive centroid, negative centroid) pair: its weight vector is the unit
//! vector pointing from the negative to the positive centroid and its bias puts
//! the 0.5 level set through the midpoint of the two.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, LdnnError, Result};
use crate::model::LdnnModel;
use crate::seed::{derive_seed, derived_rng, rng_from};

/// Lloyd iterations are capped at this count per restart.
pub const MAX_LLOYD_ITERATIONS: usize = 300;

/// Centroid pairs closer than this are jittered apart before normalizing.
pub const COINCIDENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of every input point.
    pub assignment: Vec<usize>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub sse: f64,
}

impl Clustering {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Indices of the points assigned to `cluster`.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == cluster)
            .map(|(p, _)| p)
            .collect()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(x, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn check_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| LdnnError::param("cannot cluster an empty point set"))?;
    let dim = first.as_ref().len();
    for p in points {
        check_len("clustering point", dim, p.as_ref().len())?;
    }
    Ok(dim)
}

fn cluster_means<P: AsRef<[f64]>>(
    points: &[P],
    assignment: &[usize],
    k: usize,
    dim: usize,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p.as_ref()) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

/// One run of Lloyd's algorithm from the given centroids.
///
/// Returns the final clustering and the SSE recorded after every assignment
/// step. The run ends after an assignment step, either because the assignment
/// reached a fixed point or after [`MAX_LLOYD_ITERATIONS`] steps. A centroid
/// that loses all its points is moved to the data point farthest from where it
/// was.
pub fn lloyd<P: AsRef<[f64]>>(
    points: &[P],
    mut centroids: Vec<Vec<f64>>,
) -> Result<(Clustering, Vec<f64>)> {
    let dim = check_points(points)?;
    let k = centroids.len();
    if k == 0 {
        return Err(LdnnError::param("lloyd needs at least one centroid"));
    }
    let mut assignment = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        let mut sse = 0.0;
        for (p, a) in points.iter().zip(assignment.iter_mut()) {
            let (c, d) = nearest(p.as_ref(), &centroids);
            sse += d;
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        history.push(sse);
        if !changed {
            break;
        }
        let (means, counts) = cluster_means(points, &assignment, k, dim);
        let mut taken = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = means[c].clone();
                continue;
            }
            let old = &centroids[c];
            let mut far = None;
            let mut far_d = -1.0;
            for (p, point) in points.iter().enumerate() {
                if taken.contains(&p) {
                    continue;
                }
                let d = sq_dist(point.as_ref(), old);
                if d > far_d {
                    far_d = d;
                    far = Some(p);
                }
            }
            if let Some(p) = far {
                taken.push(p);
                centroids[c] = points[p].as_ref().to_vec();
            }
        }
    }
    let sse = *history.last().expect("at least one assignment step");
    Ok((
        Clustering {
            centroids,
            assignment,
            sse,
        },
        history,
    ))
}

/// k-means with `restarts` seeded random starts (k distinct data points each);
/// the run with the lowest SSE wins, ties going to the earliest restart.
pub fn kmeans<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Clustering> {
    check_points(points)?;
    if k == 0 || k > points.len() {
        return Err(LdnnError::param(format!(
            "k-means needs 1 <= k <= #points, got k={k} for {} points",
            points.len()
        )));
    }
    if restarts == 0 {
        return Err(LdnnError::param("k-means needs at least one restart"));
    }
    let mut best: Option<Clustering> = None;
    for restart in 0..restarts {
        let mut rng = derived_rng(seed, restart as u64);
        let start = index::sample(&mut rng, points.len(), k)
            .into_iter()
            .map(|p| points[p].as_ref().to_vec())
            .collect();
        let (run, _) = lloyd(points, start)?;
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Farthest-first threshold clustering.
///
/// The first point in dataset order seeds the first centroid. The point
/// farthest from every existing centroid is then promoted to a new centroid
/// for as long as that distance exceeds `threshold` (lowest index on ties).
/// Points are assigned to the nearest seed, each centroid is replaced by the
/// mean of its cluster, and a final pass reassigns points to the nearest mean.
pub fn farthest_distance_clustering<P: AsRef<[f64]>>(
    points: &[P],
    threshold: f64,
) -> Result<Clustering> {
    let dim = check_points(points)?;
    if !(threshold > 0.0) {
        return Err(LdnnError::param(format!(
            "distance threshold must be positive, got {threshold}"
        )));
    }
    let mut seeds = vec![0usize];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p.as_ref(), points[0].as_ref()).sqrt())
        .collect();
    loop {
        let (far, far_d) = dist
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (p, &d)| if d > best.1 { (p, d) } else { best });
        if far_d <= threshold {
            break;
        }
        seeds.push(far);
        let c = points[far].as_ref();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p.as_ref(), c).sqrt());
        }
    }
    let seed_centroids: Vec<Vec<f64>> = seeds.iter().map(|&s| points[s].as_ref().to_vec()).collect();
    let assignment: Vec<usize> = points
        .iter()
        .map(|p| nearest(p.as_ref(), &seed_centroids).0)
        .collect();
    let (centroids, _) = cluster_means(points, &assignment, seeds.len(), dim);
    let mut sse = 0.0;
    let assignment = points
        .iter()
        .map(|p| {
            let (c, d) = nearest(p.as_ref(), &centroids);
            sse += d;
            c
        })
        .collect();
    Ok(Clustering {
        centroids,
        assignment,
        sse,
    })
}

/// How a network's discriminant grid is initialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitMode {
    /// Uniform(-0.5, 0.5) weights, zero biases.
    Random { groups: usize, per_group: usize },
    /// `groups` k-means clusters of the positives, `per_group` of the negatives.
    Kmeans {
        groups: usize,
        per_group: usize,
        restarts: usize,
    },
    /// Farthest-first clustering of each class; the grid shape follows from the
    /// resulting cluster counts.
    Farthest { threshold: f64 },
}

impl InitMode {
    pub fn is_clustered(&self) -> bool {
        !matches!(self, InitMode::Random { .. })
    }
}

/// Clusters positives and negatives independently.
pub fn cluster_classes<P: AsRef<[f64]>>(
    positives: &[P],
    negatives: &[P],
    mode: &InitMode,
    seed: u64,
) -> Result<(Clustering, Clustering)> {
    match *mode {
        InitMode::Random { .. } => Err(LdnnError::param(
            "random initialization does not cluster the data",
        )),
        InitMode::Kmeans {
            groups,
            per_group,
            restarts,
        } => Ok((
            kmeans(positives, groups, restarts, derive_seed(seed, 1))?,
            kmeans(negatives, per_group, restarts, derive_seed(seed, 2))?,
        )),
        InitMode::Farthest { threshold } => Ok((
            farthest_distance_clustering(positives, threshold)?,
            farthest_distance_clustering(negatives, threshold)?,
        )),
    }
}

/// Pairwise-centroid initialization: one discriminant per
/// (positive centroid `i`, negative centroid `j`).
pub fn initialize_from_centroids(
    positive_centroids: &[Vec<f64>],
    negative_centroids: &[Vec<f64>],
    seed: u64,
) -> Result<LdnnModel> {
    let groups = positive_centroids.len();
    let per_group = negative_centroids.len();
    let dim = positive_centroids
        .first()
        .or(negative_centroids.first())
        .map(Vec::len)
        .unwrap_or(0);
    let mut model = LdnnModel::zeros(dim, groups, per_group)?;
    let mut rng = rng_from(seed);
    for (i, cp) in positive_centroids.iter().enumerate() {
        check_len("positive centroid", dim, cp.len())?;
        for (j, cn) in negative_centroids.iter().enumerate() {
            check_len("negative centroid", dim, cn.len())?;
            let (w, b) = pair_discriminant(cp, cn, &mut rng);
            model.discriminant_mut(i, j).copy_from_slice(&w);
            model.set_bias(i, j, b);
        }
    }
    Ok(model)
}

/// Unit normal pointing from `negative` to `positive` and the bias placing the
/// 0.5 level set at their midpoint.
pub fn pair_discriminant<R: Rng>(positive: &[f64], negative: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
    let mut neg = negative.to_vec();
    loop {
        let v: Vec<f64> = positive.iter().zip(&neg).map(|(p, q)| p - q).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm >= COINCIDENT_EPS {
            let w: Vec<f64> = v.iter().map(|x| x / norm).collect();
            let b = -w
                .iter()
                .zip(positive.iter().zip(&neg))
                .map(|(w, (p, q))| w * 0.5 * (p + q))
                .sum::<f64>();
            return (w, b);
        }
        for q in neg.iter_mut() {
            *q += rng.random_range(-1e-6..1e-6);
        }
    }
}

/// Uniform(-0.5, 0.5) weights and zero biases.
pub fn initialize_random(inputs: usize, groups: usize, per_group: usize, seed: u64) -> Result<LdnnModel> {
    let mut model = LdnnModel::zeros(inputs, groups, per_group)?;
    let mut rng = rng_from(seed);
    for w in model.weights_mut() {
        *w = rng.random_range(-0.5..0.5);
    }
    Ok(model)
}

/// Builds a model from labelled data according to `mode`.
pub fn initialize_ldnn<P: AsRef<[f64]>>(
    positives: &[P],
    negatives: &[P],
    mode: &InitMode,
    seed: u64,
) -> Result<LdnnModel> {
    match *mode {
        InitMode::Random { groups, per_group } => {
            let dim = check_points(positives)?;
            initialize_random(dim, groups, per_group, seed)
        }
        _ => {
            let (pos, neg) = cluster_classes(positives, negatives, mode, seed)?;
            initialize_from_centroids(&pos.centroids, &neg.centroids, derive_seed(seed, 3))
        }
    }
}
