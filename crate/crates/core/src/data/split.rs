use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{LdnnError, Result};
use crate::seed::rng_from;

/// Part sizes for `total` items: boundaries at `round(total * cumulative fraction)`.
fn part_sizes(total: usize, fractions: &[f64]) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(fractions.len());
    let mut cumulative = 0.0;
    let mut prev = 0usize;
    for (p, f) in fractions.iter().enumerate() {
        cumulative += f;
        let bound = if p + 1 == fractions.len() {
            total
        } else {
            ((total as f64 * cumulative).round() as usize).min(total)
        };
        sizes.push(bound.saturating_sub(prev));
        prev = bound.max(prev);
    }
    sizes
}

/// Seeded random split into parts of the given fractions.
///
/// With `stratified`, every class is split separately so each part keeps the
/// global class proportions to within one instance. Rows keep their original
/// relative order inside each part.
pub fn split(dataset: &Dataset, fractions: &[f64], seed: u64, stratified: bool) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(LdnnError::param(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(LdnnError::param(format!("split fractions sum to {sum}, not 1")));
    }
    let mut rng = rng_from(seed);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    let groups: Vec<Vec<usize>> = if stratified {
        (0..dataset.classes())
            .map(|c| (0..dataset.len()).filter(|&i| dataset.label(i) == c).collect())
            .collect()
    } else {
        vec![(0..dataset.len()).collect()]
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let mut start = 0;
        for (part, size) in parts.iter_mut().zip(part_sizes(group.len(), fractions)) {
            part.extend_from_slice(&group[start..start + size]);
            start += size;
        }
    }
    parts
        .into_iter()
        .enumerate()
        .map(|(p, mut idx)| {
            if idx.is_empty() {
                return Err(LdnnError::param(format!(
                    "split part {p} (fraction {}) would be empty",
                    fractions[p]
                )));
            }
            idx.sort_unstable();
            Ok(dataset.subset(&idx))
        })
        .collect()
}
