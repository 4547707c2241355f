//! Hard disjunctive-normal-form classifier over half-spaces. Scaling the
//! parameters of an [`LdnnModel`] drives its thresholded output toward this
//! classifier, which makes it a brute-force oracle for the soft network.

use crate::error::{check_len, LdnnError, Result};
use crate::model::LdnnModel;

/// Union of `N` polytopes, each the intersection of `M` closed half-spaces
/// `w_ij . x + b_ij >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDnf {
    halfspaces: LdnnModel,
}

impl DiscreteDnf {
    pub fn new(halfspaces: LdnnModel) -> Self {
        DiscreteDnf { halfspaces }
    }

    pub fn from_parts(
        inputs: usize,
        groups: usize,
        per_group: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        LdnnModel::from_parts(inputs, groups, per_group, weights, biases).map(Self::new)
    }

    pub fn halfspaces(&self) -> &LdnnModel {
        &self.halfspaces
    }

    /// Indicator of half-space `(i, j)`.
    pub fn halfspace(&self, i: usize, j: usize, x: &[f64]) -> bool {
        let m = &self.halfspaces;
        m.preactivation(i * m.per_group() + j, x) >= 0.0
    }

    /// 1 iff some polytope contains `x`.
    pub fn classify(&self, x: &[f64]) -> Result<bool> {
        let m = &self.halfspaces;
        check_len("dnf input", m.inputs(), x.len())?;
        Ok((0..m.groups()).any(|i| (0..m.per_group()).all(|j| self.halfspace(i, j, x))))
    }

    /// Smallest `|w_ij . x + b_ij|` over all half-spaces.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let m = &self.halfspaces;
        (0..m.units())
            .map(|u| m.preactivation(u, x).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn dnf_classify(dnf: &DiscreteDnf, x: &[f64]) -> Result<bool> {
    dnf.classify(x)
}

/// Fraction of margin-filtered points on which the soft network with all
/// parameters scaled by `scale`, thresholded at 0.5, agrees with the discrete
/// DNF built from the unscaled half-spaces.
///
/// Points closer than `margin` to any half-space boundary are discarded first.
pub fn saturation_agreement(
    model: &LdnnModel,
    scale: f64,
    points: &[Vec<f64>],
    margin: f64,
) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(LdnnError::param(format!("scale must be positive, got {scale}")));
    }
    let dnf = DiscreteDnf::new(model.clone());
    let soft = model.scaled(scale);
    let mut kept = 0usize;
    let mut agree = 0usize;
    for x in points {
        check_len("agreement point", model.inputs(), x.len())?;
        if dnf.margin(x) < margin {
            continue;
        }
        kept += 1;
        if soft.predict(x)? == dnf.classify(x)? {
            agree += 1;
        }
    }
    if kept == 0 {
        return Err(LdnnError::EmptyInput(format!(
            "no points left after filtering at margin {margin}"
        )));
    }
    Ok(agree as f64 / kept as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> DiscreteDnf {
        // x >= 0, 1 - x >= 0, y >= 0, 1 - y >= 0
        DiscreteDnf::from_parts(
            2,
            1,
            4,
            vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
            vec![0.0, 1.0, 0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn point_in_square() {
        let d = unit_square();
        assert!(d.classify(&[0.5, 0.5]).unwrap());
        assert!(!d.classify(&[2.0, 2.0]).unwrap());
        assert!(d.classify(&[0.0, 1.0]).unwrap(), "boundary is inclusive");
    }

    #[test]
    fn single_halfspace_sign() {
        let d = DiscreteDnf::from_parts(1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        assert!(!d.classify(&[-1.0]).unwrap());
        assert!(d.classify(&[0.0]).unwrap());
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..9).map(|_| rng.random_range(-0.5..0.5)).collect();
        let d = DiscreteDnf::from_parts(2, 3, 3, w.clone(), b.clone()).unwrap();
        for _ in 0..1000 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let mut any = false;
            for i in 0..3 {
                let mut all = true;
                for j in 0..3 {
                    let u = i * 3 + j;
                    if w[2 * u] * x[0] + w[2 * u + 1] * x[1] + b[u] < 0.0 {
                        all = false;
                    }
                }
                any |= all;
            }
            assert_eq!(d.classify(&x).unwrap(), any);
        }
    }

    #[test]
    fn scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
        let base = LdnnModel::from_parts(2, 2, 3, w, b).unwrap();
        let d = DiscreteDnf::new(base.clone());
        let d_scaled = DiscreteDnf::new(base.scaled(37.5));
        for _ in 0..500 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            assert_eq!(d.classify(&x).unwrap(), d_scaled.classify(&x).unwrap());
        }
    }

    #[test]
    fn single_halfspace_agrees_at_any_scale() {
        let model = LdnnModel::from_parts(2, 1, 1, vec![0.3, -0.8], vec![0.1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
            .collect();
        for scale in [1e-3, 0.5, 1.0, 10.0, 1e4] {
            assert_eq!(saturation_agreement(&model, scale, &pts, 0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn empty_after_filtering_is_an_error() {
        let model = LdnnModel::from_parts(1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        let pts = vec![vec![0.01], vec![-0.02]];
        assert!(matches!(
            saturation_agreement(&model, 10.0, &pts, 0.1),
            Err(LdnnError::EmptyInput(_))
        ));
        assert!(saturation_agreement(&model, 0.0, &pts, 0.0).is_err());
    }
}
