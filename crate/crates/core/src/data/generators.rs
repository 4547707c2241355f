use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{LdnnError, Result};
use crate::seed::rng_from;

/// Two-moons parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoonsParams {
    /// Points per moon.
    pub count: usize,
    /// Moon radius `R`.
    pub radius: f64,
    /// Moon width `W`; radii are uniform on `[R - W/2, R + W/2]`.
    pub width: f64,
    /// Vertical separation; the lower moon is moved down by this amount.
    pub separation: f64,
}

impl Default for MoonsParams {
    fn default() -> Self {
        MoonsParams {
            count: 1000,
            radius: 1.0,
            width: 0.7,
            separation: -0.7,
        }
    }
}

/// Two interleaved half-rings.
///
/// Upper moon (label 1): `(r cos t, r sin t)` with `t ~ U[0, pi]`.
/// Lower moon (label 0): `(r cos t + R, r sin t - separation)` with
/// `t ~ U[pi, 2 pi]`, i.e. the lower ring is centred at `(R, -separation)`.
/// Upper-moon points come first, then lower-moon points.
pub fn gen_two_moons(params: &MoonsParams, seed: u64) -> Result<Dataset> {
    let MoonsParams {
        count,
        radius,
        width,
        separation,
    } = *params;
    if !(radius > 0.0) || !(width >= 0.0) || !separation.is_finite() {
        return Err(LdnnError::param(format!(
            "two-moons needs R > 0, W >= 0 and finite separation, got R={radius}, W={width}, sep={separation}"
        )));
    }
    if count == 0 {
        return Err(LdnnError::param("two-moons needs at least one point per moon"));
    }
    let mut rng = rng_from(seed);
    let mut features = Vec::with_capacity(4 * count);
    let mut labels = Vec::with_capacity(2 * count);
    let (lo, hi) = (radius - width / 2.0, radius + width / 2.0);
    let draw_radius = |rng: &mut rand_chacha::ChaCha8Rng| {
        if width == 0.0 {
            radius
        } else {
            rng.random_range(lo..=hi)
        }
    };
    for _ in 0..count {
        let r = draw_radius(&mut rng);
        let t = rng.random_range(0.0..=PI);
        features.extend_from_slice(&[r * t.cos(), r * t.sin()]);
        labels.push(1);
    }
    for _ in 0..count {
        let r = draw_radius(&mut rng);
        let t = rng.random_range(PI..=2.0 * PI);
        features.extend_from_slice(&[r * t.cos() + radius, r * t.sin() - separation]);
        labels.push(0);
    }
    Dataset::new(features, 2, labels, 2)
}

pub const SPIRAL_POINTS_PER_CLASS: usize = 97;

/// The classic 194-point two-spirals benchmark (three turns, outer radius 6.5).
///
/// Point `i` of the first spiral (label 1) is `(r sin phi, r cos phi)` with
/// `phi = i pi / 16` and `r = 6.5 (104 - i) / 104`; the second spiral
/// (label 0) is its point reflection through the origin. Points alternate
/// between the spirals.
pub fn gen_two_spirals() -> Dataset {
    let mut features = Vec::with_capacity(4 * SPIRAL_POINTS_PER_CLASS);
    let mut labels = Vec::with_capacity(2 * SPIRAL_POINTS_PER_CLASS);
    for i in 0..SPIRAL_POINTS_PER_CLASS {
        let phi = i as f64 * PI / 16.0;
        let r = 6.5 * (104 - i) as f64 / 104.0;
        let (x, y) = (r * phi.sin(), r * phi.cos());
        features.extend_from_slice(&[x, y, -x, -y]);
        labels.extend_from_slice(&[1, 0]);
    }
    Dataset::new(features, 2, labels, 2).expect("spiral construction is well formed")
}

/// Isotropic Gaussian blobs, `count` points per center, class = center index.
pub fn gen_blobs(centers: &[Vec<f64>], std: f64, count: usize, seed: u64) -> Result<Dataset> {
    let dim = centers
        .first()
        .map(Vec::len)
        .ok_or_else(|| LdnnError::param("need at least one blob center"))?;
    let normal = Normal::new(0.0, std).map_err(|e| LdnnError::param(e.to_string()))?;
    let mut rng = rng_from(seed);
    let mut features = Vec::with_capacity(centers.len() * count * dim);
    let mut labels = Vec::with_capacity(centers.len() * count);
    for (c, center) in centers.iter().enumerate() {
        crate::error::check_len("blob center", dim, center.len())?;
        for _ in 0..count {
            features.extend(center.iter().map(|m| m + normal.sample(&mut rng)));
            labels.push(c);
        }
    }
    Dataset::new(features, dim, labels, centers.len().max(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_balanced_and_deterministic() {
        let p = MoonsParams::default();
        let a = gen_two_moons(&p, 7).unwrap();
        let b = gen_two_moons(&p, 7).unwrap();
        let c = gen_two_moons(&p, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.features(), c.features());
        assert_eq!(a.class_counts(), vec![1000, 1000]);
    }

    #[test]
    fn zero_width_moons_lie_on_circles() {
        let p = MoonsParams {
            count: 200,
            width: 0.0,
            ..MoonsParams::default()
        };
        let d = gen_two_moons(&p, 1).unwrap();
        for (row, &l) in d.rows().zip(d.labels()) {
            let (x, y) = if l == 1 {
                (row[0], row[1])
            } else {
                (row[0] - p.radius, row[1] + p.separation)
            };
            assert!(((x * x + y * y).sqrt() - p.radius).abs() < 1e-12);
            if l == 1 {
                assert!(row[1] >= 0.0);
            }
        }
    }

    #[test]
    fn radii_within_band() {
        let p = MoonsParams::default();
        let d = gen_two_moons(&p, 3).unwrap();
        for row in d.rows().take(p.count) {
            let r = (row[0] * row[0] + row[1] * row[1]).sqrt();
            assert!(r >= 0.65 - 1e-12 && r <= 1.35 + 1e-12);
        }
    }

    #[test]
    fn moons_parameter_errors() {
        let bad = MoonsParams {
            radius: 0.0,
            ..MoonsParams::default()
        };
        assert!(gen_two_moons(&bad, 0).is_err());
        let bad = MoonsParams {
            width: -1.0,
            ..MoonsParams::default()
        };
        assert!(gen_two_moons(&bad, 0).is_err());
    }

    #[test]
    fn spirals_shape() {
        let d = gen_two_spirals();
        assert_eq!(d.len(), 194);
        assert_eq!(d.class_counts(), vec![97, 97]);
        let a = d.class_rows(1);
        let b = d.class_rows(0);
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p[0], -q[0]);
            assert_eq!(p[1], -q[1]);
        }
        let max_angle = 96.0 * PI / 16.0;
        assert!((max_angle - 6.0 * PI).abs() < 1e-12);
        assert!((a[0][1] - 6.5).abs() < 1e-12);
    }

    #[test]
    fn blobs() {
        let d = gen_blobs(&[vec![0.0, 0.0], vec![5.0, 5.0], vec![0.0, 5.0]], 1.0, 10, 0).unwrap();
        assert_eq!(d.classes(), 3);
        assert_eq!(d.class_counts(), vec![10, 10, 10]);
    }
}
