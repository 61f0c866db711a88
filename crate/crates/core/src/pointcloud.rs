//! Point clouds, the unit-sphere template and normalization into it.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// An N×3 matrix of finite coordinates, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.ncols() != 3 {
            return Err(Error::invalid(format!(
                "point cloud needs 3 columns, got {}",
                points.ncols()
            )));
        }
        if points.nrows() == 0 {
            return Err(Error::invalid("point cloud has no points"));
        }
        if let Some((i, _)) = points
            .outer_iter()
            .enumerate()
            .find(|(_, row)| row.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((rows.len(), 3), flat)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(points)
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }

    pub fn centroid(&self) -> Array1<f64> {
        self.points.mean_axis(Axis(0)).expect("non-empty cloud")
    }

    /// Rows reordered so that output row `i` is input row `order[i]`.
    pub fn select_rows(&self, order: &[usize]) -> Result<Self> {
        if let Some(&bad) = order.iter().find(|&&i| i >= self.n_points()) {
            return Err(Error::invalid(format!(
                "row index {bad} out of range for {} points",
                self.n_points()
            )));
        }
        Self::new(self.points.select(Axis(0), order))
    }
}

/// The fixed-radius sphere template S that serves as the generator's initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePrior {
    points: Array2<f64>,
}

impl SpherePrior {
    pub const RADIUS: f64 = 1.0;

    /// Wraps existing rows, checking that each has unit norm within 1e-6.
    pub fn from_points(points: Array2<f64>) -> Result<Self> {
        if points.ncols() != 3 || points.nrows() == 0 {
            return Err(Error::invalid(format!(
                "sphere prior needs an n×3 matrix with n ≥ 1, got {}×{}",
                points.nrows(),
                points.ncols()
            )));
        }
        for (i, row) in points.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            let deviation = (norm - Self::RADIUS).abs();
            if deviation.is_nan() || deviation > 1e-6 {
                return Err(Error::invalid(format!("sphere row {i} has norm {norm}")));
            }
        }
        Ok(Self { points })
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }
}

/// `n` points uniformly distributed on the unit sphere, deterministic in `seed`.
///
/// Each point is a normalized standard-normal 3-vector, which is exactly uniform
/// by rotational symmetry of the isotropic Gaussian.
pub fn sample_unit_sphere(n: usize, seed: u64) -> Result<SpherePrior> {
    if n == 0 {
        return Err(Error::invalid("sphere needs at least one point"));
    }
    let mut rng = rng_from_seed(seed);
    let mut points = Array2::zeros((n, 3));
    for mut row in points.outer_iter_mut() {
        loop {
            let v: [f64; 3] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            // Reject the (practically impossible) near-zero draw whose direction is unstable.
            if norm > 1e-12 {
                for (dst, x) in row.iter_mut().zip(v) {
                    *dst = x / norm;
                }
                break;
            }
        }
    }
    Ok(SpherePrior { points })
}

/// Similarity transform `x ↦ (x − center) · scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeTransform {
    pub center: [f64; 3],
    pub scale: f64,
}

impl NormalizeTransform {
    pub const IDENTITY: Self = Self {
        center: [0.0; 3],
        scale: 1.0,
    };

    /// Centers `pc` at the origin and scales its farthest point to norm 1.
    pub fn fit(pc: &PointCloud) -> Result<Self> {
        let first = pc.point(0);
        if pc.points().outer_iter().all(|row| row == first) {
            return Err(Error::DegenerateInput(
                "all points are identical, scale is undefined".into(),
            ));
        }
        let c = pc.centroid();
        let center = [c[0], c[1], c[2]];
        let max_norm = pc
            .points()
            .outer_iter()
            .map(|row| {
                let d = [row[0] - center[0], row[1] - center[1], row[2] - center[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .fold(0.0_f64, f64::max);
        if max_norm == 0.0 {
            return Err(Error::DegenerateInput("point cloud has zero extent".into()));
        }
        Ok(Self {
            center,
            scale: 1.0 / max_norm,
        })
    }

    pub fn apply_rows(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.center[j]) * self.scale;
            }
        }
        out
    }

    pub fn apply(&self, pc: &PointCloud) -> PointCloud {
        PointCloud {
            points: self.apply_rows(pc.points()),
        }
    }
}

/// Translate to zero centroid, then scale uniformly so the maximum row norm is 1.
pub fn normalize_to_unit_sphere(pc: &PointCloud) -> Result<PointCloud> {
    Ok(NormalizeTransform::fit(pc)?.apply(pc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = rng_from_seed(seed);
        let rows: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.random_range(-3.0..5.0),
                    rng.random_range(-1.0..2.0),
                    rng.random_range(0.0..10.0),
                ]
            })
            .collect();
        PointCloud::from_rows(&rows).unwrap()
    }

    fn max_norm(a: &Array2<f64>) -> f64 {
        a.outer_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }

    #[test]
    fn sphere_rows_have_unit_norm() {
        for seed in [0, 1, 99] {
            let s = sample_unit_sphere(2048, seed).unwrap();
            assert_eq!(s.n_points(), 2048);
            for row in s.points().outer_iter() {
                assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
            }
        }
        let one = sample_unit_sphere(1, 3).unwrap();
        let r = one.points().row(0);
        assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sphere_rejects_zero_points() {
        assert!(matches!(sample_unit_sphere(0, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sphere_mean_is_near_origin() {
        // Monte Carlo oracle: the mean of n uniform unit vectors has per-axis
        // standard deviation 1/sqrt(3n) ≈ 0.0128 at n = 2048, so its norm exceeds
        // 0.05 with negligible probability. Seed 7 gives ≈ 0.021.
        let s = sample_unit_sphere(2048, 7).unwrap();
        let m = s.points().mean_axis(Axis(0)).unwrap();
        assert!(m.dot(&m).sqrt() < 0.05);
    }

    #[test]
    fn sphere_is_deterministic() {
        assert_eq!(sample_unit_sphere(64, 5).unwrap(), sample_unit_sphere(64, 5).unwrap());
        assert_ne!(sample_unit_sphere(64, 5).unwrap(), sample_unit_sphere(64, 6).unwrap());
    }

    #[test]
    fn sphere_octants_are_balanced() {
        let s = sample_unit_sphere(4096, 11).unwrap();
        let mut counts = [0usize; 8];
        for row in s.points().outer_iter() {
            let idx = (row[0] > 0.0) as usize | ((row[1] > 0.0) as usize) << 1 | ((row[2] > 0.0) as usize) << 2;
            counts[idx] += 1;
        }
        for c in counts {
            let frac = c as f64 / 4096.0;
            assert!((0.08..=0.17).contains(&frac), "octant fraction {frac}");
        }
    }

    #[test]
    fn normalize_two_points() {
        let pc = PointCloud::from_rows(&[[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        let out = normalize_to_unit_sphere(&pc).unwrap();
        assert_eq!(out, PointCloud::from_rows(&[[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]]).unwrap());
    }

    #[test]
    fn normalize_random_cloud_by_recomputation() {
        let pc = random_cloud(64, 1);
        let out = normalize_to_unit_sphere(&pc).unwrap();
        assert!((max_norm(out.points()) - 1.0).abs() < 1e-9);
        let c = out.centroid();
        assert!(c.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn normalize_rejects_identical_points() {
        let pc = PointCloud::from_rows(&[[0.1, 0.2, 0.3]; 3]).unwrap();
        assert!(matches!(normalize_to_unit_sphere(&pc), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn cloud_rejects_non_finite() {
        assert!(PointCloud::from_rows(&[[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::new(Array2::zeros((0, 3))).is_err());
        assert!(PointCloud::new(Array2::zeros((2, 2))).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_and_similarity_preserving(seed in 0u64..10_000, n in 2usize..40) {
            let pc = random_cloud(n, seed);
            let once = normalize_to_unit_sphere(&pc).unwrap();
            let twice = normalize_to_unit_sphere(&once).unwrap();
            for (a, b) in once.points().iter().zip(twice.points()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            // Pairwise distance ratios against the first pair are unchanged.
            let dist = |m: &Array2<f64>, i: usize, j: usize| {
                let d = &m.row(i) - &m.row(j);
                d.dot(&d).sqrt()
            };
            let base_in = dist(pc.points(), 0, 1);
            let base_out = dist(once.points(), 0, 1);
            for i in 0..n {
                for j in (i + 1)..n {
                    let r_in = dist(pc.points(), i, j) / base_in;
                    let r_out = dist(once.points(), i, j) / base_out;
                    prop_assert!((r_in - r_out).abs() < 1e-9 * r_in.max(1.0));
                }
            }
        }
    }
}
