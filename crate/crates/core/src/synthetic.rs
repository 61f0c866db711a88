//! Small procedural shape families for smoke runs and tests.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::Result;
use crate::pointcloud::{normalize_to_unit_sphere, PointCloud};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeFamily {
    /// Two Gaussian blobs along a random axis.
    TwoBlobs,
    /// Points on the surface of an axis-aligned box with random extents.
    BoxSurface,
    /// Points on a torus with random radii, tilted at random.
    Torus,
    /// A noisy helix with a random number of turns.
    Helix,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] = [
        ShapeFamily::TwoBlobs,
        ShapeFamily::BoxSurface,
        ShapeFamily::Torus,
        ShapeFamily::Helix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::TwoBlobs => "blobs",
            ShapeFamily::BoxSurface => "box",
            ShapeFamily::Torus => "torus",
            ShapeFamily::Helix => "helix",
        }
    }
}

fn two_blobs(n: usize, rng: &mut Rng) -> Array2<f64> {
    let axis: [f64; 3] = {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-9);
        v.map(|x| x / norm)
    };
    let sep = rng.random_range(0.6..1.0);
    let sigmas = [rng.random_range(0.08..0.2), rng.random_range(0.08..0.2)];
    let mut out = Array2::zeros((n, 3));
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let side = if i < n / 2 { 1.0 } else { -1.0 };
        let noise = Normal::new(0.0, sigmas[(side < 0.0) as usize]).unwrap();
        for j in 0..3 {
            row[j] = side * sep * axis[j] + noise.sample(rng);
        }
    }
    out
}

fn box_surface(n: usize, rng: &mut Rng) -> Array2<f64> {
    let ext = [
        rng.random_range(0.3..1.0),
        rng.random_range(0.3..1.0),
        rng.random_range(0.3..1.0),
    ];
    // Face areas for the pair of faces normal to each axis.
    let areas = [ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]];
    let total: f64 = areas.iter().sum();
    let mut out = Array2::zeros((n, 3));
    for mut row in out.outer_iter_mut() {
        let mut u = rng.random::<f64>() * total;
        let mut axis = 2;
        for (a, &area) in areas.iter().enumerate() {
            if u < area {
                axis = a;
                break;
            }
            u -= area;
        }
        for j in 0..3 {
            row[j] = if j == axis {
                if rng.random::<bool>() { ext[j] } else { -ext[j] }
            } else {
                rng.random_range(-ext[j]..ext[j])
            };
        }
    }
    out
}

fn torus(n: usize, rng: &mut Rng) -> Array2<f64> {
    let major = rng.random_range(0.6..1.0);
    let minor = rng.random_range(0.1..0.35);
    let tilt = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
    let (st, ct) = tilt.sin_cos();
    let mut out = Array2::zeros((n, 3));
    for mut row in out.outer_iter_mut() {
        let u = rng.random_range(0.0..std::f64::consts::TAU);
        let v = rng.random_range(0.0..std::f64::consts::TAU);
        let r = major + minor * v.cos();
        let (x, y, z) = (r * u.cos(), r * u.sin(), minor * v.sin());
        row[0] = x;
        row[1] = ct * y - st * z;
        row[2] = st * y + ct * z;
    }
    out
}

fn helix(n: usize, rng: &mut Rng) -> Array2<f64> {
    let turns = rng.random_range(1.5..3.5);
    let radius = rng.random_range(0.3..0.7);
    let noise = Normal::new(0.0, 0.03).unwrap();
    let mut out = Array2::zeros((n, 3));
    for mut row in out.outer_iter_mut() {
        let t: f64 = rng.random();
        let angle = t * turns * std::f64::consts::TAU;
        row[0] = radius * angle.cos() + noise.sample(rng);
        row[1] = radius * angle.sin() + noise.sample(rng);
        row[2] = 2.0 * t - 1.0 + noise.sample(rng);
    }
    out
}

/// One normalized shape of the given family.
pub fn procedural_shape(family: ShapeFamily, n_points: usize, seed: u64) -> Result<PointCloud> {
    let mut rng = rng_from_seed(seed);
    let raw = match family {
        ShapeFamily::TwoBlobs => two_blobs(n_points, &mut rng),
        ShapeFamily::BoxSurface => box_surface(n_points, &mut rng),
        ShapeFamily::Torus => torus(n_points, &mut rng),
        ShapeFamily::Helix => helix(n_points, &mut rng),
    };
    normalize_to_unit_sphere(&PointCloud::new(raw)?)
}

/// `count` normalized shapes alternating between two-blob and box-surface clouds.
pub fn procedural_dataset(count: usize, n_points: usize, seed: u64) -> Result<Vec<PointCloud>> {
    (0..count)
        .map(|i| {
            let family = if i % 2 == 0 { ShapeFamily::TwoBlobs } else { ShapeFamily::BoxSurface };
            procedural_shape(family, n_points, derive_seed(seed, &[i as u64]))
        })
        .collect()
}

/// Shapes of a single family, for per-category experiments.
pub fn procedural_category(family: ShapeFamily, count: usize, n_points: usize, seed: u64) -> Result<Vec<PointCloud>> {
    (0..count)
        .map(|i| procedural_shape(family, n_points, derive_seed(seed, &[i as u64])))
        .collect()
}
