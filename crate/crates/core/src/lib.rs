//! Point-cloud GAN whose generator is conditioned on K-means centroids of a
//! reference shape.
//!
//! The generator reads an N×(3+d+3) prior `[S | Z | C]`: unit-sphere
//! coordinates, per-point Gaussian latents and the reference's centroids, each
//! repeated N/K times. The discriminator scores both every point and the whole
//! shape and is trained on the very reference that supplied the centroids.
//! Generated sets are scored with occupancy-grid JSD and a Fréchet distance
//! over point-cloud features.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kmeans;
pub mod loss;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod pointcloud;
pub mod prior;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use pointcloud::{normalize_to_unit_sphere, sample_unit_sphere, PointCloud, SpherePrior};
