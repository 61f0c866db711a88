//! The generator's input: sphere coordinates, per-point latents and the
//! replicated centroid block.

use ndarray::{s, Array2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansConfig};
use crate::pointcloud::{NormalizeTransform, PointCloud, SpherePrior};
use crate::rng::rng_from_seed;

/// How the K centroids are spread over the N rows of the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockLayout {
    /// `[c0 × N/K, c1 × N/K, …]`: each centroid repeated, then the runs concatenated.
    #[default]
    Contiguous,
    /// `[c0, c1, …, cK-1, c0, c1, …]`: the centroid matrix tiled N/K times.
    Tiled,
}

/// N×3 matrix of replicated cluster centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidBlock {
    rows: Array2<f64>,
    k: usize,
    layout: BlockLayout,
}

impl CentroidBlock {
    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn replication(&self) -> usize {
        self.n() / self.k
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    /// Index of the centroid that fills row `i`.
    pub fn centroid_index(&self, i: usize) -> usize {
        match self.layout {
            BlockLayout::Contiguous => i / self.replication(),
            BlockLayout::Tiled => i % self.k,
        }
    }

    pub fn transformed(&self, t: &NormalizeTransform) -> Self {
        Self {
            rows: t.apply_rows(&self.rows),
            ..self.clone()
        }
    }
}

pub fn build_centroid_block(centroids: &Array2<f64>, n: usize) -> Result<CentroidBlock> {
    build_centroid_block_with_layout(centroids, n, BlockLayout::Contiguous)
}

pub fn build_centroid_block_with_layout(
    centroids: &Array2<f64>,
    n: usize,
    layout: BlockLayout,
) -> Result<CentroidBlock> {
    let k = centroids.nrows();
    if centroids.ncols() != 3 {
        return Err(Error::invalid(format!(
            "centroids must be K×3, got {}×{}",
            k,
            centroids.ncols()
        )));
    }
    if k == 0 || n == 0 || !n.is_multiple_of(k) {
        return Err(Error::invalid(format!(
            "K = {k} centroids do not divide N = {n} points"
        )));
    }
    let rep = n / k;
    let mut rows = Array2::zeros((n, 3));
    for (i, mut row) in rows.outer_iter_mut().enumerate() {
        let c = match layout {
            BlockLayout::Contiguous => i / rep,
            BlockLayout::Tiled => i % k,
        };
        row.assign(&centroids.row(c));
    }
    Ok(CentroidBlock { rows, k, layout })
}

/// Cluster `reference` into `k` groups and build the block, expressed in the
/// reference's own unit-sphere normalization frame.
pub fn centroid_block_for(
    reference: &PointCloud,
    k: usize,
    layout: BlockLayout,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<CentroidBlock> {
    let n = reference.n_points();
    if k == 0 || !n.is_multiple_of(k) {
        return Err(Error::invalid(format!(
            "K = {k} centroids do not divide N = {n} points"
        )));
    }
    let transform = NormalizeTransform::fit(reference)?;
    let clusters = kmeans(reference, k, seed, cfg)?;
    Ok(build_centroid_block_with_layout(&clusters.centroids, n, layout)?.transformed(&transform))
}

/// Which block occupies the columns after the latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    /// `[S | Z | C]`
    Training,
    /// `[S | Z | S]`
    Evaluation,
    /// `[S | Z]`, no trailing block.
    Vanilla,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorLatentMatrix {
    data: Array2<f64>,
    latent_dim: usize,
    kind: PriorKind,
}

impl PriorLatentMatrix {
    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    /// Builds a matrix from raw columns, used by callers that perturb latents.
    pub fn from_data(data: Array2<f64>, latent_dim: usize, kind: PriorKind) -> Result<Self> {
        let expected = prior_width(latent_dim, kind != PriorKind::Vanilla);
        if data.ncols() != expected {
            return Err(Error::invalid(format!(
                "prior has {} columns, expected {expected} for d = {latent_dim}",
                data.ncols()
            )));
        }
        Ok(Self {
            data,
            latent_dim,
            kind,
        })
    }
}

/// Column count of the generator input: 3 + d, plus 3 when a trailing block is present.
pub fn prior_width(latent_dim: usize, with_block: bool) -> usize {
    3 + latent_dim + if with_block { 3 } else { 0 }
}

fn latent_matrix(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
}

fn assemble(sphere: &SpherePrior, d: usize, tail: Option<&Array2<f64>>, seed: u64, kind: PriorKind) -> Result<PriorLatentMatrix> {
    if d == 0 {
        return Err(Error::invalid("latent dimension must be at least 1"));
    }
    let n = sphere.n_points();
    let width = prior_width(d, tail.is_some());
    let mut data = Array2::zeros((n, width));
    data.slice_mut(s![.., 0..3]).assign(sphere.points());
    data.slice_mut(s![.., 3..3 + d]).assign(&latent_matrix(n, d, seed));
    if let Some(tail) = tail {
        if tail.dim() != (n, 3) {
            return Err(Error::invalid(format!(
                "sphere has {n} rows but the centroid block has {}",
                tail.nrows()
            )));
        }
        data.slice_mut(s![.., 3 + d..]).assign(tail);
    }
    Ok(PriorLatentMatrix {
        data,
        latent_dim: d,
        kind,
    })
}

/// `[S | Z | C]` with Z drawn i.i.d. standard normal from `seed`.
pub fn assemble_training_prior(
    sphere: &SpherePrior,
    latent_dim: usize,
    block: &CentroidBlock,
    seed: u64,
) -> Result<PriorLatentMatrix> {
    if block.n() != sphere.n_points() {
        return Err(Error::invalid(format!(
            "sphere has {} rows but the centroid block has {}",
            sphere.n_points(),
            block.n()
        )));
    }
    assemble(sphere, latent_dim, Some(block.rows()), seed, PriorKind::Training)
}

/// `[S | Z | S]`: the sphere stands in for the centroid block at generation time.
pub fn assemble_eval_prior(sphere: &SpherePrior, latent_dim: usize, seed: u64) -> Result<PriorLatentMatrix> {
    assemble(sphere, latent_dim, Some(sphere.points()), seed, PriorKind::Evaluation)
}

/// `[S | Z]`, the prior of the model without centroid guidance.
pub fn assemble_vanilla_prior(sphere: &SpherePrior, latent_dim: usize, seed: u64) -> Result<PriorLatentMatrix> {
    assemble(sphere, latent_dim, None, seed, PriorKind::Vanilla)
}
