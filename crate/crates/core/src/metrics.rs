//! Set-level evaluation: Jensen-Shannon divergence between voxel occupancy
//! distributions and the Fréchet distance between Gaussian fits of point-cloud
//! features.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nets::{apply_lrelu, generator_forward, max_pool, Dense, ModelParams};
use crate::pointcloud::{PointCloud, SpherePrior};
use crate::prior::{assemble_eval_prior, assemble_vanilla_prior};
use crate::rng::{derive_seed, rng_from_seed, STREAM_EVAL, STREAM_FEATURES};

pub const DEFAULT_GRID_RESOLUTION: usize = 28;

/// Seed of the default feature network. Fixed so that FPD values from runs
/// with different training seeds share one feature space.
pub const DEFAULT_FEATURE_SEED: u64 = 0x00F3_A7E5;

/// Point counts over a G×G×G grid spanning [−1, 1]³.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyHistogram {
    resolution: usize,
    counts: Vec<u64>,
    total: u64,
}

impl OccupancyHistogram {
    pub fn empty(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::invalid(format!("grid resolution must be ≥ 2, got {resolution}")));
        }
        Ok(Self {
            resolution,
            counts: vec![0; resolution.pow(3)],
            total: 0,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, ix: usize, iy: usize, iz: usize) -> u64 {
        let g = self.resolution;
        self.counts[(ix * g + iy) * g + iz]
    }

    /// Cell index along one axis. Boundary points go to the lower cell and
    /// out-of-range points to the nearest edge cell.
    fn axis_index(&self, v: f64) -> usize {
        let g = self.resolution as f64;
        let cell = ((v + 1.0) * g / 2.0).ceil() - 1.0;
        cell.clamp(0.0, g - 1.0) as usize
    }

    pub fn add_cloud(&mut self, pc: &PointCloud) {
        let g = self.resolution;
        for row in pc.points().outer_iter() {
            let (ix, iy, iz) = (self.axis_index(row[0]), self.axis_index(row[1]), self.axis_index(row[2]));
            self.counts[(ix * g + iy) * g + iz] += 1;
        }
        self.total += pc.n_points() as u64;
    }

    /// Counts are additive, so shards built separately can be combined.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.resolution != self.resolution {
            return Err(Error::invalid("cannot merge histograms of different resolution"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

pub fn occupancy_histogram(clouds: &[PointCloud], resolution: usize) -> Result<OccupancyHistogram> {
    if clouds.is_empty() {
        return Err(Error::invalid("no clouds to histogram"));
    }
    let mut h = OccupancyHistogram::empty(resolution)?;
    for pc in clouds {
        h.add_cloud(pc);
    }
    Ok(h)
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).ln())
        .sum()
}

/// Natural-log Jensen-Shannon divergence of two probability vectors.
pub fn jsd_probabilities(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!("distributions have {} and {} bins", p.len(), q.len())));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let v = 0.5 * kl_to_mixture(p, &m) + 0.5 * kl_to_mixture(q, &m);
    Ok(v.clamp(0.0, std::f64::consts::LN_2))
}

pub fn jsd(p: &OccupancyHistogram, q: &OccupancyHistogram) -> Result<f64> {
    if p.resolution != q.resolution {
        return Err(Error::invalid(format!(
            "histogram resolutions differ: {} vs {}",
            p.resolution, q.resolution
        )));
    }
    if p.total == 0 || q.total == 0 {
        return Err(Error::invalid("histogram with zero total"));
    }
    jsd_probabilities(&p.probabilities(), &q.probabilities())
}

/// Shared per-point MLP followed by a max pool over points.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    layers: Vec<Dense>,
}

impl FeatureExtractor {
    pub const DEFAULT_WIDTHS: [usize; 3] = [64, 64, 64];

    /// Randomly weighted extractor, fixed by `seed`.
    pub fn random(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::invalid(format!("bad feature widths {widths:?}")));
        }
        let mut rng = rng_from_seed(derive_seed(seed, &[STREAM_FEATURES]));
        let mut fan_in = 3;
        let layers = widths
            .iter()
            .map(|&w| {
                let layer = Dense::init(fan_in, w, &mut rng);
                fan_in = w;
                layer
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn default_random(seed: u64) -> Self {
        Self::random(&Self::DEFAULT_WIDTHS, seed).expect("valid default widths")
    }

    /// Reads `features.layer{i}.weight` / `.bias` tensors for i = 1, 2, ….
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let mut layers = Vec::new();
        let mut fan_in = 3;
        for i in 1.. {
            let wname = format!("features.layer{i}.weight");
            let Ok(weight) = c.tensor(&wname) else { break };
            if weight.nrows() != fan_in {
                return Err(Error::invalid(format!(
                    "`{wname}` has {} input rows, previous layer width is {fan_in}",
                    weight.nrows()
                )));
            }
            let bias = c.tensor_shaped(&format!("features.layer{i}.bias"), (1, weight.ncols()))?;
            fan_in = weight.ncols();
            layers.push(Dense {
                weight: weight.clone(),
                bias: bias.clone(),
            });
        }
        if layers.is_empty() {
            return Err(Error::invalid("checkpoint has no `features.layer1.weight`"));
        }
        Ok(Self { layers })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        for (i, l) in self.layers.iter().enumerate() {
            c.push(format!("features.layer{}.weight", i + 1), l.weight.clone());
            c.push(format!("features.layer{}.bias", i + 1), l.bias.clone());
        }
        c
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").fan_out()
    }

    pub fn extract(&self, pc: &PointCloud) -> Array1<f64> {
        let mut a = pc.points().clone();
        for layer in &self.layers {
            a = apply_lrelu(&layer.forward(&a));
        }
        max_pool(&a).0
    }

    /// One feature row per cloud.
    pub fn extract_all(&self, clouds: &[PointCloud]) -> Array2<f64> {
        let mut out = Array2::zeros((clouds.len(), self.feature_dim()));
        for (mut row, pc) in out.outer_iter_mut().zip(clouds) {
            row.assign(&self.extract(pc));
        }
        out
    }
}

pub fn extract_features(pc: &PointCloud, extractor: &FeatureExtractor) -> Array1<f64> {
    extractor.extract(pc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

/// Sample mean and unbiased (1/(M−1)) covariance of the rows of `features`.
pub fn gaussian_stats(features: &Array2<f64>) -> Result<GaussianStats> {
    let m = features.nrows();
    if m < 2 {
        return Err(Error::invalid(format!("need at least 2 feature rows, got {m}")));
    }
    let mean = features.mean_axis(Axis(0)).expect("m ≥ 2");
    let centered = features - &mean;
    let cov = centered.t().dot(&centered) / (m as f64 - 1.0);
    let covariance = (&cov + &cov.t()) * 0.5;
    Ok(GaussianStats { mean, covariance })
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_dmatrix(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues that are negative, or below `λ_max · F · ε` where rounding
/// dominates, are treated as zero.
pub fn sqrtm_spd(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid(format!("matrix is {}x{}, not square", n, a.ncols())));
    }
    let scale = a.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let asym = (a - &a.t()).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if asym.is_nan() || asym > 1e-8 * scale {
        return Err(Error::invalid(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    let sym = (a + &a.t()) * 0.5;
    let eig = SymmetricEigen::new(to_dmatrix(&sym));
    let lambda_max = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v));
    let cutoff = lambda_max * n as f64 * f64::EPSILON;
    let roots = eig
        .eigenvalues
        .map(|l| if l > cutoff { l.sqrt() } else { 0.0 });
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&roots) * v.transpose();
    let r = from_dmatrix(&r);
    Ok((&r + &r.t()) * 0.5)
}

/// Squared 2-Wasserstein distance between two Gaussians:
/// `‖μr − μg‖² + tr(Σr + Σg − 2 (Σg^½ Σr Σg^½)^½)`.
pub fn fpd(real: &GaussianStats, gen: &GaussianStats) -> Result<f64> {
    let f = real.mean.len();
    if gen.mean.len() != f || real.covariance.dim() != (f, f) || gen.covariance.dim() != (f, f) {
        return Err(Error::invalid(format!(
            "feature dimensions differ: {} vs {}",
            f,
            gen.mean.len()
        )));
    }
    let diff = &real.mean - &gen.mean;
    let root_g = sqrtm_spd(&gen.covariance)?;
    let inner = root_g.dot(&real.covariance).dot(&root_g);
    let inner = (&inner + &inner.t()) * 0.5;
    let cross = sqrtm_spd(&inner)?;
    let value = diff.dot(&diff) + real.covariance.diag().sum() + gen.covariance.diag().sum()
        - 2.0 * cross.diag().sum();
    Ok(value.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub grid_resolution: usize,
    pub seed: u64,
    pub extractor: FeatureExtractor,
}

impl EvalConfig {
    /// `seed` drives the latent draws for generated samples; the feature
    /// network is the default one.
    pub fn new(grid_resolution: usize, seed: u64) -> Self {
        Self {
            grid_resolution,
            seed,
            extractor: FeatureExtractor::default_random(DEFAULT_FEATURE_SEED),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Raw Fréchet distance.
    pub fpd: f64,
    pub jsd: f64,
}

impl EvalReport {
    /// FPD expressed in units of 10⁻³.
    pub fn fpd_milli(&self) -> f64 {
        self.fpd * 1e3
    }
}

/// Compare two sets of clouds: pooled occupancy JSD and feature FPD.
pub fn evaluate_sets(generated: &[PointCloud], references: &[PointCloud], cfg: &EvalConfig) -> Result<EvalReport> {
    if generated.len() < 2 || references.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 clouds per set, got {} generated and {} reference",
            generated.len(),
            references.len()
        )));
    }
    let jsd_value = jsd(
        &occupancy_histogram(generated, cfg.grid_resolution)?,
        &occupancy_histogram(references, cfg.grid_resolution)?,
    )?;
    let real = gaussian_stats(&cfg.extractor.extract_all(references))?;
    let gen = gaussian_stats(&cfg.extractor.extract_all(generated))?;
    Ok(EvalReport {
        fpd: fpd(&real, &gen)?,
        jsd: jsd_value,
    })
}

/// Draw `n_samples` clouds from the generator with the evaluation prior.
pub fn generate_samples(params: &ModelParams, sphere: &SpherePrior, n_samples: usize, seed: u64) -> Result<Vec<PointCloud>> {
    let d = params.config.latent_dim;
    (0..n_samples)
        .map(|s| {
            let z_seed = derive_seed(seed, &[STREAM_EVAL, s as u64]);
            let prior = if params.config.vanilla {
                assemble_vanilla_prior(sphere, d, z_seed)?
            } else {
                assemble_eval_prior(sphere, d, z_seed)?
            };
            generator_forward(&prior, params)
        })
        .collect()
}

pub fn evaluate_generator(
    params: &ModelParams,
    sphere: &SpherePrior,
    n_samples: usize,
    references: &[PointCloud],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if n_samples < 2 {
        return Err(Error::invalid(format!("n_samples must be ≥ 2, got {n_samples}")));
    }
    let generated = generate_samples(params, sphere, n_samples, cfg.seed)?;
    evaluate_sets(&generated, references, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn origin_goes_to_lower_voxel() {
        let pc = PointCloud::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let h = occupancy_histogram(&[pc], 2).unwrap();
        assert_eq!(h.count(0, 0, 0), 1);
        assert_eq!(h.total(), 1);
    }

    #[test]
    fn octant_centers_fill_every_voxel() {
        let mut rows = Vec::new();
        for x in [-0.5, 0.5] {
            for y in [-0.5, 0.5] {
                for z in [-0.5, 0.5] {
                    rows.push([x, y, z]);
                }
            }
        }
        let h = occupancy_histogram(&[PointCloud::from_rows(&rows).unwrap()], 2).unwrap();
        assert!(h.counts().iter().all(|&c| c == 1));
    }

    #[test]
    fn out_of_range_clamps_and_total_is_conserved() {
        let a = PointCloud::from_rows(&[[-3.0, 5.0, 1.0], [-1.0, 1.0, -1.0]]).unwrap();
        let b = PointCloud::from_rows(&[[0.2, 0.2, 0.2]; 5]).unwrap();
        let h = occupancy_histogram(&[a, b], 4).unwrap();
        assert_eq!(h.total(), 7);
        assert_eq!(h.counts().iter().sum::<u64>(), 7);
        assert_eq!(h.count(0, 3, 3), 1);
        assert_eq!(h.count(0, 3, 0), 1);
        assert!(occupancy_histogram(&[], 4).is_err());
        assert!(OccupancyHistogram::empty(1).is_err());
    }

    #[test]
    fn jsd_closed_forms() {
        assert_eq!(jsd_probabilities(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        let disjoint = jsd_probabilities(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((disjoint - std::f64::consts::LN_2).abs() < 1e-12);
        // ½[½ln(2/3) + ½ln 2] + ½ln(4/3)
        let v = jsd_probabilities(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((v - 0.215762).abs() < 1e-5, "{v}");
    }

    #[test]
    fn jsd_rejects_resolution_mismatch() {
        let pc = PointCloud::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let a = occupancy_histogram(std::slice::from_ref(&pc), 2).unwrap();
        let b = occupancy_histogram(&[pc], 3).unwrap();
        assert!(jsd(&a, &b).is_err());
    }

    #[test]
    fn gaussian_two_point_closed_form() {
        let s = gaussian_stats(&array![[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(s.mean, array![1.0, 0.0]);
        assert_eq!(s.covariance, array![[2.0, 0.0], [0.0, 0.0]]);
        let same = gaussian_stats(&array![[1.5, -2.0], [1.5, -2.0], [1.5, -2.0]]).unwrap();
        assert!(same.covariance.iter().all(|&v| v == 0.0));
        assert!(gaussian_stats(&array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn sqrtm_diagonal_and_identity() {
        let i = Array2::<f64>::eye(4);
        let r = sqrtm_spd(&i).unwrap();
        assert!((&r - &i).iter().all(|v| v.abs() < 1e-12));
        let r = sqrtm_spd(&array![[4.0, 0.0], [0.0, 9.0]]).unwrap();
        assert!((&r - &array![[2.0, 0.0], [0.0, 3.0]]).iter().all(|v| v.abs() < 1e-12));
        assert!(sqrtm_spd(&array![[1.0, 0.5], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn fpd_closed_forms() {
        let a = GaussianStats { mean: array![0.0], covariance: array![[1.0]] };
        let b = GaussianStats { mean: array![1.0], covariance: array![[1.0]] };
        assert!((fpd(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(fpd(&a, &a).unwrap().abs() < 1e-12);
        let r = GaussianStats { mean: array![0.0, 0.0], covariance: array![[1.0, 0.0], [0.0, 1.0]] };
        let g = GaussianStats { mean: array![0.0, 0.0], covariance: array![[4.0, 0.0], [0.0, 4.0]] };
        assert!((fpd(&r, &g).unwrap() - 2.0).abs() < 1e-12);
        assert!(fpd(&a, &r).is_err());
    }

    #[test]
    fn features_are_permutation_invariant_and_deterministic() {
        let ex = FeatureExtractor::default_random(3);
        assert_eq!(ex.feature_dim(), 64);
        let pc = crate::synthetic::procedural_dataset(1, 50, 0).unwrap().remove(0);
        let order: Vec<usize> = (0..50).rev().collect();
        let perm = pc.select_rows(&order).unwrap();
        assert_eq!(ex.extract(&pc), ex.extract(&perm));
        assert_eq!(ex.extract(&pc), FeatureExtractor::default_random(3).extract(&pc));
    }

    #[test]
    fn extractor_checkpoint_round_trip_and_width_check() {
        let dir = tempfile::tempdir().unwrap();
        let ex = FeatureExtractor::random(&[8, 16, 5], 1).unwrap();
        ex.to_checkpoint().save(dir.path()).unwrap();
        let back = FeatureExtractor::from_checkpoint(&Checkpoint::load(dir.path()).unwrap()).unwrap();
        assert_eq!(back, ex);

        let mut bad = ex.to_checkpoint();
        bad.tensors[2].1 = Array2::zeros((9, 16));
        assert!(FeatureExtractor::from_checkpoint(&bad).is_err());
    }
}
