//! Alternating least-squares training with the centroid pairing constraint:
//! the discriminator's real sample in a step is the cloud whose centroids
//! were fed to the generator in that same step.

use std::io::Write;
use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::kmeans::KMeansConfig;
use crate::loss::{discriminator_loss_and_grad, generator_loss_and_grad, LossConfig, TargetMode};
use crate::nets::{init_params, round_f32, Discriminator, Generator, ModelParams, NetConfig, Tensors};
use crate::optim::{Adam, AdamConfig};
use crate::pointcloud::{sample_unit_sphere, PointCloud, SpherePrior};
use crate::prior::{
    assemble_training_prior, assemble_vanilla_prior, centroid_block_for, BlockLayout, CentroidBlock,
};
use crate::rng::{derive_seed, rng_from_seed, STREAM_LATENT, STREAM_SHUFFLE, STREAM_SPHERE};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_points: usize,
    pub net: NetConfig,
    /// Number of K-means clusters per reference; unused in vanilla mode.
    pub k_centroids: usize,
    pub block_layout: BlockLayout,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub kmeans: KMeansConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::invalid("n_points must be at least 1"));
        }
        if self.net.latent_dim == 0 || self.net.hidden == 0 {
            return Err(Error::invalid("latent_dim and hidden_width must be at least 1"));
        }
        if !self.net.vanilla && (self.k_centroids == 0 || !self.n_points.is_multiple_of(self.k_centroids)) {
            return Err(Error::invalid(format!(
                "k_centroids = {} must divide n_points = {}",
                self.k_centroids, self.n_points
            )));
        }
        LossConfig::new(self.loss.beta, self.loss.target_mode)?;
        self.optimizer.validate()
    }
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam_generator: Adam,
    pub adam_discriminator: Adam,
    /// Number of completed steps.
    pub step: u64,
    pub seed: u64,
    pub sphere: SpherePrior,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(cfg.net, cfg.seed)?;
        let raw = sample_unit_sphere(cfg.n_points, derive_seed(cfg.seed, &[STREAM_SPHERE]))?;
        // f32-representable so that the sphere survives checkpointing bit-exactly.
        let sphere = SpherePrior::from_points(raw.points().mapv(round_f32))?;
        Ok(Self {
            adam_generator: Adam::new(&params.generator),
            adam_discriminator: Adam::new(&params.discriminator),
            params,
            step: 0,
            seed: cfg.seed,
            sphere,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite() && self.adam_generator.all_finite() && self.adam_discriminator.all_finite()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        let net = self.params.config;
        c.set_meta("step", self.step);
        c.set_meta("seed", self.seed);
        c.set_meta("latent_dim", net.latent_dim);
        c.set_meta("hidden", net.hidden);
        c.set_meta("vanilla", net.vanilla);
        c.set_meta("n_points", self.sphere.n_points());
        c.set_meta("input_width", net.input_width());
        for (name, t) in self.params.tensors() {
            c.push(name, t.clone());
        }
        push_moments(&mut c, "generator", &self.params.generator, &self.adam_generator);
        push_moments(&mut c, "discriminator", &self.params.discriminator, &self.adam_discriminator);
        c.push("sphere", self.sphere.points().clone());
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let net = NetConfig {
            latent_dim: c.meta_parse("latent_dim")?,
            hidden: c.meta_parse("hidden")?,
            vanilla: c.meta_parse("vanilla")?,
        };
        let n_points: usize = c.meta_parse("n_points")?;
        let seed: u64 = c.meta_parse("seed")?;
        let mut params = init_params(net, 0)?;
        let names: Vec<(String, (usize, usize))> =
            params.tensors().iter().map(|(n, t)| (n.clone(), t.dim())).collect();
        for ((name, shape), dst) in names.iter().zip(params.tensors_mut()) {
            dst.assign(c.tensor_shaped(name, *shape)?);
        }
        let adam_generator = load_moments(c, "generator", &params.generator)?;
        let adam_discriminator = load_moments(c, "discriminator", &params.discriminator)?;
        let sphere = SpherePrior::from_points(c.tensor_shaped("sphere", (n_points, 3))?.clone())?;
        Ok(Self {
            params,
            adam_generator,
            adam_discriminator,
            step: c.meta_parse("step")?,
            seed,
            sphere,
        })
    }
}

fn push_moments<T: Tensors>(c: &mut Checkpoint, prefix: &str, params: &T, adam: &Adam) {
    for (((name, _), m), v) in params.tensors().iter().zip(&adam.m).zip(&adam.v) {
        c.push(format!("adam.{prefix}.m.{name}"), m.clone());
        c.push(format!("adam.{prefix}.v.{name}"), v.clone());
    }
}

fn load_moments<T: Tensors>(c: &Checkpoint, prefix: &str, params: &T) -> Result<Adam> {
    let mut adam = Adam::new(params);
    for (i, (name, t)) in params.tensors().iter().enumerate() {
        adam.m[i].assign(c.tensor_shaped(&format!("adam.{prefix}.m.{name}"), t.dim())?);
        adam.v[i].assign(c.tensor_shaped(&format!("adam.{prefix}.v.{name}"), t.dim())?);
    }
    Ok(adam)
}

/// Losses recorded for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss_g: f64,
    pub loss_d_shape: f64,
    pub loss_d_point: f64,
}

impl StepReport {
    pub fn loss_d(&self) -> f64 {
        self.loss_d_shape + self.loss_d_point
    }

    pub const CSV_HEADER: &'static str = "step,loss_g,loss_d_shape,loss_d_point";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.step, self.loss_g, self.loss_d_shape, self.loss_d_point)
    }
}

/// Centroid block for one reference, or `None` in vanilla mode.
pub fn reference_block(reference: &PointCloud, cfg: &TrainConfig) -> Result<Option<CentroidBlock>> {
    if cfg.net.vanilla {
        return Ok(None);
    }
    if reference.n_points() != cfg.n_points {
        return Err(Error::invalid(format!(
            "reference has {} points, config expects {}",
            reference.n_points(),
            cfg.n_points
        )));
    }
    centroid_block_for(reference, cfg.k_centroids, cfg.block_layout, cfg.seed, &cfg.kmeans).map(Some)
}

/// One discriminator update followed by one generator update.
pub fn train_step(state: &mut TrainState, reference: &PointCloud, cfg: &TrainConfig) -> Result<StepReport> {
    let block = reference_block(reference, cfg)?;
    train_step_with_block(state, reference, block.as_ref(), cfg)
}

/// [`train_step`] with a precomputed centroid block for `reference`.
pub fn train_step_with_block(
    state: &mut TrainState,
    reference: &PointCloud,
    block: Option<&CentroidBlock>,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let t = state.step + 1;
    let d = cfg.net.latent_dim;
    let z_seed = derive_seed(state.seed, &[STREAM_LATENT, t]);
    let prior = match (block, cfg.net.vanilla) {
        (_, true) => assemble_vanilla_prior(&state.sphere, d, z_seed)?,
        (Some(block), false) => assemble_training_prior(&state.sphere, d, block, z_seed)?,
        (None, false) => return Err(Error::invalid("centroid block required outside vanilla mode")),
    };
    if reference.n_points() != state.sphere.n_points() {
        return Err(Error::invalid(format!(
            "reference has {} points, sphere has {}",
            reference.n_points(),
            state.sphere.n_points()
        )));
    }

    let generator: &Generator = &state.params.generator;
    let g_trace = generator.forward_traced(prior.data())?;
    let fake: &Array2<f64> = &g_trace.output;

    // Discriminator update on (generated, detached) and the paired reference.
    let disc: &Discriminator = &state.params.discriminator;
    let fake_trace = disc.forward_traced(fake)?;
    let real_trace = disc.forward_traced(reference.points())?;
    let (loss_d, fake_grad, real_grad) =
        discriminator_loss_and_grad(&fake_trace.scores, &real_trace.scores, &cfg.loss);
    let (mut d_grads, _) = disc.backward(&fake_trace, &fake_grad.per_point, fake_grad.per_shape);
    let (real_grads, _) = disc.backward(&real_trace, &real_grad.per_point, real_grad.per_shape);
    for (acc, g) in d_grads.tensors_mut().into_iter().zip(real_grads.tensors()) {
        *acc += g.1;
    }
    state
        .adam_discriminator
        .step(&mut state.params.discriminator, &d_grads, t, &cfg.optimizer);

    // Generator update through the freshly updated discriminator.
    let disc = &state.params.discriminator;
    let rescored = disc.forward_traced(fake)?;
    let (loss_g, g_score_grad) = generator_loss_and_grad(&rescored.scores, &cfg.loss);
    let (_, grad_fake) = disc.backward(&rescored, &g_score_grad.per_point, g_score_grad.per_shape);
    let (g_grads, _) = state.params.generator.backward(&g_trace, &grad_fake);
    state
        .adam_generator
        .step(&mut state.params.generator, &g_grads, t, &cfg.optimizer);

    state.step = t;
    if !state.all_finite() {
        return Err(Error::DegenerateInput(format!("non-finite parameters after step {t}")));
    }
    Ok(StepReport {
        step: t,
        loss_g,
        loss_d_shape: loss_d.shape,
        loss_d_point: loss_d.point,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Epochs(u64),
    Steps(u64),
}

impl Schedule {
    pub fn total_steps(&self, dataset_len: usize) -> u64 {
        match *self {
            Schedule::Epochs(e) => e * dataset_len as u64,
            Schedule::Steps(s) => s,
        }
    }
}

/// Dataset index visited at 1-based step `t`: a fresh seeded shuffle per epoch.
pub fn reference_index(seed: u64, dataset_len: usize, t: u64) -> usize {
    let len = dataset_len as u64;
    let epoch = (t - 1) / len;
    let pos = ((t - 1) % len) as usize;
    let mut order: Vec<usize> = (0..dataset_len).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, &[STREAM_SHUFFLE, epoch])));
    order[pos]
}

/// Where checkpoints go and how often.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointPolicy {
    pub dir: PathBuf,
    /// Save every this many steps; the final state is always saved.
    pub every: Option<u64>,
}

impl CheckpointPolicy {
    pub fn path_for(&self, step: u64) -> PathBuf {
        self.dir.join(format!("step_{step:06}"))
    }
}

/// Run to `schedule`, starting from `resume` or a fresh state.
///
/// Each step's losses go to `log` as CSV rows; the header is written only
/// when starting fresh.
pub fn train(
    dataset: &[PointCloud],
    schedule: Schedule,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    checkpoints: Option<&CheckpointPolicy>,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainState> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if let Some((i, pc)) = dataset.iter().enumerate().find(|(_, pc)| pc.n_points() != cfg.n_points) {
        return Err(Error::invalid(format!(
            "dataset cloud {i} has {} points, expected {}",
            pc.n_points(),
            cfg.n_points
        )));
    }
    let mut state = match resume {
        Some(s) => {
            if s.params.config != cfg.net || s.sphere.n_points() != cfg.n_points {
                return Err(Error::invalid("resumed state does not match the training config"));
            }
            s
        }
        None => {
            let s = TrainState::new(cfg)?;
            if let Some(log) = log.as_deref_mut() {
                writeln!(log, "{}", StepReport::CSV_HEADER).map_err(|e| Error::io("loss log", e))?;
            }
            s
        }
    };

    // K-means depends only on the reference and the seed, so compute it once per cloud.
    let blocks: Vec<Option<CentroidBlock>> = dataset
        .iter()
        .map(|pc| reference_block(pc, cfg))
        .collect::<Result<_>>()?;

    let total = schedule.total_steps(dataset.len());
    while state.step < total {
        let idx = reference_index(state.seed, dataset.len(), state.step + 1);
        let report = train_step_with_block(&mut state, &dataset[idx], blocks[idx].as_ref(), cfg)?;
        if let Some(log) = log.as_deref_mut() {
            writeln!(log, "{}", report.csv_row()).map_err(|e| Error::io("loss log", e))?;
        }
        if let Some(policy) = checkpoints {
            if policy.every.is_some_and(|every| every > 0 && state.step % every == 0) && state.step < total {
                state.to_checkpoint().save(policy.path_for(state.step))?;
            }
        }
    }
    if let Some(policy) = checkpoints {
        state.to_checkpoint().save(policy.path_for(state.step))?;
    }
    Ok(state)
}

/// Defaults for a given prior size; `k_centroids` must still divide `n_points`.
pub fn default_config(n_points: usize, latent_dim: usize, hidden: usize, k_centroids: usize) -> TrainConfig {
    TrainConfig {
        n_points,
        net: NetConfig {
            latent_dim,
            hidden,
            vanilla: false,
        },
        k_centroids,
        block_layout: BlockLayout::Contiguous,
        loss: LossConfig {
            beta: 1.0,
            target_mode: TargetMode::Standard,
        },
        optimizer: AdamConfig::default(),
        kmeans: KMeansConfig::default(),
        seed: 0,
    }
}
