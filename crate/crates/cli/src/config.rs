//! Run configuration files: UTF-8, one `key = value` per line, `#` comments.
//! Every key must be a known field; anything else is rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use topoprior::kmeans::KMeansConfig;
use topoprior::loss::{LossConfig, TargetMode};
use topoprior::nets::NetConfig;
use topoprior::optim::AdamConfig;
use topoprior::prior::BlockLayout;
use topoprior::train::{Schedule, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_points: usize,
    pub latent_dim: usize,
    pub k_centroids: usize,
    pub beta: f64,
    pub target_mode: TargetMode,
    pub learning_rate: f64,
    pub epochs: u64,
    /// Total optimizer steps; when nonzero it replaces `epochs`.
    pub steps: u64,
    pub seed: u64,
    pub grid_resolution: usize,
    pub hidden_width: usize,
    pub vanilla: bool,
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    pub eval_samples: usize,
    /// Save a checkpoint every this many steps (0: only the final one).
    pub checkpoint_every: u64,
    pub block_layout: BlockLayout,
    /// Optional feature-network checkpoint for FPD; empty uses the seeded random network.
    pub feature_weights: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_points: 2048,
            latent_dim: 128,
            k_centroids: 16,
            beta: 1.0,
            target_mode: TargetMode::Standard,
            learning_rate: 1e-4,
            epochs: 100,
            steps: 0,
            seed: 0,
            grid_resolution: 28,
            hidden_width: 64,
            vanilla: false,
            dataset_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            eval_samples: 1000,
            checkpoint_every: 0,
            block_layout: BlockLayout::Contiguous,
            feature_weights: None,
        }
    }
}

fn layout_name(l: BlockLayout) -> &'static str {
    match l {
        BlockLayout::Contiguous => "contiguous",
        BlockLayout::Tiled => "tiled",
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{raw}`")))
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", idx + 1))
            })?;
            cfg.set(key.trim(), value.trim(), base_dir)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Relative paths in a config file are resolved against the file's directory.
    pub fn set(&mut self, key: &str, value: &str, base_dir: &Path) -> Result<(), CliError> {
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() { p } else { base_dir.join(p) }
        };
        match key {
            "n_points" => self.n_points = parse_value(key, value)?,
            "latent_dim" => self.latent_dim = parse_value(key, value)?,
            "k_centroids" => self.k_centroids = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "target_mode" => {
                self.target_mode = value.parse().map_err(|e: topoprior::Error| CliError::Config(e.to_string()))?
            }
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "steps" => self.steps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "grid_resolution" => self.grid_resolution = parse_value(key, value)?,
            "hidden_width" => self.hidden_width = parse_value(key, value)?,
            "vanilla" => self.vanilla = parse_value(key, value)?,
            "dataset_dir" => self.dataset_dir = path(value),
            "output_dir" => self.output_dir = path(value),
            "eval_samples" => self.eval_samples = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "block_layout" => {
                self.block_layout = match value {
                    "contiguous" => BlockLayout::Contiguous,
                    "tiled" => BlockLayout::Tiled,
                    other => {
                        return Err(CliError::Config(format!(
                            "`block_layout` must be contiguous or tiled, got `{other}`"
                        )))
                    }
                }
            }
            "feature_weights" => {
                self.feature_weights = if value.is_empty() { None } else { Some(path(value)) }
            }
            other => return Err(CliError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.n_points == 0 {
            return fail("`n_points` must be ≥ 1".into());
        }
        if self.latent_dim == 0 {
            return fail("`latent_dim` must be ≥ 1".into());
        }
        if self.hidden_width == 0 {
            return fail("`hidden_width` must be ≥ 1".into());
        }
        if !self.vanilla && (self.k_centroids == 0 || !self.n_points.is_multiple_of(self.k_centroids)) {
            return fail(format!(
                "`k_centroids` = {} must divide `n_points` = {}",
                self.k_centroids, self.n_points
            ));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return fail(format!("`beta` must be positive, got {}", self.beta));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("`learning_rate` must be ≥ 0, got {}", self.learning_rate));
        }
        if self.grid_resolution < 2 {
            return fail("`grid_resolution` must be ≥ 2".into());
        }
        if self.eval_samples < 2 {
            return fail("`eval_samples` must be ≥ 2".into());
        }
        Ok(())
    }

    /// Canonical `key = value` text; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_points = {}", self.n_points);
        let _ = writeln!(s, "latent_dim = {}", self.latent_dim);
        let _ = writeln!(s, "k_centroids = {}", self.k_centroids);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "target_mode = {}", self.target_mode);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "grid_resolution = {}", self.grid_resolution);
        let _ = writeln!(s, "hidden_width = {}", self.hidden_width);
        let _ = writeln!(s, "vanilla = {}", self.vanilla);
        let _ = writeln!(s, "dataset_dir = {}", self.dataset_dir.display());
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "eval_samples = {}", self.eval_samples);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "block_layout = {}", layout_name(self.block_layout));
        let fw = self.feature_weights.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let _ = writeln!(s, "feature_weights = {fw}");
        s
    }

    /// First 16 hex digits of SHA-256 over the canonical text, output directory excluded.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("output_dir "))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn schedule(&self) -> Schedule {
        if self.steps > 0 {
            Schedule::Steps(self.steps)
        } else {
            Schedule::Epochs(self.epochs)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n_points: self.n_points,
            net: NetConfig {
                latent_dim: self.latent_dim,
                hidden: self.hidden_width,
                vanilla: self.vanilla,
            },
            k_centroids: self.k_centroids,
            block_layout: self.block_layout,
            loss: LossConfig {
                beta: self.beta,
                target_mode: self.target_mode,
            },
            optimizer: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            kmeans: KMeansConfig::default(),
            seed: self.seed,
        }
    }
}
