//! Least-squares adversarial losses on shape and per-point scores.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::nets::ScorePair;

/// Discriminator targets for generated clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetMode {
    /// Real scores are pushed to 1 and generated scores to 0.
    #[default]
    Standard,
    /// Both real and generated scores are pushed to 1.
    Literal,
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "literal" => Ok(Self::Literal),
            other => Err(Error::invalid(format!(
                "target_mode must be `standard` or `literal`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for TargetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::Literal => "literal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the generator's per-point term.
    pub beta: f64,
    pub target_mode: TargetMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            target_mode: TargetMode::Standard,
        }
    }
}

impl LossConfig {
    pub fn new(beta: f64, target_mode: TargetMode) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { beta, target_mode })
    }

    fn fake_target(&self) -> f64 {
        match self.target_mode {
            TargetMode::Standard => 0.0,
            TargetMode::Literal => 1.0,
        }
    }
}

/// Loss value together with its gradient with respect to each score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrad {
    pub per_point: Array1<f64>,
    pub per_shape: f64,
}

/// `½ (D(P) − 1)² + β/(2N) Σ (D(pᵢ) − 1)²`
pub fn loss_generator(scores: &ScorePair, cfg: &LossConfig) -> f64 {
    generator_loss_and_grad(scores, cfg).0
}

pub fn generator_loss_and_grad(scores: &ScorePair, cfg: &LossConfig) -> (f64, ScoreGrad) {
    let n = scores.n() as f64;
    let shape_residual = scores.per_shape - 1.0;
    let point_sq: f64 = scores.per_point.iter().map(|s| (s - 1.0).powi(2)).sum();
    let loss = 0.5 * shape_residual * shape_residual + cfg.beta * point_sq / (2.0 * n);
    let grad = ScoreGrad {
        per_point: scores.per_point.mapv(|s| cfg.beta * (s - 1.0) / n),
        per_shape: shape_residual,
    };
    (loss, grad)
}

/// Discriminator loss split into its shape and point parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorLoss {
    pub shape: f64,
    pub point: f64,
}

impl DiscriminatorLoss {
    pub fn total(&self) -> f64 {
        self.shape + self.point
    }
}

pub fn loss_discriminator(fake: &ScorePair, real: &ScorePair, cfg: &LossConfig) -> DiscriminatorLoss {
    discriminator_loss_and_grad(fake, real, cfg).0
}

/// Shape term `½((D(P) − t)² + (D(P̂) − 1)²)` plus point term
/// `1/(2N) Σ ((D(pᵢ) − t)² + (D(p̂ᵢ) − 1)²)`, with fake target `t` from the mode.
/// Each point sum is averaged over its own cloud's size.
pub fn discriminator_loss_and_grad(
    fake: &ScorePair,
    real: &ScorePair,
    cfg: &LossConfig,
) -> (DiscriminatorLoss, ScoreGrad, ScoreGrad) {
    let t = cfg.fake_target();
    let nf = fake.n() as f64;
    let nr = real.n() as f64;
    let shape = 0.5 * ((fake.per_shape - t).powi(2) + (real.per_shape - 1.0).powi(2));
    let fake_points: f64 = fake.per_point.iter().map(|s| (s - t).powi(2)).sum::<f64>() / (2.0 * nf);
    let real_points: f64 = real.per_point.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / (2.0 * nr);
    let fake_grad = ScoreGrad {
        per_point: fake.per_point.mapv(|s| (s - t) / nf),
        per_shape: fake.per_shape - t,
    };
    let real_grad = ScoreGrad {
        per_point: real.per_point.mapv(|s| (s - 1.0) / nr),
        per_shape: real.per_shape - 1.0,
    };
    (
        DiscriminatorLoss {
            shape,
            point: fake_points + real_points,
        },
        fake_grad,
        real_grad,
    )
}
