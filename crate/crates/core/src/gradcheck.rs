//! Central finite-difference checks for the hand-written backward passes.
//!
//! Finite differences are only meaningful away from leaky-ReLU kinks and
//! max-pool ties, so [`GradCheckInstance::kink_free`] redraws candidates for a
//! seed until every pass it exercises keeps a margin of [`KINK_MARGIN`].

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::loss::{discriminator_loss_and_grad, generator_loss_and_grad, LossConfig, TargetMode};
use crate::nets::{init_params, Discriminator, Generator, ModelParams, NetConfig, ScorePair, Tensors};
use crate::pointcloud::sample_unit_sphere;
use crate::prior::{assemble_training_prior, build_centroid_block};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Step size for central differences.
pub const EPS: f64 = 1e-4;

/// Minimum pre-activation distance from a kink (ten times [`EPS`]).
pub const KINK_MARGIN: f64 = 1e-3;

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central differences of `f` with respect to every entry of every tensor,
/// in the order given by [`Tensors::tensors`].
pub fn numeric_tensor_grads<T: Tensors + Clone>(base: &T, f: impl Fn(&T) -> f64) -> Vec<Vec<f64>> {
    (0..base.tensors().len())
        .map(|ti| {
            (0..base.tensors()[ti].1.len())
                .map(|ei| {
                    let mut plus = base.clone();
                    let mut minus = base.clone();
                    *plus.tensors_mut()[ti].iter_mut().nth(ei).expect("index in range") += EPS;
                    *minus.tensors_mut()[ti].iter_mut().nth(ei).expect("index in range") -= EPS;
                    (f(&plus) - f(&minus)) / (2.0 * EPS)
                })
                .collect()
        })
        .collect()
}

/// Central differences of `f` with respect to every entry of `base`.
pub fn numeric_matrix_grad(base: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(base.raw_dim());
    for ((r, c), v) in g.indexed_iter_mut() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[[r, c]] += EPS;
        minus[[r, c]] -= EPS;
        *v = (f(&plus) - f(&minus)) / (2.0 * EPS);
    }
    g
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// Per-tensor relative errors between analytic and numeric gradients.
fn tensor_errors<T: Tensors>(label: &str, analytic: &T, numeric: &[Vec<f64>]) -> Vec<(String, f64)> {
    analytic
        .tensors()
        .iter()
        .zip(numeric)
        .map(|((name, a), n)| (format!("{label} {name}"), relative_error(&flat(a), n)))
        .collect()
}

/// A small network, prior and reference cloud with random projection weights
/// that turn each network output into a scalar objective.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub params: ModelParams,
    pub prior: Array2<f64>,
    pub cloud: Array2<f64>,
    pub out_weights: Array2<f64>,
    pub point_weights: Array1<f64>,
    pub shape_weight: f64,
}

impl GradCheckInstance {
    /// Draws instances for `seed` until one clears [`KINK_MARGIN`] everywhere.
    /// Sizes: `n` points, latent width `d`, hidden width `h`, `k` centroids.
    pub fn kink_free(seed: u64, n: usize, d: usize, h: usize, k: usize) -> Result<Self> {
        for attempt in 0..1000 {
            let inst = Self::draw(seed, attempt, n, d, h, k)?;
            if inst.kink_margin()? > KINK_MARGIN {
                return Ok(inst);
            }
        }
        Err(Error::DegenerateInput(format!("no kink-free instance for seed {seed}")))
    }

    fn draw(seed: u64, attempt: u64, n: usize, d: usize, h: usize, k: usize) -> Result<Self> {
        let sub = derive_seed(seed, &[attempt]);
        let cfg = NetConfig { latent_dim: d, hidden: h, vanilla: false };
        // Perturb biases away from zero so every code path carries signal.
        let mut params = init_params(cfg, sub)?;
        let mut rng = rng_from_seed(sub);
        for t in params.tensors_mut() {
            if t.nrows() == 1 {
                t.mapv_inplace(|_| rng.random_range(-0.1..0.1));
            }
        }
        let sphere = sample_unit_sphere(n, sub)?;
        let centroids = Array2::from_shape_simple_fn((k, 3), || rng.random_range(-0.5..0.5));
        let block = build_centroid_block(&centroids, n)?;
        let prior = assemble_training_prior(&sphere, d, &block, sub)?.data().clone();
        let cloud = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
        Ok(Self {
            params,
            prior,
            cloud,
            out_weights: Array2::from_shape_simple_fn((n, 3), || rng.sample(StandardNormal)),
            point_weights: Array1::from_shape_simple_fn(n, || rng.sample(StandardNormal)),
            shape_weight: rng.sample(StandardNormal),
        })
    }

    fn kink_margin(&self) -> Result<f64> {
        let g = self.params.generator.forward_traced(&self.prior)?;
        let d = &self.params.discriminator;
        Ok(g.kink_margin()
            .min(d.forward_traced(&self.cloud)?.kink_margin())
            .min(d.forward_traced(&g.output)?.kink_margin()))
    }

    /// Generator parameters and input under `Σ W ⊙ G(x)`.
    pub fn generator_errors(&self) -> Result<Vec<(String, f64)>> {
        let g = &self.params.generator;
        let objective = |gen: &Generator, x: &Array2<f64>| -> f64 {
            gen.forward_traced(x).map(|t| (&t.output * &self.out_weights).sum()).unwrap_or(f64::NAN)
        };
        let trace = g.forward_traced(&self.prior)?;
        let (grads, grad_input) = g.backward(&trace, &self.out_weights);
        let mut errs = tensor_errors("G", &grads, &numeric_tensor_grads(g, |gen| objective(gen, &self.prior)));
        let numeric_in = numeric_matrix_grad(&self.prior, |x| objective(g, x));
        errs.push(("G input".into(), relative_error(&flat(&grad_input), &flat(&numeric_in))));
        Ok(errs)
    }

    /// Discriminator parameters and input under `w·D(pᵢ) + w₀·D(P)`.
    pub fn discriminator_errors(&self) -> Result<Vec<(String, f64)>> {
        let disc = &self.params.discriminator;
        let objective = |d: &Discriminator, x: &Array2<f64>| -> f64 {
            d.forward_traced(x)
                .map(|t| t.scores.per_point.dot(&self.point_weights) + self.shape_weight * t.scores.per_shape)
                .unwrap_or(f64::NAN)
        };
        let trace = disc.forward_traced(&self.cloud)?;
        let (grads, grad_input) = disc.backward(&trace, &self.point_weights, self.shape_weight);
        let mut errs = tensor_errors("D", &grads, &numeric_tensor_grads(disc, |d| objective(d, &self.cloud)));
        let numeric_in = numeric_matrix_grad(&self.cloud, |x| objective(disc, x));
        errs.push(("D input".into(), relative_error(&flat(&grad_input), &flat(&numeric_in))));
        Ok(errs)
    }

    /// Generator loss back through the discriminator into G, and discriminator
    /// loss on (fixed generated cloud, reference) into D.
    pub fn training_loss_errors(&self, cfg: &LossConfig) -> Result<Vec<(String, f64)>> {
        let (g, disc) = (&self.params.generator, &self.params.discriminator);
        let lg = |gen: &Generator| -> f64 {
            let run = || -> Result<f64> {
                let out = gen.forward_traced(&self.prior)?.output;
                Ok(generator_loss_and_grad(&disc.forward_traced(&out)?.scores, cfg).0)
            };
            run().unwrap_or(f64::NAN)
        };
        let g_trace = g.forward_traced(&self.prior)?;
        let d_trace = disc.forward_traced(&g_trace.output)?;
        let (_, sg) = generator_loss_and_grad(&d_trace.scores, cfg);
        let (_, grad_fake) = disc.backward(&d_trace, &sg.per_point, sg.per_shape);
        let (g_grads, _) = g.backward(&g_trace, &grad_fake);
        let mut errs = tensor_errors("L_G", &g_grads, &numeric_tensor_grads(g, lg));

        let fake = g_trace.output;
        let ld = |d: &Discriminator| -> f64 {
            let run = || -> Result<f64> {
                let f = d.forward_traced(&fake)?.scores;
                let r = d.forward_traced(&self.cloud)?.scores;
                Ok(discriminator_loss_and_grad(&f, &r, cfg).0.total())
            };
            run().unwrap_or(f64::NAN)
        };
        let ft = disc.forward_traced(&fake)?;
        let rt = disc.forward_traced(&self.cloud)?;
        let (_, fg, rg) = discriminator_loss_and_grad(&ft.scores, &rt.scores, cfg);
        let (mut d_grads, _) = disc.backward(&ft, &fg.per_point, fg.per_shape);
        let (r_grads, _) = disc.backward(&rt, &rg.per_point, rg.per_shape);
        for (a, (_, b)) in d_grads.tensors_mut().into_iter().zip(r_grads.tensors()) {
            *a += b;
        }
        errs.extend(tensor_errors("L_D", &d_grads, &numeric_tensor_grads(disc, ld)));
        Ok(errs)
    }

    /// Every check above, in order.
    pub fn all_errors(&self, cfg: &LossConfig) -> Result<Vec<(String, f64)>> {
        let mut errs = self.generator_errors()?;
        errs.extend(self.discriminator_errors()?);
        errs.extend(self.training_loss_errors(cfg)?);
        Ok(errs)
    }
}

fn score_fd(f: &dyn Fn(&ScorePair) -> f64, s: &ScorePair) -> (Vec<f64>, f64) {
    let bump = |delta: f64, i: Option<usize>| {
        let mut p = s.clone();
        match i {
            Some(i) => p.per_point[i] += delta,
            None => p.per_shape += delta,
        }
        f(&p)
    };
    let pts = (0..s.n()).map(|i| (bump(EPS, Some(i)) - bump(-EPS, Some(i))) / (2.0 * EPS)).collect();
    (pts, (bump(EPS, None) - bump(-EPS, None)) / (2.0 * EPS))
}

/// Largest absolute gap between analytic and numeric loss gradients with
/// respect to the scores, over `cases` random score pairs per target mode.
pub fn loss_gradient_max_error(seed: u64, cases: usize) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut worst = 0.0f64;
    for mode in [TargetMode::Standard, TargetMode::Literal] {
        let cfg = LossConfig { beta: 0.5 + rng.random::<f64>(), target_mode: mode };
        for _ in 0..cases {
            let n = rng.random_range(1..10);
            let mk = |rng: &mut Rng| ScorePair {
                per_point: Array1::from_shape_simple_fn(n, || rng.random_range(-2.0..2.0)),
                per_shape: rng.random_range(-2.0..2.0),
            };
            let fake = mk(&mut rng);
            let real = mk(&mut rng);
            let (_, gg) = generator_loss_and_grad(&fake, &cfg);
            let (_, fg, rg) = discriminator_loss_and_grad(&fake, &real, &cfg);
            let checks = [
                (gg, score_fd(&|s| generator_loss_and_grad(s, &cfg).0, &fake)),
                (fg, score_fd(&|s| discriminator_loss_and_grad(s, &real, &cfg).0.total(), &fake)),
                (rg, score_fd(&|s| discriminator_loss_and_grad(&fake, s, &cfg).0.total(), &real)),
            ];
            for (analytic, (pts, shape)) in checks {
                for (a, b) in analytic.per_point.iter().zip(&pts) {
                    worst = worst.max((a - b).abs());
                }
                worst = worst.max((analytic.per_shape - shape).abs());
            }
        }
    }
    worst
}
