//! Generator and discriminator with hand-written backward passes.
//!
//! Both networks apply MLPs with weights shared across points, so every
//! per-point computation is independent of row order; the only cross-point
//! operation is a column-wise max pool.
//!
//! Generator, for an N×W prior `X` whose first three columns are the sphere `S`:
//!
//! ```text
//! A1 = lrelu(X  W1 + b1)          N×h
//! A2 = lrelu(A1 W2 + b2)          N×h
//! A3 = lrelu(A2 W3 + b3)          N×h
//! g  = maxpool_rows(A3)           h
//! A4 = lrelu([A3 | 1 gᵀ] W4 + b4) N×h
//! P  = S + A4 W5 + b5             N×3
//! ```
//!
//! Discriminator, for an N×3 cloud `P`:
//!
//! ```text
//! F3 = lrelu(lrelu(lrelu(P V1 + c1) V2 + c2) V3 + c3)   N×h
//! per_point = F3 u + a                                  N
//! per_shape = maxpool_rows(F3) · v + e                  scalar
//! ```
//!
//! Parameters are rounded to the nearest `f32` at initialization and after
//! every optimizer step, so checkpoints (stored as `f32`) restore them exactly.

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::prior::{prior_width, PriorLatentMatrix};
use crate::rng::{derive_seed, rng_from_seed, Rng, STREAM_INIT};

pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
fn lrelu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn lrelu_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[inline]
pub(crate) fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

pub(crate) fn apply_lrelu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(lrelu)
}

/// `grad ⊙ lrelu'(pre)`
fn lrelu_backward(pre: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    Zip::from(&mut out).and(pre).for_each(|g, &p| *g *= lrelu_grad(p));
    out
}

/// Column-wise max over rows, with the first maximizing row for each column.
pub(crate) fn max_pool(a: &Array2<f64>) -> (Array1<f64>, Vec<usize>) {
    let h = a.ncols();
    let mut best = Array1::from_elem(h, f64::NEG_INFINITY);
    let mut arg = vec![0usize; h];
    for (i, row) in a.outer_iter().enumerate() {
        for j in 0..h {
            if row[j] > best[j] {
                best[j] = row[j];
                arg[j] = i;
            }
        }
    }
    (best, arg)
}

/// Distance to the nearest point where a pass stops being differentiable:
/// the smallest |pre-activation| and the smallest gap between the two largest
/// entries of any pooled column.
fn kink_margin(pre: &[&Array2<f64>], pooled: &Array2<f64>) -> f64 {
    let act = pre
        .iter()
        .flat_map(|z| z.iter())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let mut gap = f64::INFINITY;
    if pooled.nrows() > 1 {
        for col in pooled.columns() {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &v in col {
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            gap = gap.min(first - second);
        }
    }
    act.min(gap)
}

/// Fully connected layer: `x W + b` with `W` stored in×out and `b` as a 1×out row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Dense {
    pub(crate) fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || {
            round_f32(rng.random_range(-bound..=bound))
        });
        Self {
            weight,
            bias: Array2::zeros((1, fan_out)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array2::zeros(self.bias.raw_dim()),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub(crate) fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    fn backward(&self, x: &Array2<f64>, grad_out: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.weight += &x.t().dot(grad_out);
        grad.bias += &grad_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad_out.dot(&self.weight.t())
    }

    fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<f64>)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Array2<f64>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Uniform access to the named tensors of a parameter (or gradient) container.
pub trait Tensors {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Flattened copy of every tensor in declaration order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub embed1: Dense,
    pub embed2: Dense,
    pub embed3: Dense,
    pub head1: Dense,
    pub head2: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub layer1: Dense,
    pub layer2: Dense,
    pub layer3: Dense,
    pub point_head: Dense,
    pub shape_head: Dense,
}

impl Tensors for Generator {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::with_capacity(10);
        self.embed1.push_tensors("embed1", &mut out);
        self.embed2.push_tensors("embed2", &mut out);
        self.embed3.push_tensors("embed3", &mut out);
        self.head1.push_tensors("head1", &mut out);
        self.head2.push_tensors("head2", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::with_capacity(10);
        self.embed1.push_tensors_mut(&mut out);
        self.embed2.push_tensors_mut(&mut out);
        self.embed3.push_tensors_mut(&mut out);
        self.head1.push_tensors_mut(&mut out);
        self.head2.push_tensors_mut(&mut out);
        out
    }
}

impl Tensors for Discriminator {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::with_capacity(10);
        self.layer1.push_tensors("layer1", &mut out);
        self.layer2.push_tensors("layer2", &mut out);
        self.layer3.push_tensors("layer3", &mut out);
        self.point_head.push_tensors("point_head", &mut out);
        self.shape_head.push_tensors("shape_head", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::with_capacity(10);
        self.layer1.push_tensors_mut(&mut out);
        self.layer2.push_tensors_mut(&mut out);
        self.layer3.push_tensors_mut(&mut out);
        self.point_head.push_tensors_mut(&mut out);
        self.shape_head.push_tensors_mut(&mut out);
        out
    }
}

/// Intermediate values of a generator pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    input: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    z3: Array2<f64>,
    pool_arg: Vec<usize>,
    cat: Array2<f64>,
    z4: Array2<f64>,
    a4: Array2<f64>,
    pub output: Array2<f64>,
}

impl GeneratorTrace {
    /// See [`DiscriminatorTrace::kink_margin`].
    pub fn kink_margin(&self) -> f64 {
        let pooled = self.cat.slice(s![.., ..self.z3.ncols()]).to_owned();
        kink_margin(&[&self.z1, &self.z2, &self.z3, &self.z4], &pooled)
    }
}

impl Generator {
    pub fn input_width(&self) -> usize {
        self.embed1.fan_in()
    }

    pub fn hidden(&self) -> usize {
        self.embed1.fan_out()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embed1: self.embed1.zeros_like(),
            embed2: self.embed2.zeros_like(),
            embed3: self.embed3.zeros_like(),
            head1: self.head1.zeros_like(),
            head2: self.head2.zeros_like(),
        }
    }

    pub fn forward_traced(&self, input: &Array2<f64>) -> Result<GeneratorTrace> {
        if input.ncols() != self.input_width() {
            return Err(Error::invalid(format!(
                "generator expects {} input columns, prior has {}",
                self.input_width(),
                input.ncols()
            )));
        }
        if input.nrows() == 0 {
            return Err(Error::invalid("generator input has no rows"));
        }
        let h = self.hidden();
        let z1 = self.embed1.forward(input);
        let a1 = apply_lrelu(&z1);
        let z2 = self.embed2.forward(&a1);
        let a2 = apply_lrelu(&z2);
        let z3 = self.embed3.forward(&a2);
        let a3 = apply_lrelu(&z3);
        let (global, pool_arg) = max_pool(&a3);
        let mut cat = Array2::zeros((input.nrows(), 2 * h));
        cat.slice_mut(s![.., ..h]).assign(&a3);
        cat.slice_mut(s![.., h..]).assign(&global.broadcast((input.nrows(), h)).unwrap());
        let z4 = self.head1.forward(&cat);
        let a4 = apply_lrelu(&z4);
        let output = self.head2.forward(&a4) + input.slice(s![.., 0..3]);
        Ok(GeneratorTrace {
            input: input.clone(),
            z1,
            a1,
            z2,
            a2,
            z3,
            pool_arg,
            cat,
            z4,
            a4,
            output,
        })
    }

    /// Returns parameter gradients and `∂L/∂input` given `∂L/∂output`.
    pub fn backward(&self, trace: &GeneratorTrace, grad_output: &Array2<f64>) -> (Generator, Array2<f64>) {
        let h = self.hidden();
        let mut grads = self.zeros_like();
        let g_a4 = self.head2.backward(&trace.a4, grad_output, &mut grads.head2);
        let g_z4 = lrelu_backward(&trace.z4, &g_a4);
        let g_cat = self.head1.backward(&trace.cat, &g_z4, &mut grads.head1);
        let mut g_a3 = g_cat.slice(s![.., ..h]).to_owned();
        let g_global = g_cat.slice(s![.., h..]).sum_axis(Axis(0));
        for (j, &row) in trace.pool_arg.iter().enumerate() {
            g_a3[[row, j]] += g_global[j];
        }
        let g_z3 = lrelu_backward(&trace.z3, &g_a3);
        let g_a2 = self.embed3.backward(&trace.a2, &g_z3, &mut grads.embed3);
        let g_z2 = lrelu_backward(&trace.z2, &g_a2);
        let g_a1 = self.embed2.backward(&trace.a1, &g_z2, &mut grads.embed2);
        let g_z1 = lrelu_backward(&trace.z1, &g_a1);
        let mut g_input = self.embed1.backward(&trace.input, &g_z1, &mut grads.embed1);
        // Residual path from the sphere columns.
        let mut sphere_cols = g_input.slice_mut(s![.., 0..3]);
        sphere_cols += grad_output;
        (grads, g_input)
    }
}

/// Intermediate values of a discriminator pass.
#[derive(Debug, Clone)]
pub struct DiscriminatorTrace {
    input: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    z3: Array2<f64>,
    a3: Array2<f64>,
    pool_arg: Vec<usize>,
    global: Array2<f64>,
    pub scores: ScorePair,
}

/// Per-point scores `D(p_i)` and the per-shape score `D(P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePair {
    pub per_point: Array1<f64>,
    pub per_shape: f64,
}

impl ScorePair {
    pub fn n(&self) -> usize {
        self.per_point.len()
    }
}

impl DiscriminatorTrace {
    /// Smallest distance from a leaky-ReLU kink or a max-pool tie; finite
    /// differences are only meaningful when this exceeds the step size.
    pub fn kink_margin(&self) -> f64 {
        kink_margin(&[&self.z1, &self.z2, &self.z3], &self.a3)
    }
}

impl Discriminator {
    pub fn hidden(&self) -> usize {
        self.layer1.fan_out()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layer1: self.layer1.zeros_like(),
            layer2: self.layer2.zeros_like(),
            layer3: self.layer3.zeros_like(),
            point_head: self.point_head.zeros_like(),
            shape_head: self.shape_head.zeros_like(),
        }
    }

    pub fn forward_traced(&self, input: &Array2<f64>) -> Result<DiscriminatorTrace> {
        if input.nrows() == 0 {
            return Err(Error::invalid("discriminator input has no points"));
        }
        if input.ncols() != 3 {
            return Err(Error::invalid(format!(
                "discriminator expects 3 columns, got {}",
                input.ncols()
            )));
        }
        let z1 = self.layer1.forward(input);
        let a1 = apply_lrelu(&z1);
        let z2 = self.layer2.forward(&a1);
        let a2 = apply_lrelu(&z2);
        let z3 = self.layer3.forward(&a2);
        let a3 = apply_lrelu(&z3);
        let (pooled, pool_arg) = max_pool(&a3);
        let global = pooled.insert_axis(Axis(0));
        let per_point = self.point_head.forward(&a3).column(0).to_owned();
        let per_shape = self.shape_head.forward(&global)[[0, 0]];
        Ok(DiscriminatorTrace {
            input: input.clone(),
            z1,
            a1,
            z2,
            a2,
            z3,
            a3,
            pool_arg,
            global,
            scores: ScorePair {
                per_point,
                per_shape,
            },
        })
    }

    /// Returns parameter gradients and `∂L/∂input` given the loss gradient
    /// with respect to each score.
    pub fn backward(
        &self,
        trace: &DiscriminatorTrace,
        grad_per_point: &Array1<f64>,
        grad_per_shape: f64,
    ) -> (Discriminator, Array2<f64>) {
        let mut grads = self.zeros_like();
        let g_point = grad_per_point.view().insert_axis(Axis(1)).to_owned();
        let mut g_a3 = self.point_head.backward(&trace.a3, &g_point, &mut grads.point_head);
        let g_shape = Array2::from_elem((1, 1), grad_per_shape);
        let g_global = self.shape_head.backward(&trace.global, &g_shape, &mut grads.shape_head);
        for (j, &row) in trace.pool_arg.iter().enumerate() {
            g_a3[[row, j]] += g_global[[0, j]];
        }
        let g_z3 = lrelu_backward(&trace.z3, &g_a3);
        let g_a2 = self.layer3.backward(&trace.a2, &g_z3, &mut grads.layer3);
        let g_z2 = lrelu_backward(&trace.z2, &g_a2);
        let g_a1 = self.layer2.backward(&trace.a1, &g_z2, &mut grads.layer2);
        let g_z1 = lrelu_backward(&trace.z1, &g_a1);
        let g_input = self.layer1.backward(&trace.input, &g_z1, &mut grads.layer1);
        (grads, g_input)
    }
}

/// Sizes that fix every tensor shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Without the trailing centroid/sphere block the generator reads 3 + d columns.
    pub vanilla: bool,
}

impl NetConfig {
    pub fn input_width(&self) -> usize {
        prior_width(self.latent_dim, !self.vanilla)
    }

    /// Closed-form parameter count of generator plus discriminator.
    pub fn parameter_count(&self) -> usize {
        let (w, h) = (self.input_width(), self.hidden);
        let generator = (w * h + h) + 2 * (h * h + h) + (2 * h * h + h) + (3 * h + 3);
        let discriminator = (3 * h + h) + 2 * (h * h + h) + 2 * (h + 1);
        generator + discriminator
    }
}

/// All weights of both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl Tensors for ModelParams {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let g = self.generator.tensors().into_iter().map(|(n, t)| (format!("generator.{n}"), t));
        let d = self.discriminator.tensors().into_iter().map(|(n, t)| (format!("discriminator.{n}"), t));
        g.chain(d).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = self.generator.tensors_mut();
        out.extend(self.discriminator.tensors_mut());
        out
    }
}

/// Deterministic initialization: weights uniform in ±1/√fan_in, biases zero.
pub fn init_params(config: NetConfig, seed: u64) -> Result<ModelParams> {
    if config.latent_dim == 0 || config.hidden == 0 {
        return Err(Error::invalid(format!(
            "latent_dim and hidden must be ≥ 1, got d = {}, h = {}",
            config.latent_dim, config.hidden
        )));
    }
    let h = config.hidden;
    let mut rng = rng_from_seed(derive_seed(seed, &[STREAM_INIT]));
    let generator = Generator {
        embed1: Dense::init(config.input_width(), h, &mut rng),
        embed2: Dense::init(h, h, &mut rng),
        embed3: Dense::init(h, h, &mut rng),
        head1: Dense::init(2 * h, h, &mut rng),
        head2: Dense::init(h, 3, &mut rng),
    };
    let discriminator = Discriminator {
        layer1: Dense::init(3, h, &mut rng),
        layer2: Dense::init(h, h, &mut rng),
        layer3: Dense::init(h, h, &mut rng),
        point_head: Dense::init(h, 1, &mut rng),
        shape_head: Dense::init(h, 1, &mut rng),
    };
    Ok(ModelParams {
        config,
        generator,
        discriminator,
    })
}

pub fn generator_forward(prior: &PriorLatentMatrix, params: &ModelParams) -> Result<PointCloud> {
    let trace = params.generator.forward_traced(prior.data())?;
    PointCloud::new(trace.output)
}

pub fn discriminator_forward(pc: &PointCloud, params: &ModelParams) -> Result<ScorePair> {
    Ok(params.discriminator.forward_traced(pc.points())?.scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::sample_unit_sphere;
    use crate::prior::assemble_eval_prior;

    fn toy(vanilla: bool) -> NetConfig {
        NetConfig {
            latent_dim: 16,
            hidden: 32,
            vanilla,
        }
    }

    #[test]
    fn generator_shape_and_determinism() {
        let params = init_params(toy(false), 0).unwrap();
        let sphere = sample_unit_sphere(256, 1).unwrap();
        let prior = assemble_eval_prior(&sphere, 16, 2).unwrap();
        let a = generator_forward(&prior, &params).unwrap();
        let b = generator_forward(&prior, &params).unwrap();
        assert_eq!(a.points().dim(), (256, 3));
        assert!(a.points().iter().zip(b.points()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn generator_rejects_width_mismatch() {
        let params = init_params(toy(true), 0).unwrap();
        let sphere = sample_unit_sphere(8, 1).unwrap();
        let prior = assemble_eval_prior(&sphere, 16, 2).unwrap();
        assert!(matches!(generator_forward(&prior, &params), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn discriminator_shapes_and_empty_input() {
        let params = init_params(toy(false), 0).unwrap();
        let sphere = sample_unit_sphere(256, 1).unwrap();
        let pc = PointCloud::new(sphere.points().clone()).unwrap();
        let s = discriminator_forward(&pc, &params).unwrap();
        assert_eq!(s.n(), 256);
        assert!(s.per_shape.is_finite());
        assert!(params.discriminator.forward_traced(&Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(toy(false), 5).unwrap();
        let b = init_params(toy(false), 5).unwrap();
        assert!(a.flatten().iter().zip(b.flatten()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, init_params(toy(false), 6).unwrap());
        for (name, t) in a.tensors() {
            if name.ends_with(".bias") {
                assert!(t.iter().all(|&v| v == 0.0), "{name}");
            } else {
                let bound = 1.0 / (t.nrows() as f64).sqrt();
                assert!(t.iter().all(|&v| v.abs() <= bound + 1e-7), "{name}");
                assert!(t.iter().all(|&v| round_f32(v) == v));
            }
        }
    }

    #[test]
    fn parameter_count_matches_layer_table() {
        // d = 16, h = 32, prior width 22:
        //   generator:     22·32+32 + 2·(32·32+32) + (64·32+32) + (32·3+3) = 5027
        //   discriminator: 3·32+32 + 2·(32·32+32) + 2·(32+1)             = 2306
        let p = init_params(toy(false), 0).unwrap();
        assert_eq!(p.parameter_count(), 7333);
        assert_eq!(toy(false).parameter_count(), 7333);
        // Vanilla drops three input columns: 3·32 fewer weights.
        assert_eq!(init_params(toy(true), 0).unwrap().parameter_count(), 7333 - 96);
    }
}
