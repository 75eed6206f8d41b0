//! Reconstruction and WGAN-GP losses.
//!
//! The `*_graph` builders add a loss to a training graph. The plain functions
//! evaluate the same builders once and return the value.

use alloc::vec::Vec;

use rand::Rng;

use crate::batch::ImageBatch;
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::model::CriticMap;
use crate::tensor::Tensor;

/// Gradient penalty weight.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GpConfig {
    pub lambda: f32,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { lambda: 10.0 }
    }
}

/// Mean over samples of the (un-squared) Euclidean distance between `x` and `x_hat`.
pub fn reconstruction_graph(g: &mut Graph, x: Var, x_hat: Var) -> Var {
    let diff = g.sub(x, x_hat);
    let sq = g.mul(diff, diff);
    let per_sample = g.sum_rows(sq);
    let dist = g.sqrt(per_sample);
    g.mean(dist)
}

/// Points `t_i real_i + (1 - t_i) fake_i` with one `t_i ~ U(0, 1)` per pair.
pub fn interpolate<R: Rng + ?Sized>(real: &Tensor, fake: &Tensor, rng: &mut R) -> Tensor {
    assert_eq!(real.shape(), fake.shape());
    let w = real.row_len();
    let mut data = Vec::with_capacity(real.len());
    for i in 0..real.rows() {
        let t: f32 = rng.random();
        let (r, f) = (real.row(i), fake.row(i));
        data.extend((0..w).map(|j| t * r[j] + (1.0 - t) * f[j]));
    }
    Tensor::new(real.shape().to_vec(), data)
}

/// `lambda * mean_i (|grad_x d(x_i)|_2 - 1)^2` over the given points.
///
/// The input gradient is built inside `g`, so the penalty can be
/// differentiated with respect to the critic parameters.
pub fn penalty_at_graph<C: CriticMap + ?Sized>(
    g: &mut Graph,
    critic: &C,
    params: &[Var],
    points: Tensor,
    lambda: f32,
) -> Var {
    let x = g.leaf(points);
    let scores = critic.score(g, params, x);
    let total = g.sum(scores);
    let grad_x = g.grad(total, &[x])[0];
    let sq = g.mul(grad_x, grad_x);
    let per_sample = g.sum_rows(sq);
    let norm = g.sqrt(per_sample);
    let dev = g.add_scalar(norm, -1.0);
    let dev2 = g.mul(dev, dev);
    let mean = g.mean(dev2);
    g.scale(mean, lambda)
}

/// Gradient penalty on random interpolates between `real` and `fake`.
pub fn gradient_penalty_graph<C: CriticMap + ?Sized, R: Rng + ?Sized>(
    g: &mut Graph,
    critic: &C,
    params: &[Var],
    real: &Tensor,
    fake: &Tensor,
    lambda: f32,
    rng: &mut R,
) -> Var {
    let points = interpolate(real, fake, rng);
    penalty_at_graph(g, critic, params, points, lambda)
}

/// The critic's minimized loss: `mean d(fake) - mean d(real) + penalty`.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss_graph<C: CriticMap + ?Sized, R: Rng + ?Sized>(
    g: &mut Graph,
    critic: &C,
    params: &[Var],
    fake: &Tensor,
    real: &Tensor,
    gp: GpConfig,
    rng: &mut R,
) -> Var {
    let fv = g.leaf(fake.clone());
    let rv = g.leaf(real.clone());
    let sf = critic.score(g, params, fv);
    let sr = critic.score(g, params, rv);
    let mf = g.mean(sf);
    let mr = g.mean(sr);
    let gap = g.sub(mf, mr);
    let penalty = gradient_penalty_graph(g, critic, params, real, fake, gp.lambda, rng);
    g.add(gap, penalty)
}

/// `-mean d(fake)`; minimized by whatever produced `fake`.
pub fn generator_loss_graph<C: CriticMap + ?Sized>(g: &mut Graph, critic: &C, params: &[Var], fake: Var) -> Var {
    let s = critic.score(g, params, fake);
    let m = g.mean(s);
    g.scale(m, -1.0)
}

fn check_pair<C: CriticMap + ?Sized>(critic: &C, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(a.shape(), b.shape()));
    }
    check_input(critic, a)
}

fn check_input<C: CriticMap + ?Sized>(critic: &C, a: &Tensor) -> Result<()> {
    if a.shape().is_empty() || a.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if &a.shape()[1..] != critic.input_shape() {
        return Err(shape_err(critic.input_shape(), &a.shape()[1..]));
    }
    Ok(())
}

/// Mean per-sample Euclidean distance between two image batches.
pub fn reconstruction_loss(x: &ImageBatch, x_hat: &ImageBatch) -> Result<f32> {
    if x.shape() != x_hat.shape() || x.count() != x_hat.count() {
        return Err(shape_err((x.count(), x.shape()), (x_hat.count(), x_hat.shape())));
    }
    if x.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut g = Graph::new();
    let a = g.leaf(x.to_tensor());
    let b = g.leaf(x_hat.to_tensor());
    let l = reconstruction_graph(&mut g, a, b);
    Ok(g.value(l).item())
}

pub fn gradient_penalty<C: CriticMap + ?Sized, R: Rng + ?Sized>(
    critic: &C,
    real: &Tensor,
    fake: &Tensor,
    lambda: f32,
    rng: &mut R,
) -> Result<f32> {
    check_pair(critic, real, fake)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig("lambda must be non-negative".into()));
    }
    let mut g = Graph::new();
    let params = critic.bind(&mut g);
    let p = gradient_penalty_graph(&mut g, critic, &params, real, fake, lambda, rng);
    Ok(g.value(p).item())
}

pub fn critic_objective<C: CriticMap + ?Sized, R: Rng + ?Sized>(
    critic: &C,
    fake_or_mixed: &Tensor,
    real: &Tensor,
    gp: GpConfig,
    rng: &mut R,
) -> Result<f32> {
    check_pair(critic, fake_or_mixed, real)?;
    let mut g = Graph::new();
    let params = critic.bind(&mut g);
    let l = critic_loss_graph(&mut g, critic, &params, fake_or_mixed, real, gp, rng);
    Ok(g.value(l).item())
}

pub fn generator_objective<C: CriticMap + ?Sized>(critic: &C, fake_or_mixed: &Tensor) -> Result<f32> {
    check_input(critic, fake_or_mixed)?;
    let mut g = Graph::new();
    let params = critic.bind(&mut g);
    let x = g.leaf(fake_or_mixed.clone());
    let l = generator_loss_graph(&mut g, critic, &params, x);
    Ok(g.value(l).item())
}
