//! Downstream novelty classifiers.
//!
//! Both detectors are two-class max-margin classifiers trained on generated
//! positives against real negatives. Scores are signed margins: higher means
//! more novel.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::batch::ImageBatch;
use crate::error::{shape_err, Error, Result};
use crate::model::{encode, generate, Encoder, Generator, NetworkSet};
use crate::prior::{sample_positive, PriorConfig, UnimodalPrior};
use crate::svm::{median_heuristic_gamma, LinearSvm, RbfSvm, SolverConfig, DEFAULT_CACHE_BYTES};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectorConfig {
    /// Training samples drawn for each class.
    pub samples_per_class: usize,
    pub c: f64,
    pub tolerance: f64,
    /// Points used for the RBF bandwidth estimate.
    pub bandwidth_points: usize,
    pub cache_bytes: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            samples_per_class: 5000,
            c: 1.0,
            tolerance: 1e-3,
            bandwidth_points: 1000,
            cache_bytes: DEFAULT_CACHE_BYTES,
        }
    }
}

impl DetectorConfig {
    fn solver(&self) -> SolverConfig {
        SolverConfig {
            c: self.c,
            tolerance: self.tolerance,
            ..SolverConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DetectorKind {
    /// Linear kernel on encoder features.
    LatentLinear,
    /// RBF kernel on flattened images.
    ImageRbf,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::LatentLinear => "latent_linear",
            DetectorKind::ImageRbf => "image_rbf",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DetectorState {
    Linear(LinearSvm),
    Rbf(RbfSvm),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectorModel {
    pub kind: DetectorKind,
    pub feature_dim: usize,
    /// Training samples per class as (positive, negative).
    pub class_counts: (usize, usize),
    pub state: DetectorState,
}

impl DetectorModel {
    /// Fits on precomputed row-major features; positives are the novel class.
    pub fn fit_features<R: Rng + ?Sized>(
        kind: DetectorKind,
        positive: &[f32],
        negative: &[f32],
        dim: usize,
        config: &DetectorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || positive.len() % dim != 0 || negative.len() % dim != 0 {
            return Err(shape_err(dim, (positive.len(), negative.len())));
        }
        let (np, nn) = (positive.len() / dim, negative.len() / dim);
        let mut data = Vec::with_capacity(positive.len() + negative.len());
        data.extend_from_slice(positive);
        data.extend_from_slice(negative);
        let labels: Vec<bool> = (0..np + nn).map(|i| i < np).collect();
        let state = match kind {
            DetectorKind::LatentLinear => {
                DetectorState::Linear(LinearSvm::fit(&data, dim, &labels, &config.solver(), rng)?)
            }
            DetectorKind::ImageRbf => {
                let gamma = median_heuristic_gamma(&data, dim, config.bandwidth_points)?;
                DetectorState::Rbf(RbfSvm::fit(
                    &data,
                    dim,
                    &labels,
                    gamma,
                    &config.solver(),
                    config.cache_bytes,
                )?)
            }
        };
        Ok(DetectorModel {
            kind,
            feature_dim: dim,
            class_counts: (np, nn),
            state,
        })
    }

    /// Margin of one feature row.
    pub fn decision(&self, features: &[f32]) -> f64 {
        match &self.state {
            DetectorState::Linear(svm) => svm.decision(features),
            DetectorState::Rbf(svm) => svm.decision(features),
        }
    }
}

/// `count` pool rows: without replacement when the pool is large enough,
/// with replacement otherwise.
fn draw_negatives<R: Rng + ?Sized>(pool: &ImageBatch, count: usize, rng: &mut R) -> Result<ImageBatch> {
    if pool.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let idx: Vec<usize> = if pool.count() >= count {
        index::sample(rng, pool.count(), count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..pool.count())).collect()
    };
    Ok(pool.select(&idx))
}

/// Linear classifier on `E(G(z_p))` (novel) versus `E(x)` for negatives.
pub fn fit_latent_detector<R: Rng + ?Sized>(
    nets: &NetworkSet,
    x_n_pool: &ImageBatch,
    prior: &PriorConfig,
    config: &DetectorConfig,
    rng: &mut R,
) -> Result<DetectorModel> {
    let n = config.samples_per_class;
    let z_p = sample_positive(prior, n, rng)?;
    let positive = encode(&nets.encoder, &generate(&nets.generator, &z_p)?)?;
    let negative = encode(&nets.encoder, &draw_negatives(x_n_pool, n, rng)?)?;
    DetectorModel::fit_features(
        DetectorKind::LatentLinear,
        positive.codes().data(),
        negative.codes().data(),
        nets.encoder.latent_dim(),
        config,
        rng,
    )
}

/// RBF classifier on `G(z)` (novel) versus raw negatives.
pub fn fit_vanilla_detector<R: Rng + ?Sized>(
    generator: &Generator,
    x_n_pool: &ImageBatch,
    prior: &UnimodalPrior,
    config: &DetectorConfig,
    rng: &mut R,
) -> Result<DetectorModel> {
    let n = config.samples_per_class;
    let positive = generate(generator, &prior.sample(n, rng)?)?;
    let negative = draw_negatives(x_n_pool, n, rng)?;
    if positive.shape() != negative.shape() {
        return Err(shape_err(negative.shape(), positive.shape()));
    }
    DetectorModel::fit_features(
        DetectorKind::ImageRbf,
        positive.data(),
        negative.data(),
        positive.shape().len(),
        config,
        rng,
    )
}

/// Novelty scores for `x_u`. Latent detectors need the encoder.
pub fn score_batch(model: &DetectorModel, encoder: Option<&Encoder>, x_u: &ImageBatch) -> Result<Vec<f64>> {
    match model.kind {
        DetectorKind::LatentLinear => {
            let e = encoder.ok_or(Error::MissingEncoder)?;
            let z = encode(e, x_u)?;
            if z.latent_dim() != model.feature_dim {
                return Err(shape_err(model.feature_dim, z.latent_dim()));
            }
            Ok((0..z.count()).map(|i| model.decision(z.code(i))).collect())
        }
        DetectorKind::ImageRbf => {
            if x_u.shape().len() != model.feature_dim {
                return Err(shape_err(model.feature_dim, x_u.shape().len()));
            }
            Ok((0..x_u.count()).map(|i| model.decision(x_u.sample(i))).collect())
        }
    }
}
