//! Imposed latent distributions.
//!
//! Negatives are pushed towards `N(negative_mean, diag(negative_variance))`,
//! novelties implicitly towards `N(positive_mean, diag(positive_variance))`,
//! and the unlabeled set towards their mixture with weight `contamination` on
//! the positive mode.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Which distribution a [`LatentBatch`] came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentOrigin {
    NegativePrior,
    PositivePrior,
    UnlabeledPrior,
    Encoded,
}

/// Latent codes, `[count, latent_dim]`, all finite.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    codes: Tensor,
    origin: LatentOrigin,
}

impl LatentBatch {
    pub fn new(codes: Tensor, origin: LatentOrigin) -> Result<Self> {
        if codes.shape().len() != 2 {
            return Err(shape_err("[count, latent_dim]", codes.shape()));
        }
        if codes.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if !codes.is_finite() {
            return Err(Error::InvalidConfig("latent codes must be finite".into()));
        }
        Ok(LatentBatch { codes, origin })
    }

    pub fn codes(&self) -> &Tensor {
        &self.codes
    }

    pub fn into_codes(self) -> Tensor {
        self.codes
    }

    pub fn origin(&self) -> LatentOrigin {
        self.origin
    }

    pub fn count(&self) -> usize {
        self.codes.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.codes.row_len()
    }

    pub fn code(&self, i: usize) -> &[f32] {
        self.codes.row(i)
    }
}

/// The bimodal latent prior with diagonal covariances.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PriorConfig {
    pub latent_dim: usize,
    pub negative_mean: Vec<f32>,
    pub positive_mean: Vec<f32>,
    /// Diagonal of the negative-mode covariance.
    pub negative_variance: Vec<f32>,
    /// Diagonal of the positive-mode covariance.
    pub positive_variance: Vec<f32>,
    /// Weight of the positive mode in the unlabeled mixture.
    pub contamination: f64,
}

impl PriorConfig {
    /// Modes at `(-separation, 0, ...)` and `(+separation, 0, ...)` with
    /// identity covariances.
    pub fn symmetric(latent_dim: usize, separation: f32, contamination: f64) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be at least 1".into()));
        }
        let mut negative_mean = vec![0.0; latent_dim];
        let mut positive_mean = vec![0.0; latent_dim];
        negative_mean[0] = -separation;
        positive_mean[0] = separation;
        let cfg = PriorConfig {
            latent_dim,
            negative_mean,
            positive_mean,
            negative_variance: vec![1.0; latent_dim],
            positive_variance: vec![1.0; latent_dim],
            contamination,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default placement: modes 6 standard deviations apart along the first axis.
    pub fn default_for(latent_dim: usize, contamination: f64) -> Result<Self> {
        Self::symmetric(latent_dim, 3.0, contamination)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.latent_dim;
        if n == 0 {
            return Err(Error::InvalidConfig("latent_dim must be at least 1".into()));
        }
        for (name, v) in [
            ("negative_mean", &self.negative_mean),
            ("positive_mean", &self.positive_mean),
            ("negative_variance", &self.negative_variance),
            ("positive_variance", &self.positive_variance),
        ] {
            if v.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "{name} has length {}, latent_dim is {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if self
            .negative_variance
            .iter()
            .chain(&self.positive_variance)
            .any(|&s| s <= 0.0)
        {
            return Err(Error::InvalidConfig(
                "covariance entries must be strictly positive".into(),
            ));
        }
        if self.negative_mean == self.positive_mean {
            return Err(Error::InvalidConfig("prior modes must be distinct".into()));
        }
        check_contamination(self.contamination)
    }
}

pub(crate) fn check_contamination(pi: f64) -> Result<()> {
    if pi > 0.0 && pi <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "contamination rate must lie in (0, 1], got {pi}"
        )))
    }
}

fn gaussian_rows<R: Rng + ?Sized>(mean: &[f32], variance: &[f32], count: usize, rng: &mut R) -> Vec<f32> {
    let std: Vec<f32> = variance.iter().map(|&v| libm::sqrtf(v)).collect();
    let mut out = Vec::with_capacity(count * mean.len());
    for _ in 0..count {
        push_gaussian(&mut out, mean, &std, rng);
    }
    out
}

fn push_gaussian<R: Rng + ?Sized>(out: &mut Vec<f32>, mean: &[f32], std: &[f32], rng: &mut R) {
    for (m, s) in mean.iter().zip(std) {
        let e: f32 = StandardNormal.sample(rng);
        out.push(m + s * e);
    }
}

fn batch(config: &PriorConfig, count: usize, data: Vec<f32>, origin: LatentOrigin) -> LatentBatch {
    LatentBatch {
        codes: Tensor::new(vec![count, config.latent_dim], data),
        origin,
    }
}

/// `count` independent draws from the negative mode.
pub fn sample_negative<R: Rng + ?Sized>(config: &PriorConfig, count: usize, rng: &mut R) -> Result<LatentBatch> {
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    config.validate()?;
    let data = gaussian_rows(&config.negative_mean, &config.negative_variance, count, rng);
    Ok(batch(config, count, data, LatentOrigin::NegativePrior))
}

/// `count` independent draws from the positive mode.
pub fn sample_positive<R: Rng + ?Sized>(config: &PriorConfig, count: usize, rng: &mut R) -> Result<LatentBatch> {
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    config.validate()?;
    let data = gaussian_rows(&config.positive_mean, &config.positive_variance, count, rng);
    Ok(batch(config, count, data, LatentOrigin::PositivePrior))
}

/// `count` independent draws from the mixture: each sample picks the positive
/// mode with probability `contamination`, the negative mode otherwise.
pub fn sample_unlabeled<R: Rng + ?Sized>(config: &PriorConfig, count: usize, rng: &mut R) -> Result<LatentBatch> {
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    config.validate()?;
    let coin = Bernoulli::new(config.contamination)
        .map_err(|_| Error::InvalidConfig("contamination outside [0, 1]".into()))?;
    let neg_std: Vec<f32> = config.negative_variance.iter().map(|&v| libm::sqrtf(v)).collect();
    let pos_std: Vec<f32> = config.positive_variance.iter().map(|&v| libm::sqrtf(v)).collect();
    let mut data = Vec::with_capacity(count * config.latent_dim);
    for _ in 0..count {
        if coin.sample(rng) {
            push_gaussian(&mut data, &config.positive_mean, &pos_std, rng);
        } else {
            push_gaussian(&mut data, &config.negative_mean, &neg_std, rng);
        }
    }
    Ok(batch(config, count, data, LatentOrigin::UnlabeledPrior))
}

/// Single Gaussian latent prior of the generator-only model.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UnimodalPrior {
    pub mean: Vec<f32>,
    pub variance: Vec<f32>,
}

impl UnimodalPrior {
    pub fn standard(latent_dim: usize) -> Self {
        UnimodalPrior {
            mean: vec![0.0; latent_dim],
            variance: vec![1.0; latent_dim],
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<LatentBatch> {
        if count == 0 {
            return Err(Error::EmptyBatch);
        }
        if self.mean.is_empty()
            || self.mean.len() != self.variance.len()
            || self.variance.iter().any(|&v| v <= 0.0 || !v.is_finite())
        {
            return Err(Error::InvalidConfig("malformed unimodal prior".into()));
        }
        let data = gaussian_rows(&self.mean, &self.variance, count, rng);
        Ok(LatentBatch {
            codes: Tensor::new(vec![count, self.mean.len()], data),
            origin: LatentOrigin::PositivePrior,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn two_d(pi: f64) -> PriorConfig {
        PriorConfig::symmetric(2, 3.0, pi).unwrap()
    }

    fn column_mean(b: &LatentBatch, col: usize) -> f64 {
        (0..b.count()).map(|i| b.code(i)[col] as f64).sum::<f64>() / b.count() as f64
    }

    #[test]
    fn degenerate_covariance_collapses_to_the_mean() {
        let mut cfg = two_d(0.5);
        cfg.negative_variance = vec![1e-12; 2];
        cfg.positive_variance = vec![1e-12; 2];
        let mut rng = seeded_rng(1);
        let neg = sample_negative(&cfg, 3, &mut rng).unwrap();
        let pos = sample_positive(&cfg, 3, &mut rng).unwrap();
        for i in 0..3 {
            for d in 0..2 {
                assert!((neg.code(i)[d] - cfg.negative_mean[d]).abs() < 1e-4);
                assert!((pos.code(i)[d] - cfg.positive_mean[d]).abs() < 1e-4);
            }
        }
        assert_eq!(neg.origin(), LatentOrigin::NegativePrior);
        assert_eq!(pos.origin(), LatentOrigin::PositivePrior);
    }

    #[test]
    fn negative_sample_mean_within_three_standard_errors() {
        let cfg = two_d(0.5);
        let b = sample_negative(&cfg, 100_000, &mut seeded_rng(7)).unwrap();
        let se = 1.0 / (100_000f64).sqrt();
        assert!((column_mean(&b, 0) + 3.0).abs() < 3.0 * se);
        assert!(column_mean(&b, 1).abs() < 3.0 * se);
    }

    #[test]
    fn positive_sample_variance_within_five_percent() {
        let mut cfg = two_d(0.5);
        cfg.positive_variance = vec![2.0, 0.5];
        let b = sample_positive(&cfg, 100_000, &mut seeded_rng(8)).unwrap();
        for d in 0..2 {
            let m = column_mean(&b, d);
            let var = (0..b.count()).map(|i| (b.code(i)[d] as f64 - m).powi(2)).sum::<f64>() / (b.count() - 1) as f64;
            let want = cfg.positive_variance[d] as f64;
            assert!((var - want).abs() < 0.05 * want, "dim {d}: {var} vs {want}");
        }
    }

    #[test]
    fn sampling_is_deterministic_under_a_seed() {
        let cfg = two_d(0.3);
        for f in [sample_negative, sample_positive, sample_unlabeled] {
            let a = f(&cfg, 50, &mut seeded_rng(3)).unwrap();
            let b = f(&cfg, 50, &mut seeded_rng(3)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn full_contamination_matches_positive_sampler() {
        let cfg = two_d(1.0);
        let u = sample_unlabeled(&cfg, 200, &mut seeded_rng(4)).unwrap();
        let p = sample_positive(&cfg, 200, &mut seeded_rng(4)).unwrap();
        assert_eq!(u.codes(), p.codes());
        assert_eq!(u.origin(), LatentOrigin::UnlabeledPrior);
    }

    #[test]
    fn vanishing_contamination_puts_nothing_in_positive_half_space() {
        let cfg = two_d(1e-9);
        let u = sample_unlabeled(&cfg, 1000, &mut seeded_rng(5)).unwrap();
        let beyond = (0..1000).filter(|&i| u.code(i)[0] > 1.5).count();
        assert_eq!(beyond, 0);
    }

    #[test]
    fn mixture_fraction_by_nearest_mode() {
        let cfg = two_d(0.3);
        let u = sample_unlabeled(&cfg, 100_000, &mut seeded_rng(6)).unwrap();
        // modes at x = -3 and x = +3 share their second coordinate, so the
        // nearer mode is decided by the sign of the first coordinate
        let near_pos = (0..u.count()).filter(|&i| u.code(i)[0] > 0.0).count();
        let frac = near_pos as f64 / u.count() as f64;
        assert!((frac - 0.3).abs() < 0.01, "{frac}");
    }

    #[test]
    fn mixture_mean_converges() {
        let cfg = two_d(0.3);
        let u = sample_unlabeled(&cfg, 100_000, &mut seeded_rng(9)).unwrap();
        // per-coordinate variance of the mixture: within-mode 1 plus
        // pi (1 - pi) (mu_p - mu_n)^2 along the first axis
        let var0 = 1.0 + 0.3 * 0.7 * 36.0;
        let se0 = (var0 / 100_000f64).sqrt();
        let se1 = (1.0 / 100_000f64).sqrt();
        assert!((column_mean(&u, 0) - (0.3 * 3.0 - 0.7 * 3.0)).abs() < 3.0 * se0);
        assert!(column_mean(&u, 1).abs() < 3.0 * se1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = two_d(0.3);
        assert_eq!(sample_negative(&cfg, 0, &mut seeded_rng(0)), Err(Error::EmptyBatch));
        let mut bad = cfg.clone();
        bad.contamination = 0.0;
        assert!(sample_unlabeled(&bad, 5, &mut seeded_rng(0)).is_err());
        bad.contamination = 1.5;
        assert!(sample_unlabeled(&bad, 5, &mut seeded_rng(0)).is_err());
        let mut same = cfg.clone();
        same.positive_mean = same.negative_mean.clone();
        assert!(same.validate().is_err());
        let mut neg_var = cfg;
        neg_var.negative_variance[1] = 0.0;
        assert!(neg_var.validate().is_err());
    }
}
