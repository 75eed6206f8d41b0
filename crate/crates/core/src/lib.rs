//! Transductive novelty detection by adversarially generating the unseen class.
//!
//! The crate is `no_std` + `alloc`. It carries everything that is pure
//! computation: a small reverse-mode differentiation engine able to
//! differentiate through its own gradients (needed by the gradient penalty),
//! the encoder/generator/critic networks, the latent priors, the WGAN-GP
//! losses, the two training procedures, the max-margin detectors, the
//! one-class-held-out split construction and the AUROC metric.
//!
//! File formats, dataset readers and the command line live in the `transduct`
//! crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod batch;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod prior;
pub mod split;
pub mod svm;
pub mod tensor;
pub mod training;

pub use batch::{ImageBatch, ImageShape};
pub use detector::{DetectorConfig, DetectorKind, DetectorModel};
pub use error::{Error, Result};
pub use evaluation::auroc;
pub use graph::{Graph, Var};
pub use losses::GpConfig;
pub use model::{ArchConfig, Critic, CriticDomain, Encoder, Generator, NetRole, NetworkSet};
pub use prior::{LatentBatch, LatentOrigin, PriorConfig, UnimodalPrior};
pub use split::{ImageStore, NoveltySplit, TrainingData};
pub use tensor::Tensor;
pub use training::{EpochMetrics, Phase, TrainConfig, TransductModel, VanillaModel};

/// Deterministic random source used throughout the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's random source from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
