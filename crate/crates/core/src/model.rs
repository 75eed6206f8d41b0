//! The six networks: encoder `E`, generator `G`, latent critics for the
//! unlabeled and negative sets, and image critics for the same two sets.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::batch::{ImageBatch, ImageShape};
use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Activation, Layer, Sequential};
use crate::prior::{LatentBatch, LatentOrigin};
use crate::tensor::Tensor;

/// Samples per forward pass when running networks outside training.
pub const INFERENCE_CHUNK: usize = 256;

const CRITIC_SLOPE: f32 = 0.2;

/// Topology of the image-side networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ImageArch {
    /// Three fully connected layers.
    Mlp { hidden: usize },
    /// Stride-2 4x4 convolutions, `levels` halvings starting at `base_width`
    /// channels and doubling per level; the generator mirrors it with
    /// transposed convolutions.
    Conv { base_width: usize, levels: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OutputActivation {
    /// Bounded to `[-1, 1]`, matching image normalization.
    Tanh,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArchConfig {
    pub image: ImageShape,
    pub latent_dim: usize,
    pub image_arch: ImageArch,
    /// Hidden width of the three-layer latent critics.
    pub latent_critic_hidden: usize,
    pub generator_output: OutputActivation,
}

impl ArchConfig {
    /// Fully connected maps of width 64 on 2-D points with a 2-D latent space.
    pub fn synthetic_2d() -> Self {
        ArchConfig {
            image: ImageShape::new(1, 1, 2),
            latent_dim: 2,
            image_arch: ImageArch::Mlp { hidden: 64 },
            latent_critic_hidden: 64,
            generator_output: OutputActivation::Identity,
        }
    }

    pub fn mnist() -> Self {
        ArchConfig {
            image: ImageShape::new(1, 28, 28),
            latent_dim: 128,
            image_arch: ImageArch::Conv {
                base_width: 64,
                levels: 2,
            },
            latent_critic_hidden: 256,
            generator_output: OutputActivation::Tanh,
        }
    }

    pub fn cifar10() -> Self {
        ArchConfig {
            image: ImageShape::new(3, 32, 32),
            latent_dim: 128,
            image_arch: ImageArch::Conv {
                base_width: 64,
                levels: 3,
            },
            latent_critic_hidden: 256,
            generator_output: OutputActivation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.image.is_empty() || self.latent_critic_hidden == 0 {
            return Err(Error::InvalidConfig("architecture sizes must be positive".into()));
        }
        match self.image_arch {
            ImageArch::Mlp { hidden } if hidden == 0 => {
                Err(Error::InvalidConfig("hidden width must be positive".into()))
            }
            ImageArch::Conv { base_width, levels } => {
                let f = 1usize << levels;
                if base_width == 0 || levels == 0 {
                    return Err(Error::InvalidConfig("conv widths must be positive".into()));
                }
                if self.image.height % f != 0 || self.image.width % f != 0 {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "image {}x{} not divisible by 2^{levels}",
                        self.image.height,
                        self.image.width
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn mlp(input: usize, hidden: usize, output: usize) -> Vec<Layer> {
        vec![
            Layer::Reshape(vec![input]),
            Layer::Linear { input, output: hidden },
            Layer::Act(Activation::Relu),
            Layer::Linear {
                input: hidden,
                output: hidden,
            },
            Layer::Act(Activation::Relu),
            Layer::Linear { input: hidden, output },
        ]
    }

    /// Image to `output` features: the encoder (`latent_dim`) and image critics (1).
    fn image_to_features(&self, output: usize) -> Vec<Layer> {
        match self.image_arch {
            ImageArch::Mlp { hidden } => Self::mlp(self.image.len(), hidden, output),
            ImageArch::Conv { base_width, levels } => {
                let mut layers = Vec::new();
                let mut channels = self.image.channels;
                let (mut h, mut w) = (self.image.height, self.image.width);
                for level in 0..levels {
                    let out = base_width << level;
                    layers.push(Layer::Conv2d {
                        in_channels: channels,
                        out_channels: out,
                        kernel: 4,
                        stride: 2,
                        padding: 1,
                    });
                    layers.push(Layer::Act(Activation::LeakyRelu(CRITIC_SLOPE)));
                    channels = out;
                    h /= 2;
                    w /= 2;
                }
                let flat = channels * h * w;
                layers.push(Layer::Reshape(vec![flat]));
                layers.push(Layer::Linear { input: flat, output });
                layers
            }
        }
    }

    fn generator_layers(&self) -> Vec<Layer> {
        let mut layers = match self.image_arch {
            ImageArch::Mlp { hidden } => {
                let mut l = Self::mlp(self.latent_dim, hidden, self.image.len());
                l.push(Layer::Reshape(self.image.dims().to_vec()));
                l
            }
            ImageArch::Conv { base_width, levels } => {
                let (h, w) = (self.image.height >> levels, self.image.width >> levels);
                let top = base_width << (levels - 1);
                let mut l = vec![
                    Layer::Linear {
                        input: self.latent_dim,
                        output: top * h * w,
                    },
                    Layer::Act(Activation::Relu),
                    Layer::Reshape(vec![top, h, w]),
                ];
                let mut channels = top;
                for level in 0..levels {
                    let last = level + 1 == levels;
                    let out = if last { self.image.channels } else { channels / 2 };
                    l.push(Layer::ConvTranspose2d {
                        in_channels: channels,
                        out_channels: out,
                        kernel: 4,
                        stride: 2,
                        padding: 1,
                    });
                    if !last {
                        l.push(Layer::Act(Activation::Relu));
                    }
                    channels = out;
                }
                l
            }
        };
        if self.generator_output == OutputActivation::Tanh {
            layers.push(Layer::Act(Activation::Tanh));
        }
        layers
    }
}

/// Role of a network inside a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NetRole {
    Encoder,
    Generator,
    LatentCriticUnlabeled,
    LatentCriticNegative,
    ImageCriticUnlabeled,
    ImageCriticNegative,
}

impl NetRole {
    pub const ALL: [NetRole; 6] = [
        NetRole::Encoder,
        NetRole::Generator,
        NetRole::LatentCriticUnlabeled,
        NetRole::LatentCriticNegative,
        NetRole::ImageCriticUnlabeled,
        NetRole::ImageCriticNegative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetRole::Encoder => "encoder",
            NetRole::Generator => "generator",
            NetRole::LatentCriticUnlabeled => "d_zu",
            NetRole::LatentCriticNegative => "d_zn",
            NetRole::ImageCriticUnlabeled => "d_xu",
            NetRole::ImageCriticNegative => "d_xn",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }
}

/// Maps images to latent codes.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    net: Sequential,
    input_shape: ImageShape,
    latent_dim: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let net = Sequential::new(&arch.image.dims(), arch.image_to_features(arch.latent_dim), rng)?;
        Ok(Encoder {
            net,
            input_shape: arch.image,
            latent_dim: arch.latent_dim,
        })
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    pub fn input_shape(&self) -> ImageShape {
        self.input_shape
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }
}

/// Maps latent codes to images.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    net: Sequential,
    latent_dim: usize,
    output_shape: ImageShape,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let net = Sequential::new(&[arch.latent_dim], arch.generator_layers(), rng)?;
        Ok(Generator {
            net,
            latent_dim: arch.latent_dim,
            output_shape: arch.image,
        })
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn output_shape(&self) -> ImageShape {
        self.output_shape
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CriticDomain {
    Latent,
    Image,
}

impl CriticDomain {
    pub fn name(self) -> &'static str {
        match self {
            CriticDomain::Latent => "latent",
            CriticDomain::Image => "image",
        }
    }
}

/// Wasserstein critic: unbounded real score per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    net: Sequential,
    domain: CriticDomain,
}

impl Critic {
    pub fn latent<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layers = ArchConfig::mlp(arch.latent_dim, arch.latent_critic_hidden, 1);
        Ok(Critic {
            net: Sequential::new(&[arch.latent_dim], layers, rng)?,
            domain: CriticDomain::Latent,
        })
    }

    pub fn image<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        Ok(Critic {
            net: Sequential::new(&arch.image.dims(), arch.image_to_features(1), rng)?,
            domain: CriticDomain::Image,
        })
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    pub fn domain(&self) -> CriticDomain {
        self.domain
    }
}

/// Something that scores a batch inside a [`Graph`], differentiably in its input.
pub trait CriticMap {
    /// Adds the map's parameters to `g`.
    fn bind(&self, g: &mut Graph) -> Vec<Var>;

    /// `[count, ...]` to `[count]` scores.
    fn score(&self, g: &mut Graph, params: &[Var], x: Var) -> Var;

    /// Expected per-sample input shape.
    fn input_shape(&self) -> &[usize];
}

impl CriticMap for Critic {
    fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.net.bind(g)
    }

    fn score(&self, g: &mut Graph, params: &[Var], x: Var) -> Var {
        let out = self.net.forward(g, params, x);
        let n = g.shape(out)[0];
        g.reshape(out, &[n])
    }

    fn input_shape(&self) -> &[usize] {
        self.net.input_shape()
    }
}

/// The full set of networks trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSet {
    pub encoder: Encoder,
    pub generator: Generator,
    pub d_zu: Critic,
    pub d_zn: Critic,
    pub d_xu: Critic,
    /// Present only when negative-sample generation is trained.
    pub d_xn: Option<Critic>,
}

impl NetworkSet {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, negative_branch: bool, rng: &mut R) -> Result<Self> {
        let encoder = Encoder::new(arch, rng)?;
        let generator = Generator::new(arch, rng)?;
        let d_zu = Critic::latent(arch, rng)?;
        let d_zn = Critic::latent(arch, rng)?;
        let d_xu = Critic::image(arch, rng)?;
        let d_xn = if negative_branch {
            Some(Critic::image(arch, rng)?)
        } else {
            None
        };
        Ok(NetworkSet {
            encoder,
            generator,
            d_zu,
            d_zn,
            d_xu,
            d_xn,
        })
    }
}

/// Read access to a model's networks by role.
pub trait Networks {
    fn network(&self, role: NetRole) -> Option<&Sequential>;

    fn network_mut(&mut self, role: NetRole) -> Option<&mut Sequential>;

    /// Parameter fingerprints of every present network.
    fn fingerprints(&self) -> Vec<(NetRole, u64)> {
        NetRole::ALL
            .into_iter()
            .filter_map(|r| self.network(r).map(|n| (r, n.fingerprint())))
            .collect()
    }
}

impl Networks for NetworkSet {
    fn network(&self, role: NetRole) -> Option<&Sequential> {
        match role {
            NetRole::Encoder => Some(&self.encoder.net),
            NetRole::Generator => Some(&self.generator.net),
            NetRole::LatentCriticUnlabeled => Some(&self.d_zu.net),
            NetRole::LatentCriticNegative => Some(&self.d_zn.net),
            NetRole::ImageCriticUnlabeled => Some(&self.d_xu.net),
            NetRole::ImageCriticNegative => self.d_xn.as_ref().map(|c| &c.net),
        }
    }

    fn network_mut(&mut self, role: NetRole) -> Option<&mut Sequential> {
        match role {
            NetRole::Encoder => Some(&mut self.encoder.net),
            NetRole::Generator => Some(&mut self.generator.net),
            NetRole::LatentCriticUnlabeled => Some(&mut self.d_zu.net),
            NetRole::LatentCriticNegative => Some(&mut self.d_zn.net),
            NetRole::ImageCriticUnlabeled => Some(&mut self.d_xu.net),
            NetRole::ImageCriticNegative => self.d_xn.as_mut().map(|c| &mut c.net),
        }
    }
}

/// Encodes a batch of images.
pub fn encode(e: &Encoder, x: &ImageBatch) -> Result<LatentBatch> {
    if x.shape() != e.input_shape {
        return Err(shape_err(e.input_shape, x.shape()));
    }
    if x.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let codes = e.net.infer(&x.to_tensor(), INFERENCE_CHUNK)?;
    LatentBatch::new(codes, LatentOrigin::Encoded)
}

/// Decodes latent codes into images.
pub fn generate(g: &Generator, z: &LatentBatch) -> Result<ImageBatch> {
    if z.latent_dim() != g.latent_dim {
        return Err(shape_err(g.latent_dim, z.latent_dim()));
    }
    let out = g.net.infer(z.codes(), INFERENCE_CHUNK)?;
    ImageBatch::from_tensor(&out)
}

/// Input to [`criticize`].
#[derive(Clone, Copy, Debug)]
pub enum CriticInput<'a> {
    Latent(&'a LatentBatch),
    Image(&'a ImageBatch),
}

/// Scores a batch with a critic.
pub fn criticize(d: &Critic, batch: CriticInput<'_>) -> Result<Vec<f32>> {
    let tensor = match (d.domain, batch) {
        (CriticDomain::Latent, CriticInput::Latent(z)) => z.codes().clone(),
        (CriticDomain::Image, CriticInput::Image(x)) => x.to_tensor(),
        (expected, CriticInput::Latent(_)) => {
            return Err(Error::DomainMismatch {
                expected: expected.name(),
                actual: "latent",
            })
        }
        (expected, CriticInput::Image(_)) => {
            return Err(Error::DomainMismatch {
                expected: expected.name(),
                actual: "image",
            })
        }
    };
    let out = d.net.infer(&tensor, INFERENCE_CHUNK)?;
    Ok(out.into_data())
}

/// Runs a network's forward pass on a raw tensor; used by training for
/// detached forward passes.
pub(crate) fn detached(net: &Sequential, x: &Tensor) -> Result<Tensor> {
    net.infer(x, INFERENCE_CHUNK)
}
