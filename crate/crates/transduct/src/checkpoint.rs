//! Binary checkpoints of trained networks and detectors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "TDCKPT\r\n"
//! version     u32
//! header_len  u64
//! header      JSON (architecture, configs, tensor table, detector metadata)
//! blob_len    u64
//! blob        f32 values referenced by the tensor table
//! digest      SHA-256 of every preceding byte
//! ```
//!
//! The digest is verified before anything is parsed, so a damaged file is
//! rejected as a whole.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use transduct_core::detector::DetectorState;
use transduct_core::model::Networks;
use transduct_core::nn::Sequential;
use transduct_core::svm::{LinearSvm, RbfSvm};
use transduct_core::training::VanillaNetworks;
use transduct_core::{
    seeded_rng, ArchConfig, Critic, DetectorKind, DetectorModel, Generator, NetRole, NetworkSet, PriorConfig, Tensor,
    TrainConfig, UnimodalPrior,
};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"TDCKPT\r\n";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Trained networks of either procedure with the prior they were trained on.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedNetworks {
    Transduct {
        nets: NetworkSet,
        prior: PriorConfig,
    },
    Vanilla {
        nets: VanillaNetworks,
        prior: UnimodalPrior,
    },
}

impl TrainedNetworks {
    pub fn networks(&self) -> &dyn Networks {
        match self {
            TrainedNetworks::Transduct { nets, .. } => nets,
            TrainedNetworks::Vanilla { nets, .. } => nets,
        }
    }

    pub fn generator(&self) -> &Generator {
        match self {
            TrainedNetworks::Transduct { nets, .. } => &nets.generator,
            TrainedNetworks::Vanilla { nets, .. } => &nets.generator,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Epochs completed when the checkpoint was taken.
    pub epoch: usize,
    pub networks: TrainedNetworks,
    pub detector: Option<DetectorModel>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
enum PriorHeader {
    Transduct { prior: PriorConfig },
    Vanilla { prior: UnimodalPrior },
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    role: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "svm", rename_all = "snake_case")]
enum SvmHeader {
    Linear(LinearSvm),
    Rbf {
        dim: usize,
        gamma: f64,
        coef: Vec<f64>,
        rho: f64,
        support_offset: usize,
    },
}

#[derive(Serialize, Deserialize)]
struct DetectorHeader {
    kind: DetectorKind,
    feature_dim: usize,
    class_counts: (usize, usize),
    svm: SvmHeader,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    train: TrainConfig,
    epoch: usize,
    #[serde(flatten)]
    prior: PriorHeader,
    tensors: Vec<TensorEntry>,
    detector: Option<DetectorHeader>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob: Vec<f32> = Vec::new();
        let mut tensors = Vec::new();
        let nets = self.networks.networks();
        for role in NetRole::ALL {
            let Some(net) = nets.network(role) else { continue };
            for (name, t) in net.param_names().iter().zip(net.params()) {
                tensors.push(TensorEntry {
                    role: role.name().to_string(),
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset: blob.len(),
                });
                blob.extend_from_slice(t.data());
            }
        }
        let detector = self.detector.as_ref().map(|d| DetectorHeader {
            kind: d.kind,
            feature_dim: d.feature_dim,
            class_counts: d.class_counts,
            svm: match &d.state {
                DetectorState::Linear(svm) => SvmHeader::Linear(svm.clone()),
                DetectorState::Rbf(svm) => {
                    let support_offset = blob.len();
                    blob.extend_from_slice(&svm.support);
                    SvmHeader::Rbf {
                        dim: svm.dim,
                        gamma: svm.gamma,
                        coef: svm.coef.clone(),
                        rho: svm.rho,
                        support_offset,
                    }
                }
            },
        });
        let prior = match &self.networks {
            TrainedNetworks::Transduct { prior, .. } => PriorHeader::Transduct { prior: prior.clone() },
            TrainedNetworks::Vanilla { prior, .. } => PriorHeader::Vanilla { prior: prior.clone() },
        };
        let header = serde_json::to_vec(&Header {
            arch: self.arch.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            prior,
            tensors,
            detector,
        })?;

        let mut out = Vec::with_capacity(28 + header.len() + blob.len() * 4 + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(blob.len() as u64 * 4).to_le_bytes());
        for v in &blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 8 + 8 + DIGEST_LEN {
            return Err(Error::Integrity(format!("{} bytes is too short", bytes.len())));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Integrity("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("digest mismatch".into()));
        }
        let mut cursor = Cursor {
            bytes: body,
            pos: MAGIC.len(),
        };
        let version = u32::from_le_bytes(cursor.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                supported: VERSION,
            });
        }
        let header_len = cursor.u64()? as usize;
        let header: Header = serde_json::from_slice(cursor.take(header_len)?)?;
        let blob_len = cursor.u64()? as usize;
        let blob: Vec<f32> = cursor
            .take(blob_len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if cursor.pos != body.len() {
            return Err(Error::Integrity("trailing bytes after the tensor blob".into()));
        }

        let mut rng = seeded_rng(0);
        let mut networks = match header.prior {
            PriorHeader::Transduct { prior } => TrainedNetworks::Transduct {
                nets: NetworkSet::new(&header.arch, header.train.negative_branch, &mut rng)?,
                prior,
            },
            PriorHeader::Vanilla { prior } => TrainedNetworks::Vanilla {
                nets: VanillaNetworks {
                    generator: Generator::new(&header.arch, &mut rng)?,
                    d_xu: Critic::image(&header.arch, &mut rng)?,
                },
                prior,
            },
        };
        let target: &mut dyn Networks = match &mut networks {
            TrainedNetworks::Transduct { nets, .. } => nets,
            TrainedNetworks::Vanilla { nets, .. } => nets,
        };
        for role in NetRole::ALL {
            let Some(net) = target.network_mut(role) else { continue };
            let entries: Vec<&TensorEntry> = header.tensors.iter().filter(|e| e.role == role.name()).collect();
            load_net(net, role, &entries, &blob)?;
        }
        if let Some(e) = header.tensors.iter().find(|e| NetRole::from_name(&e.role).is_none()) {
            return Err(Error::Format(format!("unknown network role {:?}", e.role)));
        }

        let detector = match header.detector {
            None => None,
            Some(d) => Some(DetectorModel {
                kind: d.kind,
                feature_dim: d.feature_dim,
                class_counts: d.class_counts,
                state: match d.svm {
                    SvmHeader::Linear(svm) => DetectorState::Linear(svm),
                    SvmHeader::Rbf {
                        dim,
                        gamma,
                        coef,
                        rho,
                        support_offset,
                    } => {
                        let len = coef.len() * dim;
                        let support = blob
                            .get(support_offset..support_offset + len)
                            .ok_or_else(|| Error::Format("support vectors outside the blob".into()))?
                            .to_vec();
                        DetectorState::Rbf(RbfSvm {
                            dim,
                            gamma,
                            support,
                            coef,
                            rho,
                        })
                    }
                },
            }),
        };
        Ok(Checkpoint {
            arch: header.arch,
            train: header.train,
            epoch: header.epoch,
            networks,
            detector,
        })
    }

    /// Writes atomically: a sibling temporary file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.partial");
        fs::write(&tmp, bytes).at(&tmp)?;
        fs::rename(&tmp, path).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).at(path)?)
    }

    /// Loads and checks that the stored networks fit `arch`.
    pub fn load_expecting(path: &Path, arch: &ArchConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.arch.image != arch.image || ckpt.arch.latent_dim != arch.latent_dim {
            return Err(transduct_core::Error::ShapeMismatch {
                expected: format!("{:?} with latent {}", arch.image, arch.latent_dim),
                actual: format!("{:?} with latent {}", ckpt.arch.image, ckpt.arch.latent_dim),
            }
            .into());
        }
        Ok(ckpt)
    }
}

fn load_net(net: &mut Sequential, role: NetRole, entries: &[&TensorEntry], blob: &[f32]) -> Result<()> {
    if entries.len() != net.params().len() {
        return Err(transduct_core::Error::ShapeMismatch {
            expected: format!("{} tensors for {}", net.params().len(), role.name()),
            actual: format!("{}", entries.len()),
        }
        .into());
    }
    let mut params = Vec::with_capacity(entries.len());
    for (e, name) in entries.iter().zip(net.param_names()) {
        if &e.name != name {
            return Err(Error::Format(format!(
                "{}: expected tensor {name}, found {}",
                role.name(),
                e.name
            )));
        }
        let len: usize = e.shape.iter().product();
        let data = blob
            .get(e.offset..e.offset + len)
            .ok_or_else(|| Error::Format(format!("{}.{} lies outside the blob", role.name(), e.name)))?;
        params.push(Tensor::new(e.shape.clone(), data.to_vec()));
    }
    net.load_params(params)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Integrity("section runs past the end of the file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
