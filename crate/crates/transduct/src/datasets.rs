//! MNIST (IDX) and CIFAR-10 (binary batch) readers.
//!
//! Pixels are rescaled from `0..=255` to `[-1, 1]`. CIFAR-10 records keep
//! their on-disk planar layout, which is already channel-major
//! (1024 red, then 1024 green, then 1024 blue bytes, rows top to bottom).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use transduct_core::{ArchConfig, ImageBatch, ImageShape, ImageStore};

use crate::error::{Error, IoContext, Result};

pub const IDX_IMAGE_MAGIC: u32 = 2051;
pub const IDX_LABEL_MAGIC: u32 = 2049;

pub const CIFAR_SHAPE: ImageShape = ImageShape::new(3, 32, 32);
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Environment variable naming the directory that holds the datasets.
pub const DATA_ROOT_ENV: &str = "TRANSDUCT_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Mnist,
    Cifar10,
    Synthetic2d,
}

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::Mnist => "mnist",
            Dataset::Cifar10 => "cifar10",
            Dataset::Synthetic2d => "synthetic2d",
        }
    }

    pub fn arch(self) -> ArchConfig {
        match self {
            Dataset::Mnist => ArchConfig::mnist(),
            Dataset::Cifar10 => ArchConfig::cifar10(),
            Dataset::Synthetic2d => ArchConfig::synthetic_2d(),
        }
    }

    /// The synthetic count is twice the usual 200: some seeds leave the
    /// novel cluster on the wrong side of the latent axis for a few hundred
    /// epochs before it crosses over.
    pub fn default_epochs(self) -> usize {
        match self {
            Dataset::Mnist => 25,
            Dataset::Cifar10 => 50,
            Dataset::Synthetic2d => 400,
        }
    }

    pub fn class_name(self, class: u8) -> String {
        const CIFAR: [&str; 10] = [
            "airplane",
            "automobile",
            "bird",
            "cat",
            "deer",
            "dog",
            "frog",
            "horse",
            "ship",
            "truck",
        ];
        match self {
            Dataset::Cifar10 if (class as usize) < CIFAR.len() => CIFAR[class as usize].to_string(),
            _ => class.to_string(),
        }
    }

    /// Loads an image dataset from `root`, looking in the conventional
    /// sub-directory first.
    pub fn load(self, root: &Path) -> Result<ImageStore> {
        match self {
            Dataset::Mnist => load_mnist(&pick_dir(root, &["mnist", "MNIST/raw", "MNIST"])),
            Dataset::Cifar10 => load_cifar10(&pick_dir(root, &["cifar-10-batches-bin", "cifar10"])),
            Dataset::Synthetic2d => Err(Error::Format("the synthetic dataset is generated, not loaded".into())),
        }
    }
}

fn pick_dir(root: &Path, subdirs: &[&str]) -> PathBuf {
    subdirs
        .iter()
        .map(|s| root.join(s))
        .find(|p| p.is_dir())
        .unwrap_or_else(|| root.to_path_buf())
}

/// `--data-root` if given, else the environment variable.
pub fn resolve_data_root(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
}

/// Reads a file, transparently inflating `.gz`.
fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).at(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).at(path)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// First of `dir/name` or `dir/name.gz` that exists, over all spellings.
fn find_file(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    for name in names {
        for candidate in [dir.join(name), dir.join(format!("{name}.gz"))] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::MissingData(dir.join(names[0])))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn need(path: &Path, bytes: &[u8], len: usize) -> Result<()> {
    if bytes.len() < len {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: len as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Parses an IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    need(path, bytes, 4)?;
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Magic {
            path: path.to_path_buf(),
            expected: IDX_IMAGE_MAGIC,
            found: magic,
        });
    }
    need(path, bytes, 16)?;
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let len = count * rows * cols;
    need(path, bytes, 16 + len)?;
    Ok((count, rows, cols, bytes[16..16 + len].to_vec()))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    need(path, bytes, 4)?;
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Magic {
            path: path.to_path_buf(),
            expected: IDX_LABEL_MAGIC,
            found: magic,
        });
    }
    need(path, bytes, 8)?;
    let count = be_u32(bytes, 4) as usize;
    need(path, bytes, 8 + count)?;
    Ok(bytes[8..8 + count].to_vec())
}

/// Serializes images in IDX format.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

/// Serializes labels in IDX format.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// `0 -> -1`, `255 -> +1`.
pub fn normalize(pixels: &[u8]) -> Vec<f32> {
    pixels.iter().map(|&p| p as f32 / 127.5 - 1.0).collect()
}

/// Inverse of [`normalize`], clamping out-of-range values.
pub fn denormalize(value: f32) -> u8 {
    ((value + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

fn check_labels(path: &Path, labels: &[u8]) -> Result<()> {
    match labels.iter().position(|&l| l > 9) {
        Some(i) => Err(Error::Format(format!(
            "{}: label {} at index {i} is outside 0..=9",
            path.display(),
            labels[i]
        ))),
        None => Ok(()),
    }
}

fn idx_pair(dir: &Path, images: &[&str], labels: &[&str]) -> Result<(ImageBatch, Vec<u8>)> {
    let ip = find_file(dir, images)?;
    let lp = find_file(dir, labels)?;
    let (count, rows, cols, pixels) = parse_idx_images(&ip, &read_file(&ip)?)?;
    let labels = parse_idx_labels(&lp, &read_file(&lp)?)?;
    if labels.len() != count {
        return Err(Error::Format(format!(
            "{} holds {count} images but {} holds {} labels",
            ip.display(),
            lp.display(),
            labels.len()
        )));
    }
    check_labels(&lp, &labels)?;
    let batch = ImageBatch::new(ImageShape::new(1, rows, cols), normalize(&pixels))?;
    Ok((batch, labels))
}

/// Reads the four MNIST IDX files (optionally gzipped) from `dir`.
pub fn load_mnist(dir: &Path) -> Result<ImageStore> {
    let (train, train_labels) = idx_pair(
        dir,
        &["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
        &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"],
    )?;
    let (test, test_labels) = idx_pair(
        dir,
        &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"],
        &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"],
    )?;
    Ok(ImageStore::new(train, train_labels, test, test_labels)?)
}

/// Parses one CIFAR-10 binary batch into `(pixels, labels)`.
pub fn parse_cifar_batch(path: &Path, bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        let whole = bytes.len().div_ceil(CIFAR_RECORD).max(1) * CIFAR_RECORD;
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: whole as u64,
            found: bytes.len() as u64,
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(record[0]);
        pixels.extend_from_slice(&record[1..]);
    }
    check_labels(path, &labels)?;
    Ok((pixels, labels))
}

/// Serializes records in CIFAR-10 binary layout.
pub fn encode_cifar_batch(pixels: &[u8], labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * CIFAR_RECORD);
    for (l, px) in labels.iter().zip(pixels.chunks_exact(CIFAR_RECORD - 1)) {
        out.push(*l);
        out.extend_from_slice(px);
    }
    out
}

fn cifar_files(dir: &Path, names: &[String]) -> Result<(ImageBatch, Vec<u8>)> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in names {
        let path = find_file(dir, &[name.as_str()])?;
        let (p, l) = parse_cifar_batch(&path, &read_file(&path)?)?;
        pixels.extend(p);
        labels.extend(l);
    }
    Ok((ImageBatch::new(CIFAR_SHAPE, normalize(&pixels))?, labels))
}

/// Reads `data_batch_1.bin` .. `data_batch_5.bin` and `test_batch.bin`.
pub fn load_cifar10(dir: &Path) -> Result<ImageStore> {
    let train_names: Vec<String> = (1..=5).map(|i| format!("data_batch_{i}.bin")).collect();
    let (train, train_labels) = cifar_files(dir, &train_names)?;
    let (test, test_labels) = cifar_files(dir, &["test_batch.bin".to_string()])?;
    Ok(ImageStore::new(train, train_labels, test, test_labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize(&[0, 255]), vec![-1.0, 1.0]);
        assert_eq!(denormalize(-1.0), 0);
        assert_eq!(denormalize(1.0), 255);
        assert_eq!(denormalize(7.0), 255);
        for p in 0..=255u8 {
            assert_eq!(denormalize(normalize(&[p])[0]), p);
        }
    }

    #[test]
    fn idx_round_trip_and_magic() {
        let path = Path::new("mem");
        let px: Vec<u8> = (0..2 * 3 * 4).map(|i| i as u8).collect();
        let bytes = encode_idx_images(3, 4, &px);
        assert_eq!(parse_idx_images(path, &bytes).unwrap(), (2, 3, 4, px));
        let labels = encode_idx_labels(&[3, 1]);
        assert_eq!(parse_idx_labels(path, &labels).unwrap(), vec![3, 1]);
        assert!(matches!(
            parse_idx_images(path, &labels),
            Err(Error::Magic {
                expected: 2051,
                found: 2049,
                ..
            })
        ));
        assert!(matches!(parse_idx_labels(path, &bytes), Err(Error::Magic { .. })));
        assert!(matches!(
            parse_idx_images(path, &bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn cifar_record_layout() {
        let path = Path::new("mem");
        let mut px = vec![0u8; 3072];
        px[0] = 10; // red, top-left
        px[1024] = 20; // green, top-left
        px[2048 + 1023] = 30; // blue, bottom-right
        let bytes = encode_cifar_batch(&px, &[8]);
        assert_eq!(bytes.len(), 3073);
        assert_eq!(bytes[0], 8);
        let (p, l) = parse_cifar_batch(path, &bytes).unwrap();
        assert_eq!((p, l), (px, vec![8]));
        assert!(parse_cifar_batch(path, &bytes[..3000]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 10;
        assert!(matches!(parse_cifar_batch(path, &bad), Err(Error::Format(_))));
    }
}
