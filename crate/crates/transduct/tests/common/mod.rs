#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use transduct::datasets::{encode_cifar_batch, encode_idx_images, encode_idx_labels};

/// Class-dependent pixels: a bright band whose position encodes the label,
/// over a deterministic speckle.
pub fn class_pixels(label: u8, index: usize, len: usize, width: usize) -> Vec<u8> {
    (0..len)
        .map(|p| {
            let row = (p / width) % width;
            let band = row / 3 == usize::from(label);
            let speckle = ((p * 31 + index * 17) % 23) as u8;
            if band {
                220 - speckle
            } else {
                speckle * 2
            }
        })
        .collect()
}

fn labels(per_class: usize) -> Vec<u8> {
    (0..per_class * 10).map(|i| (i % 10) as u8).collect()
}

fn write(path: &Path, bytes: &[u8], gzip: bool) {
    if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(bytes).unwrap();
        fs::write(
            path.with_extension(format!("{}gz", ext_prefix(path))),
            enc.finish().unwrap(),
        )
        .unwrap();
    } else {
        fs::write(path, bytes).unwrap();
    }
}

fn ext_prefix(path: &Path) -> String {
    path.extension()
        .map(|e| format!("{}.", e.to_string_lossy()))
        .unwrap_or_default()
}

/// Writes the four MNIST IDX files under `root/mnist`.
pub fn write_mnist(root: &Path, train_per_class: usize, test_per_class: usize, gzip: bool) {
    let dir = root.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    for (prefix, per_class) in [("train", train_per_class), ("t10k", test_per_class)] {
        let l = labels(per_class);
        let px: Vec<u8> = l
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| class_pixels(c, i, 784, 28))
            .collect();
        write(
            &dir.join(format!("{prefix}-images-idx3-ubyte")),
            &encode_idx_images(28, 28, &px),
            gzip,
        );
        write(
            &dir.join(format!("{prefix}-labels-idx1-ubyte")),
            &encode_idx_labels(&l),
            gzip,
        );
    }
}

/// Writes the six CIFAR-10 binary batches under `root/cifar10`.
pub fn write_cifar(root: &Path, per_class_per_batch: usize) {
    let dir = root.join("cifar10");
    fs::create_dir_all(&dir).unwrap();
    let names: Vec<String> = (1..=5)
        .map(|i| format!("data_batch_{i}.bin"))
        .chain(["test_batch.bin".to_string()])
        .collect();
    for (b, name) in names.iter().enumerate() {
        let l = labels(per_class_per_batch);
        let px: Vec<u8> = l
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| class_pixels(c, i + 1000 * b, 3072, 32))
            .collect();
        fs::write(dir.join(name), encode_cifar_batch(&px, &l)).unwrap();
    }
}
