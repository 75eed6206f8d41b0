//! One-class-held-out transductive splits.
//!
//! A split holds the uncontaminated negative set, the unlabeled set and the
//! unlabeled set's ground truth. Training and detection only ever see a
//! [`TrainingData`] view, which carries no labels; the labels are reachable
//! only through [`NoveltySplit::evaluation_labels`].

use alloc::format;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};

use crate::batch::{ImageBatch, ImageShape};
use crate::error::{shape_err, Error, Result};
use crate::seeded_rng;

/// A labeled dataset with its standard train/test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageStore {
    train: ImageBatch,
    train_labels: Vec<u8>,
    test: ImageBatch,
    test_labels: Vec<u8>,
}

impl ImageStore {
    pub fn new(train: ImageBatch, train_labels: Vec<u8>, test: ImageBatch, test_labels: Vec<u8>) -> Result<Self> {
        if train.count() != train_labels.len() {
            return Err(shape_err(train.count(), train_labels.len()));
        }
        if test.count() != test_labels.len() {
            return Err(shape_err(test.count(), test_labels.len()));
        }
        if train.shape() != test.shape() {
            return Err(shape_err(train.shape(), test.shape()));
        }
        Ok(ImageStore {
            train,
            train_labels,
            test,
            test_labels,
        })
    }

    pub fn shape(&self) -> ImageShape {
        self.train.shape()
    }

    pub fn train(&self) -> &ImageBatch {
        &self.train
    }

    pub fn train_labels(&self) -> &[u8] {
        &self.train_labels
    }

    pub fn test(&self) -> &ImageBatch {
        &self.test
    }

    pub fn test_labels(&self) -> &[u8] {
        &self.test_labels
    }

    /// Number of samples of each class in the test partition.
    pub fn test_histogram(&self) -> Vec<usize> {
        histogram(&self.test_labels)
    }
}

fn histogram(labels: &[u8]) -> Vec<usize> {
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut h = alloc::vec![0; classes];
    for &l in labels {
        h[l as usize] += 1;
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSource {
    Train,
    Test,
    Generated,
}

impl SampleSource {
    pub fn name(self) -> &'static str {
        match self {
            SampleSource::Train => "train",
            SampleSource::Test => "test",
            SampleSource::Generated => "generated",
        }
    }
}

/// Where a split sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub source: SampleSource,
    pub index: usize,
}

/// The label-free view handed to training and detection.
#[derive(Clone, Copy, Debug)]
pub struct TrainingData<'a> {
    pub x_n: &'a ImageBatch,
    pub x_u: &'a ImageBatch,
}

/// Ground truth of the unlabeled set, `true` = novel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HiddenLabels(Vec<bool>);

impl HiddenLabels {
    pub fn is_novel(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn novel_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoveltySplit {
    x_n: ImageBatch,
    x_u: ImageBatch,
    labels: HiddenLabels,
    novel_class: u8,
    pi_requested: f64,
    pi_actual: f64,
    x_n_refs: Vec<SampleRef>,
    x_u_refs: Vec<SampleRef>,
}

impl NoveltySplit {
    pub fn training_data(&self) -> TrainingData<'_> {
        TrainingData {
            x_n: &self.x_n,
            x_u: &self.x_u,
        }
    }

    /// Ground truth aligned with the unlabeled set; for evaluation only.
    pub fn evaluation_labels(&self) -> &HiddenLabels {
        &self.labels
    }

    pub fn novel_class(&self) -> u8 {
        self.novel_class
    }

    pub fn pi_requested(&self) -> f64 {
        self.pi_requested
    }

    /// Realized fraction of novel samples in the unlabeled set.
    pub fn pi_actual(&self) -> f64 {
        self.pi_actual
    }

    pub fn negative_refs(&self) -> &[SampleRef] {
        &self.x_n_refs
    }

    pub fn unlabeled_refs(&self) -> &[SampleRef] {
        &self.x_u_refs
    }
}

fn check_open_unit(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "contamination rate must lie in (0, 1), got {pi}"
        )))
    }
}

/// Holds `novel_class` out of the training partition and builds an unlabeled
/// set from the test partition at contamination `pi`.
///
/// All test inliers are kept and the novel class is subsampled to reach
/// `round(pi / (1 - pi) * inliers)`. When the novel class is too small for
/// that, every novel test image is kept and the inliers are subsampled
/// instead. `pi_actual` reports what was realized.
pub fn make_novelty_split(store: &ImageStore, novel_class: u8, pi: f64, seed: u64) -> Result<NoveltySplit> {
    check_open_unit(pi)?;
    let mut rng = seeded_rng(seed);
    let inliers: Vec<usize> = (0..store.test_labels.len())
        .filter(|&i| store.test_labels[i] != novel_class)
        .collect();
    let novel: Vec<usize> = (0..store.test_labels.len())
        .filter(|&i| store.test_labels[i] == novel_class)
        .collect();
    if novel.is_empty() {
        return Err(Error::UnattainableContamination {
            requested: pi,
            reason: format!("class {novel_class} has no test samples"),
        });
    }
    let wanted = libm::round(pi / (1.0 - pi) * inliers.len() as f64) as usize;
    let (kept_inliers, kept_novel): (Vec<usize>, Vec<usize>) = if wanted <= novel.len() {
        if wanted == 0 {
            return Err(Error::UnattainableContamination {
                requested: pi,
                reason: format!("{} inliers admit no novel sample", inliers.len()),
            });
        }
        let pick = index::sample(&mut rng, novel.len(), wanted);
        let mut chosen: Vec<usize> = pick.into_iter().map(|i| novel[i]).collect();
        chosen.sort_unstable();
        (inliers, chosen)
    } else {
        let keep = libm::round(novel.len() as f64 * (1.0 - pi) / pi) as usize;
        if keep == 0 || keep > inliers.len() {
            return Err(Error::UnattainableContamination {
                requested: pi,
                reason: format!("{} novel and {} inlier test samples", novel.len(), inliers.len()),
            });
        }
        let pick = index::sample(&mut rng, inliers.len(), keep);
        let mut chosen: Vec<usize> = pick.into_iter().map(|i| inliers[i]).collect();
        chosen.sort_unstable();
        (chosen, novel)
    };

    let mut order: Vec<(usize, bool)> = kept_inliers
        .iter()
        .map(|&i| (i, false))
        .chain(kept_novel.iter().map(|&i| (i, true)))
        .collect();
    order.shuffle(&mut rng);

    let x_u_idx: Vec<usize> = order.iter().map(|&(i, _)| i).collect();
    let x_n_idx: Vec<usize> = (0..store.train_labels.len())
        .filter(|&i| store.train_labels[i] != novel_class)
        .collect();
    if x_n_idx.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let labels = HiddenLabels(order.iter().map(|&(_, nov)| nov).collect());
    let pi_actual = kept_novel.len() as f64 / order.len() as f64;
    Ok(NoveltySplit {
        x_n: store.train.select(&x_n_idx),
        x_u: store.test.select(&x_u_idx),
        labels,
        novel_class,
        pi_requested: pi,
        pi_actual,
        x_n_refs: refs(SampleSource::Train, &x_n_idx),
        x_u_refs: refs(SampleSource::Test, &x_u_idx),
    })
}

fn refs(source: SampleSource, idx: &[usize]) -> Vec<SampleRef> {
    idx.iter().map(|&index| SampleRef { source, index }).collect()
}

/// Per-sample geometry of the synthetic benchmark: 2-D points.
pub const SYNTHETIC_SHAPE: ImageShape = ImageShape::new(1, 1, 2);
/// Mean of the synthetic novelty class; inliers are centred at the origin.
pub const SYNTHETIC_NOVEL_MEAN: [f32; 2] = [4.0, 4.0];

/// Negatives `~ N(0, I)`; the unlabeled set holds exactly `round(pi * n_unlabeled)`
/// novelties `~ N((4, 4), I)` among inliers `~ N(0, I)`.
pub fn make_synthetic_2d(n_negative: usize, n_unlabeled: usize, pi: f64, seed: u64) -> Result<NoveltySplit> {
    if n_negative == 0 || n_unlabeled == 0 {
        return Err(Error::EmptyBatch);
    }
    check_open_unit(pi)?;
    let novel = libm::round(pi * n_unlabeled as f64) as usize;
    if novel == 0 || novel == n_unlabeled {
        return Err(Error::UnattainableContamination {
            requested: pi,
            reason: format!("{n_unlabeled} unlabeled samples"),
        });
    }
    let mut rng = seeded_rng(seed);
    let mut point = |mean: [f32; 2]| -> [f32; 2] {
        let a: f32 = StandardNormal.sample(&mut rng);
        let b: f32 = StandardNormal.sample(&mut rng);
        [mean[0] + a, mean[1] + b]
    };
    let x_n_data: Vec<f32> = (0..n_negative).flat_map(|_| point([0.0, 0.0])).collect();
    let mut rows: Vec<([f32; 2], bool)> = Vec::with_capacity(n_unlabeled);
    for i in 0..n_unlabeled {
        let nov = i >= n_unlabeled - novel;
        rows.push((point(if nov { SYNTHETIC_NOVEL_MEAN } else { [0.0, 0.0] }), nov));
    }
    rows.shuffle(&mut rng);
    let x_u_data: Vec<f32> = rows.iter().flat_map(|(p, _)| *p).collect();
    let labels = HiddenLabels(rows.iter().map(|&(_, nov)| nov).collect());
    Ok(NoveltySplit {
        x_n: ImageBatch::new(SYNTHETIC_SHAPE, x_n_data)?,
        x_u: ImageBatch::new(SYNTHETIC_SHAPE, x_u_data)?,
        labels,
        novel_class: 1,
        pi_requested: pi,
        pi_actual: novel as f64 / n_unlabeled as f64,
        x_n_refs: refs(SampleSource::Generated, &(0..n_negative).collect::<Vec<_>>()),
        x_u_refs: refs(SampleSource::Generated, &(0..n_unlabeled).collect::<Vec<_>>()),
    })
}
