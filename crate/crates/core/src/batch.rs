use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Per-sample image geometry, channel-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageShape {
            channels,
            height,
            width,
        }
    }

    /// Flattened dimensionality of one sample.
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

/// A batch of images, `[count, channels, height, width]`, values nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    shape: ImageShape,
    data: Vec<f32>,
}

impl ImageBatch {
    pub fn new(shape: ImageShape, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || data.len() % shape.len() != 0 {
            return Err(shape_err(shape, data.len()));
        }
        Ok(ImageBatch { shape, data })
    }

    pub fn empty(shape: ImageShape) -> Self {
        ImageBatch {
            shape,
            data: Vec::new(),
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [_, c, h, w] => Self::new(ImageShape::new(*c, *h, *w), t.data().to_vec()),
            other => Err(shape_err("[count, channels, height, width]", other)),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let [c, h, w] = self.shape.dims();
        Tensor::new(alloc::vec![self.count(), c, h, w], self.data.clone())
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let w = self.shape.len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn push(&mut self, sample: &[f32]) -> Result<()> {
        if sample.len() != self.shape.len() {
            return Err(shape_err(self.shape.len(), sample.len()));
        }
        self.data.extend_from_slice(sample);
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        let mut data = Vec::with_capacity(indices.len() * self.shape.len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        ImageBatch {
            shape: self.shape,
            data,
        }
    }

    pub fn concat(parts: &[&ImageBatch]) -> Result<ImageBatch> {
        let first = parts.first().ok_or(Error::EmptyBatch)?;
        let mut out = ImageBatch::empty(first.shape);
        for p in parts {
            if p.shape != first.shape {
                return Err(shape_err(first.shape, p.shape));
            }
            out.data.extend_from_slice(&p.data);
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
