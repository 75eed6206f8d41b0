//! Layer stacks over the [`Graph`](crate::graph::Graph).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{shape_err, Error, Result};
use crate::graph::{ConvGeom, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Tanh,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Layer {
    Linear {
        input: usize,
        output: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Act(Activation),
    /// Reshapes each sample; the leading batch axis is kept.
    Reshape(Vec<usize>),
}

impl Layer {
    /// Per-sample output shape for a per-sample input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            Layer::Linear { input: i, output } => {
                if input.iter().product::<usize>() != i {
                    return Err(shape_err(i, input));
                }
                Ok(vec![output])
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => match *input {
                [c, h, w] if c == in_channels => {
                    let geom = ConvGeom::new(1, c, h, w, kernel, stride, padding)
                        .ok_or_else(|| shape_err("kernel fitting input", input))?;
                    Ok(vec![out_channels, geom.out_h, geom.out_w])
                }
                _ => Err(shape_err([in_channels, 0, 0], input)),
            },
            Layer::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => match *input {
                [c, h, w] if c == in_channels => {
                    let (oh, ow) = transposed_size(h, w, kernel, stride, padding)
                        .ok_or_else(|| shape_err("transposed kernel fitting input", input))?;
                    Ok(vec![out_channels, oh, ow])
                }
                _ => Err(shape_err([in_channels, 0, 0], input)),
            },
            Layer::Act(_) => Ok(input.to_vec()),
            Layer::Reshape(ref shape) => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(shape_err(shape, input));
                }
                Ok(shape.clone())
            }
        }
    }

    /// Parameter shapes with their fan-in (weights first, then bias).
    fn param_shapes(&self) -> Vec<(Vec<usize>, usize)> {
        match *self {
            Layer::Linear { input, output } => {
                vec![(vec![input, output], input), (vec![output], 0)]
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                vec![(vec![out_channels, fan_in], fan_in), (vec![out_channels], 0)]
            }
            Layer::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                vec![
                    (vec![in_channels, out_channels * kernel * kernel], fan_in),
                    (vec![out_channels], 0),
                ]
            }
            Layer::Act(_) | Layer::Reshape(_) => Vec::new(),
        }
    }
}

fn transposed_size(h: usize, w: usize, k: usize, s: usize, p: usize) -> Option<(usize, usize)> {
    if h == 0 || w == 0 || s == 0 {
        return None;
    }
    let oh = ((h - 1) * s + k).checked_sub(2 * p)?;
    let ow = ((w - 1) * s + k).checked_sub(2 * p)?;
    if oh == 0 || ow == 0 {
        return None;
    }
    Some((oh, ow))
}

/// A feed-forward stack of layers with its own parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    params: Vec<Tensor>,
    names: Vec<String>,
}

impl Sequential {
    /// Validates the layer chain for `input_shape` (per sample) and draws
    /// weights uniformly from `±1/sqrt(fan_in)`; biases start at zero.
    pub fn new<R: Rng + ?Sized>(input_shape: &[usize], layers: Vec<Layer>, rng: &mut R) -> Result<Self> {
        let mut net = Self::uninitialized(input_shape, layers)?;
        let mut p = 0;
        for layer in &net.layers {
            for (_, fan_in) in layer.param_shapes() {
                if fan_in > 0 {
                    let bound = 1.0 / libm::sqrtf(fan_in as f32);
                    let dist = Uniform::new_inclusive(-bound, bound)
                        .map_err(|_| Error::InvalidConfig("bad init bound".into()))?;
                    for v in net.params[p].data_mut() {
                        *v = dist.sample(rng);
                    }
                }
                p += 1;
            }
        }
        Ok(net)
    }

    /// Same topology with every parameter zero.
    pub fn uninitialized(input_shape: &[usize], layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(shape_err("non-empty input shape", input_shape));
        }
        let mut shape = input_shape.to_vec();
        let mut params = Vec::new();
        let mut names = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape)?;
            for (j, (pshape, _)) in layer.param_shapes().into_iter().enumerate() {
                params.push(Tensor::zeros(&pshape));
                names.push(format!("{i}.{}", if j == 0 { "weight" } else { "bias" }));
            }
        }
        Ok(Sequential {
            layers,
            input_shape: input_shape.to_vec(),
            output_shape: shape,
            params,
            names,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Replaces all parameters, checking each shape.
    pub fn load_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(shape_err(self.params.len(), params.len()));
        }
        for (have, new) in self.params.iter().zip(&params) {
            if have.shape() != new.shape() {
                return Err(shape_err(have.shape(), new.shape()));
            }
        }
        self.params = params;
        Ok(())
    }

    /// FNV-1a hash over the bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.params {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Adds the parameters to `g` as leaves.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone())).collect()
    }

    /// Applies the stack to `x` (`[count, ...input_shape]`).
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Var {
        assert_eq!(params.len(), self.params.len(), "parameter binding length");
        let n = g.shape(x)[0];
        let mut h = x;
        let mut shape = self.input_shape.clone();
        let mut p = 0;
        for layer in &self.layers {
            let next = layer.output_shape(&shape).expect("validated at construction");
            h = match *layer {
                Layer::Linear { input, output } => {
                    if g.shape(h).len() != 2 {
                        h = g.reshape(h, &[n, input]);
                    }
                    let y = g.matmul(h, params[p]);
                    let b = g.expand(params[p + 1], n, 1, &[n, output]);
                    p += 2;
                    g.add(y, b)
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let geom = ConvGeom::new(n, in_channels, shape[1], shape[2], kernel, stride, padding)
                        .expect("validated at construction");
                    let cols = g.im2col(h, geom);
                    let y = g.matmul(params[p], cols);
                    let plane = geom.out_h * geom.out_w;
                    let out = [n, out_channels, geom.out_h, geom.out_w];
                    let y = g.swap_axes(y, out_channels, n, &out);
                    let b = g.expand(params[p + 1], n, plane, &out);
                    p += 2;
                    g.add(y, b)
                }
                Layer::ConvTranspose2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let plane = shape[1] * shape[2];
                    let xs = g.swap_axes(h, n, in_channels, &[in_channels, n * plane]);
                    let cols = g.matmul_t(params[p], xs, true, false);
                    let geom = ConvGeom::new(n, out_channels, next[1], next[2], kernel, stride, padding)
                        .expect("validated at construction");
                    debug_assert_eq!((geom.out_h, geom.out_w), (shape[1], shape[2]));
                    let y = g.col2im(cols, geom);
                    let out = [n, out_channels, next[1], next[2]];
                    let b = g.expand(params[p + 1], n, next[1] * next[2], &out);
                    p += 2;
                    g.add(y, b)
                }
                Layer::Act(Activation::Relu) => g.relu(h),
                Layer::Act(Activation::LeakyRelu(s)) => g.leaky_relu(h, s),
                Layer::Act(Activation::Tanh) => g.tanh(h),
                Layer::Reshape(ref per) => {
                    let mut full = vec![n];
                    full.extend_from_slice(per);
                    g.reshape(h, &full)
                }
            };
            shape = next;
        }
        let mut full = vec![n];
        full.extend_from_slice(&self.output_shape);
        if g.shape(h) != full.as_slice() {
            h = g.reshape(h, &full);
        }
        h
    }

    /// Forward pass outside any training graph, in chunks of at most `chunk` samples.
    pub fn infer(&self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        if x.shape().get(1..) != Some(self.input_shape.as_slice()) {
            let mut want = vec![x.rows()];
            want.extend_from_slice(&self.input_shape);
            return Err(shape_err(want, x.shape()));
        }
        let chunk = chunk.max(1);
        let mut parts = Vec::new();
        let mut start = 0;
        while start < x.rows() {
            let end = (start + chunk).min(x.rows());
            let idx: Vec<usize> = (start..end).collect();
            let mut g = Graph::new();
            let params = self.bind(&mut g);
            let input = g.leaf(x.select_rows(&idx));
            let out = self.forward(&mut g, &params, input);
            parts.push(g.value(out).clone());
            start = end;
        }
        if parts.is_empty() {
            let mut shape = vec![0];
            shape.extend_from_slice(&self.output_shape);
            return Ok(Tensor::zeros(&shape));
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::concat_rows(&refs))
    }
}
