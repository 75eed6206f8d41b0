//! Eager reverse-mode differentiation.
//!
//! Every operation computes its value immediately and records how it was
//! produced. [`Graph::grad`] walks the record backwards and expresses each
//! adjoint with the same operations, so the gradients it returns are ordinary
//! nodes that can be differentiated again. The gradient penalty relies on this:
//! it takes the gradient of a critic with respect to its input and then
//! differentiates the norm of that gradient with respect to the critic's
//! parameters.
//!
//! Shape errors inside the graph are programming errors and panic, the way
//! indexing does. Fallible shape checks happen at the model boundary.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sliding-window geometry of a 2-D convolution over `[batch, channels, height, width]`.
///
/// The column matrix produced by [`Graph::im2col`] has shape
/// `[channels * kernel * kernel, batch * out_h * out_w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// `None` when the kernel does not fit the padded input.
    pub fn new(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        if kernel == 0 || stride == 0 {
            return None;
        }
        let ph = height + 2 * padding;
        let pw = width + 2 * padding;
        if ph < kernel || pw < kernel {
            return None;
        }
        Some(ConvGeom {
            batch,
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h: (ph - kernel) / stride + 1,
            out_w: (pw - kernel) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    fn image_len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// Calls `f(image_index, column_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let cols = self.col_cols();
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    for n in 0..self.batch {
                        let img_base = (n * self.channels + c) * self.height;
                        for oh in 0..self.out_h {
                            let ih = (oh * s + ki) as isize - p;
                            if ih < 0 || ih >= self.height as isize {
                                continue;
                            }
                            let img_row = (img_base + ih as usize) * self.width;
                            let col_base = row * cols + (n * self.out_h + oh) * self.out_w;
                            for ow in 0..self.out_w {
                                let iw = (ow * s + kj) as isize - p;
                                if iw < 0 || iw >= self.width as isize {
                                    continue;
                                }
                                f(img_row + iw as usize, col_base + ow);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Tanh(Var),
    LeakyRelu(Var, f32),
    Sqrt(Var),
    Recip(Var),
    /// `[outer, mid, inner] -> [mid]`, summing the outer and inner axes.
    Reduce {
        x: Var,
        outer: usize,
        inner: usize,
    },
    /// `[mid] -> [outer, mid, inner]`, the adjoint of `Reduce`.
    Expand {
        x: Var,
        outer: usize,
        inner: usize,
    },
    Reshape(Var),
    /// `[a, b, r] -> [b, a, r]`.
    Swap {
        x: Var,
        a: usize,
        b: usize,
    },
    Im2Col(Var, ConvGeom),
    Col2Im(Var, ConvGeom),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Pad {
        x: Var,
        start: usize,
    },
}

impl Op {
    fn visit_parents(&self, mut f: impl FnMut(Var)) {
        match self {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul { a, b, .. } => {
                f(*a);
                f(*b);
            }
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Tanh(x)
            | Op::LeakyRelu(x, _)
            | Op::Sqrt(x)
            | Op::Recip(x)
            | Op::Reduce { x, .. }
            | Op::Expand { x, .. }
            | Op::Reshape(x)
            | Op::Swap { x, .. }
            | Op::Im2Col(x, _)
            | Op::Col2Im(x, _)
            | Op::Slice { x, .. }
            | Op::Pad { x, .. } => f(*x),
            Op::Concat(parts) => parts.iter().copied().for_each(f),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A recording of tensor computations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf. Leaves are the variables gradients can be taken with
    /// respect to; a leaf never passed to [`Graph::grad`] acts as a constant.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip(a, b, |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip(a, b, |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip(a, b, |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let value = self.map(x, |v| v * c);
        self.push(value, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Var {
        let value = self.map(x, |v| v + c);
        self.push(value, Op::AddScalar(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.map(x, libm::tanhf);
        self.push(value, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let value = self.map(x, |v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(x, slope))
    }

    /// Square root whose derivative at zero is taken to be zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.map(x, libm::sqrtf);
        self.push(value, Op::Sqrt(x))
    }

    /// Reciprocal with `1/0` defined as `0`.
    pub fn recip(&mut self, x: Var) -> Var {
        let value = self.map(x, safe_recip);
        self.push(value, Op::Recip(x))
    }

    /// `op(a) @ op(b)` for 2-D operands, where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul on {sa:?} x {sb:?}");
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        assert_eq!(k, k2, "matmul inner dims {sa:?} (t={ta}) x {sb:?} (t={tb})");
        let mut out = vec![0.0f32; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            sa[1],
            ta,
            self.value(b).data(),
            sb[1],
            tb,
            &mut out,
        );
        self.push(Tensor::new(vec![m, n], out), Op::MatMul { a, b, ta, tb })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// Sums `x`, viewed as `[outer, mid, inner]`, over its outer and inner
    /// axes; the result takes `out_shape`, whose size must be `mid`.
    pub fn reduce(&mut self, x: Var, outer: usize, inner: usize, out_shape: &[usize]) -> Var {
        let total = self.value(x).len();
        assert!(outer * inner > 0 && total % (outer * inner) == 0);
        let mid = total / (outer * inner);
        assert_eq!(out_shape.iter().product::<usize>(), mid);
        let src = self.value(x).data();
        let mut out = vec![0.0f32; mid];
        for o in 0..outer {
            for (m, slot) in out.iter_mut().enumerate() {
                let base = (o * mid + m) * inner;
                *slot += src[base..base + inner].iter().sum::<f32>();
            }
        }
        self.push(Tensor::new(out_shape.to_vec(), out), Op::Reduce { x, outer, inner })
    }

    /// Broadcasts `x` (size `mid`) to `[outer, mid, inner]` laid out as `out_shape`.
    pub fn expand(&mut self, x: Var, outer: usize, inner: usize, out_shape: &[usize]) -> Var {
        let src = self.value(x).data();
        let mid = src.len();
        assert_eq!(out_shape.iter().product::<usize>(), outer * mid * inner);
        let mut out = Vec::with_capacity(outer * mid * inner);
        for _ in 0..outer {
            for &v in src {
                out.extend(core::iter::repeat_n(v, inner));
            }
        }
        self.push(Tensor::new(out_shape.to_vec(), out), Op::Expand { x, outer, inner })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshape(shape);
        self.push(value, Op::Reshape(x))
    }

    /// Views `x` as `[a, b, rest]` and swaps the first two axes.
    pub fn swap_axes(&mut self, x: Var, a: usize, b: usize, out_shape: &[usize]) -> Var {
        let src = self.value(x).data();
        let total = src.len();
        assert!(a * b > 0 && total % (a * b) == 0);
        assert_eq!(out_shape.iter().product::<usize>(), total);
        let r = total / (a * b);
        let mut out = vec![0.0f32; total];
        for i in 0..a {
            for j in 0..b {
                let from = (i * b + j) * r;
                let to = (j * a + i) * r;
                out[to..to + r].copy_from_slice(&src[from..from + r]);
            }
        }
        self.push(Tensor::new(out_shape.to_vec(), out), Op::Swap { x, a, b })
    }

    pub fn im2col(&mut self, x: Var, geom: ConvGeom) -> Var {
        let src = self.value(x).data();
        assert_eq!(src.len(), geom.image_len(), "im2col input size");
        let mut out = vec![0.0f32; geom.col_rows() * geom.col_cols()];
        geom.for_each_tap(|img, col| out[col] = src[img]);
        let shape = vec![geom.col_rows(), geom.col_cols()];
        self.push(Tensor::new(shape, out), Op::Im2Col(x, geom))
    }

    /// Scatter-adds a column matrix back onto `[batch, channels, height, width]`.
    pub fn col2im(&mut self, x: Var, geom: ConvGeom) -> Var {
        let src = self.value(x).data();
        assert_eq!(src.len(), geom.col_rows() * geom.col_cols(), "col2im input size");
        let mut out = vec![0.0f32; geom.image_len()];
        geom.for_each_tap(|img, col| out[img] += src[col]);
        let shape = vec![geom.batch, geom.channels, geom.height, geom.width];
        self.push(Tensor::new(shape, out), Op::Col2Im(x, geom))
    }

    /// Concatenates along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_rows(&tensors);
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// Leading-axis rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        let w = t.row_len();
        assert!(start + len <= t.rows());
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let value = Tensor::new(shape, t.data()[start * w..(start + len) * w].to_vec());
        self.push(value, Op::Slice { x, start })
    }

    /// Embeds `x` at row `start` of a zero tensor with `total` rows.
    pub fn pad_rows(&mut self, x: Var, start: usize, total: usize) -> Var {
        let t = self.value(x);
        let w = t.row_len();
        assert!(start + t.rows() <= total);
        let mut shape = t.shape().to_vec();
        shape[0] = total;
        let mut data = vec![0.0f32; total * w];
        data[start * w..start * w + t.len()].copy_from_slice(t.data());
        self.push(Tensor::new(shape, data), Op::Pad { x, start })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        self.reduce(x, 1, n, &[])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f32)
    }

    /// Per-row sum of a tensor with leading axis `N`, giving `[N]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (n, w) = (t.rows(), t.row_len());
        self.reduce(x, 1, w, &[n])
    }

    /// Gradients of the scalar `y` with respect to each of `wrt`.
    ///
    /// The returned nodes belong to this graph and can be differentiated
    /// again. A variable `y` does not depend on gets a zero gradient.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.value(y).len(), 1, "grad of non-scalar output");
        let n = y.0 + 1;
        let mut needs = vec![false; n];
        for w in wrt {
            if w.0 < n {
                needs[w.0] = true;
            }
        }
        for i in 0..n {
            if !needs[i] {
                let mut hit = false;
                self.nodes[i].op.visit_parents(|p| hit |= needs[p.0]);
                needs[i] = hit;
            }
        }

        let mut adj: Vec<Option<Var>> = vec![None; n];
        if needs[y.0] {
            let seed = Tensor::full(self.shape(y), 1.0);
            adj[y.0] = Some(self.leaf(seed));
        }
        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            self.backprop(Var(i), &op, g, &needs, &mut adj);
        }

        wrt.iter()
            .map(|w| match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let zeros = Tensor::zeros(self.shape(*w));
                    self.leaf(zeros)
                }
            })
            .collect()
    }

    fn accumulate(&mut self, adj: &mut [Option<Var>], needs: &[bool], target: Var, contrib: Var) {
        if !needs[target.0] {
            return;
        }
        adj[target.0] = Some(match adj[target.0] {
            Some(prev) => self.add(prev, contrib),
            None => contrib,
        });
    }

    fn backprop(&mut self, out: Var, op: &Op, g: Var, needs: &[bool], adj: &mut [Option<Var>]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(adj, needs, a, g);
                self.accumulate(adj, needs, b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, needs, a, g);
                if needs[b.0] {
                    let ng = self.scale(g, -1.0);
                    self.accumulate(adj, needs, b, ng);
                }
            }
            Op::Mul(a, b) => {
                if needs[a.0] {
                    let da = self.mul(g, b);
                    self.accumulate(adj, needs, a, da);
                }
                if needs[b.0] {
                    let db = self.mul(g, a);
                    self.accumulate(adj, needs, b, db);
                }
            }
            Op::Scale(x, c) => {
                let dx = self.scale(g, c);
                self.accumulate(adj, needs, x, dx);
            }
            Op::AddScalar(x) => self.accumulate(adj, needs, x, g),
            Op::MatMul { a, b, ta, tb } => {
                if needs[a.0] {
                    let da = match (ta, tb) {
                        (false, false) => self.matmul_t(g, b, false, true),
                        (false, true) => self.matmul_t(g, b, false, false),
                        (true, false) => self.matmul_t(b, g, false, true),
                        (true, true) => self.matmul_t(b, g, true, true),
                    };
                    self.accumulate(adj, needs, a, da);
                }
                if needs[b.0] {
                    let db = match (ta, tb) {
                        (false, false) => self.matmul_t(a, g, true, false),
                        (false, true) => self.matmul_t(g, a, true, false),
                        (true, false) => self.matmul_t(a, g, false, false),
                        (true, true) => self.matmul_t(g, a, true, true),
                    };
                    self.accumulate(adj, needs, b, db);
                }
            }
            Op::Tanh(x) => {
                let sq = self.mul(out, out);
                let neg = self.scale(sq, -1.0);
                let deriv = self.add_scalar(neg, 1.0);
                let dx = self.mul(g, deriv);
                self.accumulate(adj, needs, x, dx);
            }
            Op::LeakyRelu(x, slope) => {
                let mask = self.map(x, |v| if v > 0.0 { 1.0 } else { slope });
                let mask = self.leaf(mask);
                let dx = self.mul(g, mask);
                self.accumulate(adj, needs, x, dx);
            }
            Op::Sqrt(x) => {
                let r = self.recip(out);
                let half = self.scale(r, 0.5);
                let dx = self.mul(g, half);
                self.accumulate(adj, needs, x, dx);
            }
            Op::Recip(x) => {
                let sq = self.mul(out, out);
                let t = self.mul(g, sq);
                let dx = self.scale(t, -1.0);
                self.accumulate(adj, needs, x, dx);
            }
            Op::Reduce { x, outer, inner } => {
                let shape = self.shape(x).to_vec();
                let dx = self.expand(g, outer, inner, &shape);
                self.accumulate(adj, needs, x, dx);
            }
            Op::Expand { x, outer, inner } => {
                let shape = self.shape(x).to_vec();
                let dx = self.reduce(g, outer, inner, &shape);
                self.accumulate(adj, needs, x, dx);
            }
            Op::Reshape(x) => {
                let shape = self.shape(x).to_vec();
                let dx = self.reshape(g, &shape);
                self.accumulate(adj, needs, x, dx);
            }
            Op::Swap { x, a, b } => {
                let shape = self.shape(x).to_vec();
                let dx = self.swap_axes(g, b, a, &shape);
                self.accumulate(adj, needs, x, dx);
            }
            Op::Im2Col(x, geom) => {
                let dx = self.col2im(g, geom);
                let shape = self.shape(x).to_vec();
                let dx = self.reshape(dx, &shape);
                self.accumulate(adj, needs, x, dx);
            }
            Op::Col2Im(x, geom) => {
                let dx = self.im2col(g, geom);
                self.accumulate(adj, needs, x, dx);
            }
            Op::Concat(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if needs[p.0] {
                        let dp = self.slice_rows(g, start, rows);
                        self.accumulate(adj, needs, p, dp);
                    }
                    start += rows;
                }
            }
            Op::Slice { x, start } => {
                let total = self.value(x).rows();
                let dx = self.pad_rows(g, start, total);
                self.accumulate(adj, needs, x, dx);
            }
            Op::Pad { x, start } => {
                let rows = self.value(x).rows();
                let dx = self.slice_rows(g, start, rows);
                self.accumulate(adj, needs, x, dx);
            }
        }
    }

    fn map(&self, x: Var, f: impl Fn(f32) -> f32) -> Tensor {
        let t = self.value(x);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise operands differ in shape");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }
}

fn safe_recip(v: f32) -> f32 {
    if v == 0.0 {
        0.0
    } else {
        1.0 / v
    }
}

/// `c = op(a) @ op(b)` with row-major storage; `lda`/`ldb` are the stored row lengths.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], lda: usize, ta: bool, b: &[f32], ldb: usize, tb: bool, c: &mut [f32]) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let (rsa, csa) = if ta { (1, lda) } else { (lda, 1) };
    let (rsb, csb) = if tb { (1, ldb) } else { (ldb, 1) };
    // SAFETY: the strides describe `a` (m x k), `b` (k x n) and `c` (m x n)
    // within the bounds of the slices, which the caller sized from the shapes.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
