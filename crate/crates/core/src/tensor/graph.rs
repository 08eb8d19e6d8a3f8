use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn, Patches};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x[.., s..] + bias[s..]`, bias broadcast over leading dims.
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: Vec<(T, T)>,
    },
    Softmax(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Reshape(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        stride: usize,
    },
    ConvTranspose2d {
        x: Var,
        kernel: Var,
        stride: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    EmbedMean {
        table: Var,
        tokens: Vec<Vec<u32>>,
    },
    Sum(Var),
    RelativeL2 {
        pred: Var,
        target: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias { .. } => "add_bias",
            Op::Scale { .. } => "scale",
            Op::Gelu(_) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax(_) => "softmax",
            Op::Permute { .. } => "permute",
            Op::Reshape(_) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::MeanAxis { .. } => "mean_axis",
            Op::EmbedMean { .. } => "embed_mean",
            Op::Sum(_) => "sum",
            Op::RelativeL2 { .. } => "relative_l2",
            Op::Mse { .. } => "mse",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
    /// `None` for parameter nodes, whose values live in the store.
    data: Option<Vec<T>>,
    needs_grad: bool,
}

/// Computation record for one forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Graph::backward`] walks it in reverse once.
pub struct Graph<'p, T> {
    params: Option<&'p ParamStore<T>>,
    param_nodes: BTreeMap<ParamId, Var>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044715;

/// `tanh` through one `exp`; saturates cleanly because `exp` overflows to ∞.
fn fast_tanh<T: Scalar>(u: T) -> T {
    let two = T::of_f64(2.0);
    T::one() - two / ((two * u).exp() + T::one())
}

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let half = T::of_f64(0.5);
    let u = T::of_f64(GELU_C) * (x + T::of_f64(GELU_K) * x * x * x);
    half * x * (T::one() + fast_tanh(u))
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of_f64(0.5);
    let c = T::of_f64(GELU_C);
    let k = T::of_f64(GELU_K);
    let t = fast_tanh(c * (x + k * x * x * x));
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of_f64(3.0) * k * x * x)
}

/// `v − v` is zero for finite `v` and NaN otherwise; lane-wise sums keep the
/// loop vectorizable.
#[allow(clippy::eq_op)]
fn all_finite<T: Scalar>(data: &[T]) -> bool {
    let mut acc = [T::zero(); 8];
    let chunks = data.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            acc[l] += c[l] - c[l];
        }
    }
    acc.iter().chain(rest).all(|v| v.is_finite())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data<T: Scalar>(src: &[T], shape: &[usize], axes: &[usize], dst: &mut [T], accumulate: bool) {
    // dst has shape shape[axes[i]]
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = out_shape.len();
    if rank == 0 {
        if accumulate {
            dst[0] += src[0];
        } else {
            dst[0] = src[0];
        }
        return;
    }
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    for o in 0..outer {
        let d = &mut dst[o * inner..(o + 1) * inner];
        if accumulate {
            for (j, v) in d.iter_mut().enumerate() {
                *v += src[base + j * inner_stride];
            }
        } else {
            for (j, v) in d.iter_mut().enumerate() {
                *v = src[base + j * inner_stride];
            }
        }
        // advance the multi-index over the leading axes
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

/// `(gemm calls, rows per call, a step, b step)`. A right operand shared
/// across the batch folds the batch into the row count.
fn matmul_plan(ba: &[usize], bb: &[usize], m: usize, k: usize, n: usize) -> (usize, usize, usize, usize) {
    let batch: usize = if ba.is_empty() { bb } else { ba }.iter().product();
    if bb.is_empty() {
        (1, batch * m, 0, 0)
    } else if ba.is_empty() {
        (batch, m, 0, k * n)
    } else {
        (batch, m, m * k, k * n)
    }
}

/// Splits a matmul operand shape into (batch dims, rows, cols).
fn mat_dims(shape: &[usize]) -> Option<(&[usize], usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    let r = shape.len();
    Some((&shape[..r - 2], shape[r - 2], shape[r - 1]))
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            params: None,
            param_nodes: BTreeMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Self {
            params: Some(params),
            param_nodes: BTreeMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>, data: Vec<T>, needs_grad: bool) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let id = self.nodes.len();
        if !all_finite(&data) {
            return Err(Error::NonFinite {
                op: op.name(),
                node: id,
            });
        }
        self.nodes.push(Node {
            op,
            shape,
            data: Some(data),
            needs_grad,
        });
        Ok(Var(id))
    }

    /// Constant input; gradients are not propagated into it.
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push(Op::Input, shape, t.into_data(), false)
    }

    /// Differentiable free variable (used by tests and probes).
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push(Op::Leaf, shape, t.into_data(), true)
    }

    /// Node for a stored parameter. Repeated calls return the same node, so
    /// shared weights accumulate their gradient in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let store = self.params.expect("graph was built without a parameter store");
        let shape = store.get(id).shape().to_vec();
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Param(id),
            shape,
            data: None,
            needs_grad: true,
        });
        self.param_nodes.insert(id, v);
        v
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match (&node.data, &node.op) {
            (Some(d), _) => d,
            (None, Op::Param(id)) => self.params.unwrap().get(*id).data(),
            _ => unreachable!("node without data"),
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor {
            shape: self.shape(v).to_vec(),
            data: self.value(v).to_vec(),
        }
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ---------------------------------------------------------------- ops

    /// Batched matrix product `[.., m, k] × [.., k, n]`. Batch dims must be
    /// equal, or one operand may be a plain matrix shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ((ba, m, k), (bb, k2, n)) = match (mat_dims(&sa), mat_dims(&sb)) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                return Err(Error::dim(
                    "matmul",
                    format!("operands must be at least 2-D: {sa:?} × {sb:?}"),
                ))
            }
        };
        if k != k2 || !(ba == bb || ba.is_empty() || bb.is_empty()) {
            return Err(Error::dim("matmul", format!("{sa:?} × {sb:?}")));
        }
        let batch_dims = if ba.is_empty() { bb } else { ba };
        let (batch, rows, sa_step, sb_step) = matmul_plan(ba, bb, m, k, n);
        let mut out = vec![T::zero(); batch * rows * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for i in 0..batch {
                gemm_nn(
                    rows,
                    k,
                    n,
                    &av[i * sa_step..],
                    &bv[i * sb_step..],
                    &mut out[i * rows * n..(i + 1) * rows * n],
                );
            }
        }
        let mut shape = batch_dims.to_vec();
        shape.extend_from_slice(&[m, n]);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMul { a, b }, shape, out, ng)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Add(a, b), self.shape(a).to_vec(), out, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Sub(a, b), self.shape(a).to_vec(), out, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::Mul(a, b), self.shape(a).to_vec(), out, ng)
    }

    /// Adds `bias`, whose shape must equal the trailing dims of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return Err(Error::dim("add_bias", format!("{sx:?} + {sb:?}")));
        }
        let inner = sb.iter().product::<usize>().max(1);
        let bv = self.value(bias);
        let out = self
            .value(x)
            .chunks(inner)
            .flat_map(|row| row.iter().zip(bv).map(|(&a, &b)| a + b))
            .collect();
        let ng = self.ng(x) || self.ng(bias);
        self.push(Op::AddBias { x, bias }, self.shape(x).to_vec(), out, ng)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::of_f64(factor);
        let out = self.value(x).iter().map(|&v| v * f).collect();
        let ng = self.ng(x);
        self.push(Op::Scale { x, factor: f }, self.shape(x).to_vec(), out, ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| gelu_fwd(v)).collect();
        let ng = self.ng(x);
        self.push(Op::Gelu(x), self.shape(x).to_vec(), out, ng)
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias` (both of the last-axis length).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let n = *sx.last().ok_or_else(|| Error::dim("layer_norm", "scalar input"))?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::dim("layer_norm", format!("gain/bias must be [{n}]")));
        }
        let nf = T::of_f64(n as f64);
        let eps = T::of_f64(LN_EPS);
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let mut out = Vec::with_capacity(xv.len());
        let mut stats = Vec::with_capacity(xv.len() / n);
        for row in xv.chunks(n) {
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / nf;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / nf;
            let rstd = T::one() / (var + eps).sqrt();
            out.extend(row.iter().enumerate().map(|(j, &v)| (v - mean) * rstd * g[j] + b[j]));
            stats.push((mean, rstd));
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(Op::LayerNorm { x, gain, bias, stats }, sx, out, ng)
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let n = *sx.last().ok_or_else(|| Error::dim("softmax", "scalar input"))?;
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let ng = self.ng(x);
        self.push(Op::Softmax(x), sx, out, ng)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if axes.len() != sx.len()
            || axes
                .iter()
                .any(|&a| a >= sx.len() || core::mem::replace(&mut seen[a], true))
        {
            return Err(Error::dim("permute", format!("axes {axes:?} for shape {sx:?}")));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| sx[a]).collect();
        let mut out = vec![T::zero(); self.value(x).len()];
        permute_data(self.value(x), &sx, axes, &mut out, false);
        let ng = self.ng(x);
        self.push(Op::Permute { x, axes: axes.to_vec() }, out_shape, out, ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::dim("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        let ng = self.ng(x);
        self.push(Op::Reshape(x), shape.to_vec(), out, ng)
    }

    /// Valid (unpadded) cross-correlation: `x[b,c,h,w] ⋆ kernel[o,c,k,k]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sk[2] != sk[3] || sk[1] != sx[1] || stride == 0 {
            return Err(Error::dim(
                "conv2d",
                format!("input {sx:?}, kernel {sk:?}, stride {stride}"),
            ));
        }
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, k) = (sk[0], sk[2]);
        if k > h || k > w {
            return Err(Error::dim("conv2d", format!("kernel {k} larger than input {h}×{w}")));
        }
        let geo = Patches {
            channels: c,
            height: h,
            width: w,
            kernel: k,
            stride,
        };
        let (rows, ncol) = (geo.rows(), geo.cols());
        let mut cols = vec![T::zero(); rows * ncol];
        let mut out = vec![T::zero(); b * o * rows];
        {
            let (xv, kv) = (self.value(x), self.value(kernel));
            for bi in 0..b {
                geo.im2col(&xv[bi * c * h * w..(bi + 1) * c * h * w], &mut cols);
                gemm_nt(o, ncol, rows, kv, &cols, &mut out[bi * o * rows..(bi + 1) * o * rows]);
            }
        }
        let ng = self.ng(x) || self.ng(kernel);
        self.push(
            Op::Conv2d { x, kernel, stride },
            vec![b, o, geo.out_height(), geo.out_width()],
            out,
            ng,
        )
    }

    /// Transposed convolution `x[b,c,h',w']` with `kernel[c,o,k,k]`; the exact
    /// adjoint of [`Graph::conv2d`] with the same kernel and stride.
    pub fn conv_transpose2d(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sk[2] != sk[3] || sk[0] != sx[1] || stride == 0 {
            return Err(Error::dim(
                "conv_transpose2d",
                format!("input {sx:?}, kernel {sk:?}, stride {stride}"),
            ));
        }
        let (b, c, hi, wi) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, k) = (sk[1], sk[2]);
        let geo = Patches {
            channels: o,
            height: (hi - 1) * stride + k,
            width: (wi - 1) * stride + k,
            kernel: k,
            stride,
        };
        debug_assert_eq!(geo.rows(), hi * wi);
        let (rows, ncol) = (geo.rows(), geo.cols());
        let plane = geo.height * geo.width;
        let mut cols = vec![T::zero(); rows * ncol];
        let mut out = vec![T::zero(); b * o * plane];
        {
            let (xv, kv) = (self.value(x), self.value(kernel));
            for bi in 0..b {
                cols.iter_mut().for_each(|v| *v = T::zero());
                gemm_tn(rows, c, ncol, &xv[bi * c * rows..(bi + 1) * c * rows], kv, &mut cols);
                geo.col2im(&cols, &mut out[bi * o * plane..(bi + 1) * o * plane]);
            }
        }
        let ng = self.ng(x) || self.ng(kernel);
        self.push(
            Op::ConvTranspose2d { x, kernel, stride },
            vec![b, o, geo.height, geo.width],
            out,
            ng,
        )
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(Error::dim("mean_axis", format!("axis {axis} for shape {sx:?}")));
        }
        let outer: usize = sx[..axis].iter().product();
        let d = sx[axis];
        let inner: usize = sx[axis + 1..].iter().product();
        let inv = T::of_f64(1.0 / d as f64);
        let xv = self.value(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for j in 0..d {
                let src = &xv[(o * d + j) * inner..(o * d + j + 1) * inner];
                for (a, &b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
            for a in dst.iter_mut() {
                *a *= inv;
            }
        }
        let mut shape = sx;
        shape.remove(axis);
        let ng = self.ng(x);
        self.push(Op::MeanAxis { x, axis }, shape, out, ng)
    }

    /// Mean of the `table` rows selected by each token list: `[b, d]`.
    pub fn embed_mean(&mut self, table: Var, tokens: &[Vec<u32>]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::dim("embed_mean", format!("table must be 2-D, got {st:?}")));
        }
        let (vocab, d) = (st[0], st[1]);
        let tv = self.value(table);
        let mut out = vec![T::zero(); tokens.len() * d];
        for (i, seq) in tokens.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::Degenerate(format!("empty token sequence at batch index {i}")));
            }
            let dst = &mut out[i * d..(i + 1) * d];
            for &t in seq {
                let t = t as usize;
                if t >= vocab {
                    return Err(Error::dim(
                        "embed_mean",
                        format!("token {t} outside vocabulary {vocab}"),
                    ));
                }
                for (a, &b) in dst.iter_mut().zip(&tv[t * d..(t + 1) * d]) {
                    *a += b;
                }
            }
            let inv = T::of_f64(1.0 / seq.len() as f64);
            dst.iter_mut().for_each(|a| *a *= inv);
        }
        let ng = self.ng(table);
        self.push(
            Op::EmbedMean {
                table,
                tokens: tokens.to_vec(),
            },
            vec![tokens.len(), d],
            out,
            ng,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().fold(T::zero(), |a, &b| a + b);
        let ng = self.ng(x);
        self.push(Op::Sum(x), Vec::new(), vec![s], ng)
    }

    /// Mean over the leading (batch) axis of ‖pred − target‖₂ / ‖target‖₂,
    /// each norm taken over all remaining axes of one sample.
    pub fn relative_l2(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("relative_l2", pred, target)?;
        let shape = self.shape(pred).to_vec();
        let b = *shape.first().ok_or_else(|| Error::dim("relative_l2", "scalar input"))?;
        let per = self.value(pred).len() / b.max(1);
        let (pv, tv) = (self.value(pred), self.value(target));
        let mut total = T::zero();
        for i in 0..b {
            let (p, t) = (&pv[i * per..(i + 1) * per], &tv[i * per..(i + 1) * per]);
            let tn = t.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
            if tn == T::zero() {
                return Err(Error::Degenerate(format!("relative_l2 target sample {i} is all zeros")));
            }
            let dn = p
                .iter()
                .zip(t)
                .fold(T::zero(), |s, (&a, &c)| s + (a - c) * (a - c))
                .sqrt();
            total += dn / tn;
        }
        let loss = total / T::of_f64(b as f64);
        let ng = self.ng(pred) || self.ng(target);
        self.push(Op::RelativeL2 { pred, target }, Vec::new(), vec![loss], ng)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let n = self.value(pred).len().max(1);
        let s = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .fold(T::zero(), |s, (&a, &b)| s + (a - b) * (a - b));
        let ng = self.ng(pred) || self.ng(target);
        self.push(Op::Mse { pred, target }, Vec::new(), vec![s / T::of_f64(n as f64)], ng)
    }

    // ------------------------------------------------------------ backward

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            match &node.op {
                Op::Input | Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(gy);
                }
                Op::MatMul { a, b } => self.back_matmul(*a, *b, &gy, &mut grads),
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |g| add_into(g, &gy));
                    self.acc(&mut grads, *b, |g| add_into(g, &gy));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, |g| add_into(g, &gy));
                    self.acc(&mut grads, *b, |g| g.iter_mut().zip(&gy).for_each(|(x, &y)| *x -= y));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, |g| {
                        for ((x, &y), &bb) in g.iter_mut().zip(&gy).zip(bv) {
                            *x += y * bb;
                        }
                    });
                    self.acc(&mut grads, *b, |g| {
                        for ((x, &y), &aa) in g.iter_mut().zip(&gy).zip(av) {
                            *x += y * aa;
                        }
                    });
                }
                Op::AddBias { x, bias } => {
                    self.acc(&mut grads, *x, |g| add_into(g, &gy));
                    let inner = self.value(*bias).len();
                    self.acc(&mut grads, *bias, |g| {
                        for row in gy.chunks(inner) {
                            add_into(g, row);
                        }
                    });
                }
                Op::Scale { x, factor } => {
                    self.acc(&mut grads, *x, |g| {
                        g.iter_mut().zip(&gy).for_each(|(a, &y)| *a += y * *factor)
                    });
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    self.acc(&mut grads, *x, |g| {
                        for ((a, &y), &v) in g.iter_mut().zip(&gy).zip(xv) {
                            *a += y * gelu_grad(v);
                        }
                    });
                }
                Op::LayerNorm { x, gain, bias, stats } => {
                    self.back_layer_norm(*x, *gain, *bias, stats, &gy, &mut grads);
                }
                Op::Softmax(x) => {
                    let y = node.data.as_ref().unwrap();
                    let n = *node.shape.last().unwrap();
                    self.acc(&mut grads, *x, |g| {
                        for ((gr, yr), dyr) in g.chunks_mut(n).zip(y.chunks(n)).zip(gy.chunks(n)) {
                            let dot = yr.iter().zip(dyr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                            for ((a, &yy), &dy) in gr.iter_mut().zip(yr).zip(dyr) {
                                *a += yy * (dy - dot);
                            }
                        }
                    });
                }
                Op::Permute { x, axes } => {
                    let mut inv = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inv[a] = i;
                    }
                    let shape = node.shape.clone();
                    self.acc(&mut grads, *x, |g| permute_data(&gy, &shape, &inv, g, true));
                }
                Op::Reshape(x) => self.acc(&mut grads, *x, |g| add_into(g, &gy)),
                Op::Conv2d { x, kernel, stride } => self.back_conv2d(*x, *kernel, *stride, &gy, &mut grads),
                Op::ConvTranspose2d { x, kernel, stride } => {
                    self.back_conv_transpose2d(*x, *kernel, *stride, &gy, &mut grads)
                }
                Op::MeanAxis { x, axis } => {
                    let sx = self.shape(*x);
                    let outer: usize = sx[..*axis].iter().product();
                    let d = sx[*axis];
                    let inner: usize = sx[*axis + 1..].iter().product();
                    let inv = T::of_f64(1.0 / d as f64);
                    self.acc(&mut grads, *x, |g| {
                        for o in 0..outer {
                            let src = &gy[o * inner..(o + 1) * inner];
                            for j in 0..d {
                                let dst = &mut g[(o * d + j) * inner..(o * d + j + 1) * inner];
                                for (a, &b) in dst.iter_mut().zip(src) {
                                    *a += b * inv;
                                }
                            }
                        }
                    });
                }
                Op::EmbedMean { table, tokens } => {
                    let d = self.shape(*table)[1];
                    self.acc(&mut grads, *table, |g| {
                        for (i, seq) in tokens.iter().enumerate() {
                            let inv = T::of_f64(1.0 / seq.len() as f64);
                            let src = &gy[i * d..(i + 1) * d];
                            for &t in seq {
                                let t = t as usize;
                                for (a, &b) in g[t * d..(t + 1) * d].iter_mut().zip(src) {
                                    *a += b * inv;
                                }
                            }
                        }
                    });
                }
                Op::Sum(x) => {
                    let s = gy[0];
                    self.acc(&mut grads, *x, |g| g.iter_mut().for_each(|a| *a += s));
                }
                Op::RelativeL2 { pred, target } => self.back_relative_l2(*pred, *target, gy[0], &mut grads),
                Op::Mse { pred, target } => {
                    let (pv, tv) = (self.value(*pred), self.value(*target));
                    let f = gy[0] * T::of_f64(2.0 / pv.len().max(1) as f64);
                    self.acc(&mut grads, *pred, |g| {
                        for ((a, &p), &t) in g.iter_mut().zip(pv).zip(tv) {
                            *a += f * (p - t);
                        }
                    });
                    self.acc(&mut grads, *target, |g| {
                        for ((a, &p), &t) in g.iter_mut().zip(pv).zip(tv) {
                            *a -= f * (p - t);
                        }
                    });
                }
            }
        }

        let mut param_grads = BTreeMap::new();
        for (&id, &v) in &self.param_nodes {
            if let Some(g) = grads[v.0].take() {
                param_grads.insert(id, g);
            }
        }
        Ok(Gradients {
            nodes: grads,
            params: param_grads,
        })
    }

    /// Runs `f` on the gradient buffer of `v` (zero-initialized on first use)
    /// if `v` participates in differentiation.
    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.ng(v) {
            return;
        }
        let n = self.value(v).len();
        let g = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(g);
    }

    fn back_matmul(&self, a: Var, b: Var, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (ba, m, k) = mat_dims(sa).unwrap();
        let (bb, _, n) = mat_dims(sb).unwrap();
        let (batch, m, sa_step, sb_step) = matmul_plan(ba, bb, m, k, n);
        let (av, bv) = (self.value(a), self.value(b));
        self.acc(grads, a, |g| {
            for i in 0..batch {
                // dA = dC · Bᵀ
                gemm_nt(
                    m,
                    n,
                    k,
                    &gy[i * m * n..(i + 1) * m * n],
                    &bv[i * sb_step..i * sb_step + k * n],
                    &mut g[i * sa_step..i * sa_step + m * k],
                );
            }
        });
        self.acc(grads, b, |g| {
            for i in 0..batch {
                // dB = Aᵀ · dC
                gemm_tn(
                    k,
                    m,
                    n,
                    &av[i * sa_step..i * sa_step + m * k],
                    &gy[i * m * n..(i + 1) * m * n],
                    &mut g[i * sb_step..i * sb_step + k * n],
                );
            }
        });
    }

    fn back_layer_norm(&self, x: Var, gain: Var, bias: Var, stats: &[(T, T)], gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let n = self.value(gain).len();
        let nf = T::of_f64(n as f64);
        let (xv, g) = (self.value(x), self.value(gain));
        self.acc(grads, x, |dx| {
            for (r, &(mean, rstd)) in stats.iter().enumerate() {
                let xs = &xv[r * n..(r + 1) * n];
                let dys = &gy[r * n..(r + 1) * n];
                let mut sum_d = T::zero();
                let mut sum_dx = T::zero();
                for j in 0..n {
                    let d = dys[j] * g[j];
                    let xhat = (xs[j] - mean) * rstd;
                    sum_d += d;
                    sum_dx += d * xhat;
                }
                let (md, mdx) = (sum_d / nf, sum_dx / nf);
                for j in 0..n {
                    let xhat = (xs[j] - mean) * rstd;
                    dx[r * n + j] += rstd * (dys[j] * g[j] - md - xhat * mdx);
                }
            }
        });
        self.acc(grads, gain, |dg| {
            for (r, &(mean, rstd)) in stats.iter().enumerate() {
                for j in 0..n {
                    dg[j] += gy[r * n + j] * (xv[r * n + j] - mean) * rstd;
                }
            }
        });
        self.acc(grads, bias, |db| {
            for row in gy.chunks(n) {
                add_into(db, row);
            }
        });
    }

    fn back_conv2d(&self, x: Var, kernel: Var, stride: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, k) = (sk[0], sk[2]);
        let geo = Patches {
            channels: c,
            height: h,
            width: w,
            kernel: k,
            stride,
        };
        let (rows, ncol) = (geo.rows(), geo.cols());
        let (xv, kv) = (self.value(x), self.value(kernel));
        let mut cols = vec![T::zero(); rows * ncol];
        self.acc(grads, kernel, |dk| {
            for bi in 0..b {
                geo.im2col(&xv[bi * c * h * w..(bi + 1) * c * h * w], &mut cols);
                gemm_nn(o, rows, ncol, &gy[bi * o * rows..(bi + 1) * o * rows], &cols, dk);
            }
        });
        self.acc(grads, x, |dx| {
            for bi in 0..b {
                cols.iter_mut().for_each(|v| *v = T::zero());
                gemm_tn(rows, o, ncol, &gy[bi * o * rows..(bi + 1) * o * rows], kv, &mut cols);
                geo.col2im(&cols, &mut dx[bi * c * h * w..(bi + 1) * c * h * w]);
            }
        });
    }

    fn back_conv_transpose2d(&self, x: Var, kernel: Var, stride: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        let (b, c, hi, wi) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, k) = (sk[1], sk[2]);
        let geo = Patches {
            channels: o,
            height: (hi - 1) * stride + k,
            width: (wi - 1) * stride + k,
            kernel: k,
            stride,
        };
        let (rows, ncol) = (geo.rows(), geo.cols());
        let plane = geo.height * geo.width;
        let (xv, kv) = (self.value(x), self.value(kernel));
        let mut cols = vec![T::zero(); b * rows * ncol];
        for bi in 0..b {
            geo.im2col(
                &gy[bi * o * plane..(bi + 1) * o * plane],
                &mut cols[bi * rows * ncol..(bi + 1) * rows * ncol],
            );
        }
        self.acc(grads, x, |dx| {
            for bi in 0..b {
                gemm_nt(
                    c,
                    ncol,
                    rows,
                    kv,
                    &cols[bi * rows * ncol..(bi + 1) * rows * ncol],
                    &mut dx[bi * c * rows..(bi + 1) * c * rows],
                );
            }
        });
        self.acc(grads, kernel, |dk| {
            for bi in 0..b {
                gemm_nn(
                    c,
                    rows,
                    ncol,
                    &xv[bi * c * rows..(bi + 1) * c * rows],
                    &cols[bi * rows * ncol..(bi + 1) * rows * ncol],
                    dk,
                );
            }
        });
    }

    fn back_relative_l2(&self, pred: Var, target: Var, scale: T, grads: &mut [Option<Vec<T>>]) {
        let shape = self.shape(pred);
        let b = shape[0];
        let per = self.value(pred).len() / b.max(1);
        let (pv, tv) = (self.value(pred), self.value(target));
        let bf = T::of_f64(b as f64);
        // d/dp ‖p−t‖/‖t‖ = (p−t) / (‖p−t‖‖t‖); d/dt adds −(p−t)/(‖p−t‖‖t‖) − ‖p−t‖ t/‖t‖³
        let mut coef = Vec::with_capacity(b);
        for i in 0..b {
            let (p, t) = (&pv[i * per..(i + 1) * per], &tv[i * per..(i + 1) * per]);
            let tn = t.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
            let dn = p
                .iter()
                .zip(t)
                .fold(T::zero(), |s, (&a, &c)| s + (a - c) * (a - c))
                .sqrt();
            coef.push((tn, dn));
        }
        self.acc(grads, pred, |g| {
            for (i, &(tn, dn)) in coef.iter().enumerate() {
                if dn == T::zero() {
                    continue;
                }
                let f = scale / (bf * dn * tn);
                for j in i * per..(i + 1) * per {
                    g[j] += f * (pv[j] - tv[j]);
                }
            }
        });
        self.acc(grads, target, |g| {
            for (i, &(tn, dn)) in coef.iter().enumerate() {
                let f = if dn == T::zero() {
                    T::zero()
                } else {
                    scale / (bf * dn * tn)
                };
                let h = scale * dn / (bf * tn * tn * tn);
                for j in i * per..(i + 1) * per {
                    g[j] += -f * (pv[j] - tv[j]) - h * tv[j];
                }
            }
        });
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Result of [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a non-parameter node, if it received one.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(&id).map(|g| g.as_slice())
    }

    /// Per-parameter gradients indexed by [`ParamId`], `None` where unused.
    pub fn into_param_vec(self, n_params: usize) -> Vec<Option<Vec<T>>> {
        let mut out = vec![None; n_params];
        for (id, g) in self.params {
            out[id.index()] = Some(g);
        }
        out
    }
}
