//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and the ids of its
//! inputs. [`Tape::backward`] walks the nodes in reverse, calling the adjoint
//! kernel of each op and accumulating into inputs that require gradients.
//! Leaf gradients are stored on the leaf tensors and keep accumulating across
//! backward calls until [`Tape::zero_grad`] or [`Tape::reset`].
//!
//! Values on the tape are immutable once recorded.

use crate::error::{contract_err, dim_err, Error, Result};
use crate::ops::activation::{self, Unary};
use crate::ops::conv::{self, ConvGeom};
use crate::ops::haar::{self, Band};
use crate::ops::{linalg, reduce, resize};
use crate::scalar::Scalar;
use crate::tensor::{broadcast_strides, for_each_strided, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Binary(BinaryKind, Var, Var),
    Scale(Var, T),
    Shift(Var),
    MatMul(Var, Var),
    TransposeLast(Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Unary(Unary, Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Normalize(Var, Vec<T>),
    SumAll(Var),
    SumAxes(Var),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    Conv2d(Var, Var, Option<Var>, ConvGeom),
    ConvTranspose2d(Var, Var, Option<Var>, ConvGeom),
    Resize(Var),
    HaarBand(Var, Band),
    HaarSynthesis([Var; 4]),
}

#[derive(Clone, Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Ordered record of operations. Confined to one thread of work.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every recorded node. Outstanding [`Var`]s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    /// Record a leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Record a trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_grad())
    }

    /// Record a leaf that never receives gradients.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Gradient of a leaf as a tensor; zeros when nothing reached it.
    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let val = self.value(v);
        let data = val
            .grad()
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); val.numel()]);
        Tensor::new(val.shape(), data).expect("grad shape matches value")
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.zero_grad());
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, shape: &[usize], data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        let mut t = Tensor::new(shape, data)?;
        if inputs.iter().any(|&v| self.needs_grad(v)) {
            t.set_requires_grad(true);
        }
        self.nodes.push(Node { value: t, op });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- elementwise -------------------------------------------------------

    /// Elementwise `a ∘ b`; `b` may broadcast onto `a` (see [`broadcast_strides`]).
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let strides = broadcast_strides(va.shape(), vb.shape())?;
        let (ad, bd) = (va.data(), vb.data());
        let mut out = vec![T::zero(); ad.len()];
        let f: fn(T, T) -> T = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
        };
        if va.shape() == vb.shape() {
            for ((o, &x), &y) in out.iter_mut().zip(ad).zip(bd) {
                *o = f(x, y);
            }
        } else {
            for_each_strided(va.shape(), &strides, |i, j| out[i] = f(ad[i], bd[j]));
        }
        let shape = va.shape().to_vec();
        self.push(&shape, out, Op::Binary(kind, a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x * s).collect();
        let shape = v.shape().to_vec();
        self.push(&shape, data, Op::Scale(a, s), &[a])
    }

    /// `a + s` for a constant `s`.
    pub fn shift(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x + s).collect();
        let shape = v.shape().to_vec();
        self.push(&shape, data, Op::Shift(a), &[a])
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let v = self.value(a);
        match kind {
            Unary::Log if v.data().iter().any(|&x| !(x > T::zero())) => {
                return Err(Error::NumericDomain("log of a non-positive value".into()));
            }
            Unary::Sqrt if v.data().iter().any(|&x| x < T::zero()) => {
                return Err(Error::NumericDomain("sqrt of a negative value".into()));
            }
            _ => {}
        }
        let data = v.data().iter().map(|&x| activation::apply(kind, x)).collect();
        let shape = v.shape().to_vec();
        self.push(&shape, data, Op::Unary(kind, a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Gelu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    // ---- linear algebra ----------------------------------------------------

    /// `[.., m, k] · [.., k, n]`. Leading batch axes must match exactly, or `b`
    /// may be a plain `[k, n]` matrix shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n, _) = matmul_dims(&sa, &sb)?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let shared = sb.len() == 2;
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let bslice = if shared { bd } else { &bd[bi * k * n..(bi + 1) * k * n] };
            linalg::mm_acc(&ad[bi * m * k..(bi + 1) * m * k], bslice, &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        self.push(&shape, out, Op::MatMul(a, b), &[a, b])
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(dim_err!("transpose needs rank >= 2, got {:?}", s));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let data = self.value(a).data();
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(r * c) {
            out.extend(linalg::transpose(chunk, r, c));
        }
        let mut shape = s.clone();
        let l = shape.len();
        shape.swap(l - 1, l - 2);
        self.push(&shape, out, Op::TransposeLast(a), &[a])
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(dim_err!("invalid permutation {:?} for shape {:?}", perm, s));
        }
        let out = permute_data(self.value(a).data(), &s, perm);
        let shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        self.push(&shape, out, Op::Permute(a, perm.to_vec()), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if shape.iter().product::<usize>() != v.numel() {
            return Err(dim_err!("cannot reshape {:?} to {:?}", v.shape(), shape));
        }
        let data = v.data().to_vec();
        self.push(shape, data, Op::Reshape(a), &[a])
    }

    // ---- reductions --------------------------------------------------------

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(dim_err!("softmax axis {axis} out of range for {:?}", s));
        }
        let (o, l, i) = reduce::split_axis(&s, axis);
        let out = reduce::softmax(self.value(a).data(), o, l, i);
        self.push(&s, out, Op::Softmax(a, axis), &[a])
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(dim_err!("log_softmax axis {axis} out of range for {:?}", s));
        }
        let (o, l, i) = reduce::split_axis(&s, axis);
        let out = reduce::log_softmax(self.value(a).data(), o, l, i);
        self.push(&s, out, Op::LogSoftmax(a, axis), &[a])
    }

    /// Zero-mean, unit-variance normalization over the last axis.
    pub fn normalize_last(&mut self, a: Var, eps: T) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let len = *s.last().unwrap();
        let (out, inv_std) = reduce::normalize_rows(self.value(a).data(), len, eps);
        self.push(&s, out, Op::Normalize(a, inv_std), &[a])
    }

    /// Sum of all entries as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).sum_all();
        self.push(&[1], vec![total], Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::from_f64_lossy(n as f64))
    }

    /// Sum over `axes`, keeping them as extent-1 axes.
    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axes.iter().any(|&ax| ax >= s.len()) {
            return Err(dim_err!("sum axes {:?} out of range for {:?}", axes, s));
        }
        let out_shape: Vec<usize> = s
            .iter()
            .enumerate()
            .map(|(i, &e)| if axes.contains(&i) { 1 } else { e })
            .collect();
        let strides = broadcast_strides(&s, &out_shape)?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); out_shape.iter().product()];
        for_each_strided(&s, &strides, |i, j| out[j] += src[i]);
        self.push(&out_shape, out, Op::SumAxes(a), &[a])
    }

    // ---- structural --------------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| contract_err!("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(dim_err!("concat axis {axis} out of range for {:?}", first));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let same = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !same {
                return Err(dim_err!("concat shape mismatch: {:?} vs {:?} on axis {axis}", s, first));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(&shape, out, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(dim_err!("narrow({axis}, {start}, {len}) out of range for {:?}", s));
        }
        let (outer, ext, inner) = reduce::split_axis(&s, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * ext + start) * inner..(o * ext + start + len) * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push(&shape, out, Op::Narrow(a, axis, start), &[a])
    }

    // ---- convolution and resampling ---------------------------------------

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let g = ConvGeom::conv(self.shape(x), self.shape(kernel), stride, pad)?;
        self.check_bias(bias, g.c_out)?;
        let out = conv::conv2d(&g, self.value(x).data(), self.value(kernel).data(), bias.map(|b| self.value(b).data()));
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.push(&g.out_shape(), out, Op::Conv2d(x, kernel, bias, g), &inputs)
    }

    pub fn conv_transpose2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let g = ConvGeom::transpose(self.shape(x), self.shape(kernel), stride, pad)?;
        self.check_bias(bias, g.c_out)?;
        let out = conv::conv_transpose2d(&g, self.value(x).data(), self.value(kernel).data(), bias.map(|b| self.value(b).data()));
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.push(&g.out_shape(), out, Op::ConvTranspose2d(x, kernel, bias, g), &inputs)
    }

    fn check_bias(&self, bias: Option<Var>, c_out: usize) -> Result<()> {
        match bias {
            Some(b) if self.shape(b) != [c_out] => Err(dim_err!("bias shape {:?}, expected [{c_out}]", self.shape(b))),
            _ => Ok(()),
        }
    }

    /// Bilinear resize of a rank-4 map to `ho×wo`.
    pub fn resize_bilinear(&mut self, x: Var, ho: usize, wo: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if ho == 0 || wo == 0 {
            return Err(dim_err!("resize target must be non-empty"));
        }
        let out = resize::bilinear(self.value(x).data(), n * c, h, w, ho, wo);
        self.push(&[n, c, ho, wo], out, Op::Resize(x), &[x])
    }

    /// One Haar sub-band of a rank-4 map (odd extents reflect-padded).
    pub fn haar_band(&mut self, x: Var, band: Band) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h < 2 || w < 2 {
            return Err(contract_err!("haar analysis needs H, W >= 2, got {h}x{w}"));
        }
        let out = haar::analysis_band(self.value(x).data(), n * c, h, w, band, true);
        self.push(&[n, c, haar::half_extent(h), haar::half_extent(w)], out, Op::HaarBand(x, band), &[x])
    }

    /// Inverse Haar transform of `[LL, LH, HL, HH]`, cropped to `h×w`.
    pub fn haar_synthesis(&mut self, bands: [Var; 4], h: usize, w: usize) -> Result<Var> {
        let s0 = self.shape(bands[0]).to_vec();
        if bands.iter().any(|&b| self.shape(b) != s0.as_slice()) {
            return Err(contract_err!("sub-band shapes differ"));
        }
        let (n, c, hh, ww) = self.value(bands[0]).dims4()?;
        if haar::half_extent(h) != hh || haar::half_extent(w) != ww {
            return Err(contract_err!("sub-bands {hh}x{ww} cannot synthesize {h}x{w}"));
        }
        let data = bands.map(|b| self.value(b).data());
        let out = haar::synthesis(data, n * c, h, w);
        self.push(&[n, c, h, w], out, Op::HaarSynthesis(bands), &bands)
    }

    // ---- backward ----------------------------------------------------------

    /// Accumulate `∂loss/∂leaf` into every leaf that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(contract_err!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                leaf_grads.push((i, g));
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.needs_grad(v) {
                return;
            }
            let n = self.value(v).numel();
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let strides = broadcast_strides(va.shape(), vb.shape()).expect("checked in forward");
                let (ad, bd) = (va.data(), vb.data());
                let shape = va.shape();
                acc(*a, &mut |da| match kind {
                    BinaryKind::Add | BinaryKind::Sub => da.iter_mut().zip(g).for_each(|(d, &x)| *d += x),
                    BinaryKind::Mul => for_each_strided(shape, &strides, |p, q| da[p] += g[p] * bd[q]),
                    BinaryKind::Div => for_each_strided(shape, &strides, |p, q| da[p] += g[p] / bd[q]),
                });
                acc(*b, &mut |db| match kind {
                    BinaryKind::Add => for_each_strided(shape, &strides, |p, q| db[q] += g[p]),
                    BinaryKind::Sub => for_each_strided(shape, &strides, |p, q| db[q] -= g[p]),
                    BinaryKind::Mul => for_each_strided(shape, &strides, |p, q| db[q] += g[p] * ad[p]),
                    BinaryKind::Div => {
                        for_each_strided(shape, &strides, |p, q| db[q] -= g[p] * ad[p] / (bd[q] * bd[q]))
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, &x)| *d += x * *s)),
            Op::Shift(a) | Op::Reshape(a) => acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, &x)| *d += x)),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, m, k, n, shared) = matmul_dims(sa, sb).expect("checked in forward");
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |da| {
                    for bi in 0..batch {
                        let bs = if shared { bd } else { &bd[bi * k * n..(bi + 1) * k * n] };
                        linalg::mm_nt_acc(&g[bi * m * n..(bi + 1) * m * n], bs, &mut da[bi * m * k..(bi + 1) * m * k], m, k, n);
                    }
                });
                acc(*b, &mut |db| {
                    for bi in 0..batch {
                        let dbs = if shared { &mut db[..] } else { &mut db[bi * k * n..(bi + 1) * k * n] };
                        linalg::mm_tn_acc(&ad[bi * m * k..(bi + 1) * m * k], &g[bi * m * n..(bi + 1) * m * n], dbs, m, k, n);
                    }
                });
            }
            Op::TransposeLast(a) => {
                let s = out.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                acc(*a, &mut |da| {
                    for (dchunk, gchunk) in da.chunks_mut(r * c).zip(g.chunks(r * c)) {
                        for (d, x) in dchunk.iter_mut().zip(linalg::transpose(gchunk, r, c)) {
                            *d += x;
                        }
                    }
                });
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let back = permute_data(g, out.shape(), &inv);
                acc(*a, &mut |da| da.iter_mut().zip(&back).for_each(|(d, &x)| *d += x));
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let y = out.data();
                acc(*a, &mut |da| {
                    for k in 0..da.len() {
                        da[k] += g[k] * activation::derivative(*kind, x[k], y[k]);
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let (o, l, inn) = reduce::split_axis(out.shape(), *axis);
                acc(*a, &mut |da| reduce::softmax_backward(out.data(), g, da, o, l, inn));
            }
            Op::LogSoftmax(a, axis) => {
                let (o, l, inn) = reduce::split_axis(out.shape(), *axis);
                acc(*a, &mut |da| reduce::log_softmax_backward(out.data(), g, da, o, l, inn));
            }
            Op::Normalize(a, inv_std) => {
                let len = *out.shape().last().unwrap();
                acc(*a, &mut |da| reduce::normalize_rows_backward(out.data(), inv_std, g, da, len));
            }
            Op::SumAll(a) => acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0])),
            Op::SumAxes(a) => {
                let s = self.shape(*a);
                let strides = broadcast_strides(s, out.shape()).expect("checked in forward");
                acc(*a, &mut |da| for_each_strided(s, &strides, |p, q| da[p] += g[q]));
            }
            Op::Concat(parts, axis) => {
                let s = out.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let row = s[*axis] * inner;
                let mut start = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis] * inner;
                    acc(p, &mut |dp| {
                        for o in 0..outer {
                            for (d, &x) in dp[o * len..(o + 1) * len].iter_mut().zip(&g[o * row + start..o * row + start + len]) {
                                *d += x;
                            }
                        }
                    });
                    start += len;
                }
            }
            Op::Narrow(a, axis, start) => {
                let s_in = self.shape(*a);
                let (outer, ext, inner) = reduce::split_axis(s_in, *axis);
                let len = out.shape()[*axis];
                acc(*a, &mut |da| {
                    for o in 0..outer {
                        let dst = &mut da[(o * ext + start) * inner..(o * ext + start + len) * inner];
                        for (d, &x) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                            *d += x;
                        }
                    }
                });
            }
            Op::Conv2d(x, k, b, geom) | Op::ConvTranspose2d(x, k, b, geom) => {
                let transposed = matches!(node.op, Op::ConvTranspose2d(..));
                let (xd, kd) = (self.value(*x).data(), self.value(*k).data());
                let mut dx = self.needs_grad(*x).then(|| vec![T::zero(); xd.len()]);
                let mut dk = self.needs_grad(*k).then(|| vec![T::zero(); kd.len()]);
                let mut db = b.filter(|&b| self.needs_grad(b)).map(|_| vec![T::zero(); geom.c_out]);
                let run = if transposed { conv::conv_transpose2d_backward::<T> } else { conv::conv2d_backward::<T> };
                run(geom, xd, kd, g, dx.as_deref_mut(), dk.as_deref_mut(), db.as_deref_mut());
                for (v, d) in [(Some(*x), dx), (Some(*k), dk), (*b, db)] {
                    if let (Some(v), Some(d)) = (v, d) {
                        acc(v, &mut |buf| buf.iter_mut().zip(&d).for_each(|(t, &s)| *t += s));
                    }
                }
            }
            Op::Resize(x) => {
                let (n, c, h, w) = self.value(*x).dims4().expect("rank 4");
                let (ho, wo) = (out.shape()[2], out.shape()[3]);
                acc(*x, &mut |dx| resize::bilinear_backward(g, dx, n * c, h, w, ho, wo));
            }
            Op::HaarBand(x, band) => {
                let (n, c, h, w) = self.value(*x).dims4().expect("rank 4");
                acc(*x, &mut |dx| haar::analysis_band_adjoint(g, dx, n * c, h, w, *band));
            }
            Op::HaarSynthesis(bands) => {
                let (n, c, h, w) = out.dims4().expect("rank 4");
                let parts = haar::synthesis_adjoint(g, n * c, h, w);
                for (b, part) in bands.iter().zip(parts) {
                    acc(*b, &mut |db| db.iter_mut().zip(&part).for_each(|(d, &x)| *d += x));
                }
            }
        }
    }
}

/// `(batch, m, k, n, b_shared)` for a product of shapes `a` and `b`.
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(dim_err!("matmul needs rank >= 2 operands, got {:?} and {:?}", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return Err(dim_err!("matmul inner extents differ: {:?} · {:?}", a, b));
    }
    let shared = b.len() == 2;
    if !shared && a[..a.len() - 2] != b[..b.len() - 2] {
        return Err(dim_err!("matmul batch axes differ: {:?} · {:?}", a, b));
    }
    let batch = a[..a.len() - 2].iter().product();
    Ok((batch, m, k, n, shared))
}

fn permute_data<T: Scalar>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![T::zero(); src.len()];
    for_each_strided(&out_shape, &gather, |i, j| out[i] = src[j]);
    out
}
