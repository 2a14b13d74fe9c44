//! Reverse-mode tape.
//!
//! Every operation appends a node holding its value and enough saved state
//! to run its vector-Jacobian product. [`Tape::backward`] walks the nodes in
//! reverse creation order, which is a valid topological order because a node
//! can only reference earlier nodes.

use super::kernels::{self, ConvDims};
use super::shape::{join_nc_spatial, split_nc_spatial, ConvGeom, PoolGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-normalisation behaviour for one call.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, T> {
    /// Normalise with the statistics of the current batch.
    Train,
    /// Normalise with externally tracked running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    /// Elements reduced per channel.
    pub count: usize,
}

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, dims: ConvDims },
    ConvTranspose { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, dims: ConvDims },
    MaxPool { x: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    LeakyRelu { x: Var, slope: T },
    Softmax { x: Var },
    Concat { xs: Vec<Var> },
    Reshape { x: Var },
    ClampLog { x: Var, floor: T },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Scale { x: Var, factor: T },
    AddScalar { x: Var },
    Square { x: Var },
    SumTrailing { x: Var },
    MaxLast { x: Var, argmax: Vec<usize> },
    BroadcastTrailing { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the root with respect to `v`, if `v` participates.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Linear record of a differentiable computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
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

    /// Input whose gradient is wanted (parameters, gradcheck subjects).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient (data, targets, fixed weights).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ----------------------------------------------------------------
    // Network operations
    // ----------------------------------------------------------------

    /// Cross-correlation of `x: [B, C, (D,) H, W]` with `w: [C', C, k…]`
    /// plus optional bias `[C']`.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let rank = geom.spatial_rank;
        let (batch, cin, input) = split_nc_spatial(self.shape(x), rank, "conv")?;
        let wshape = self.shape(w).to_vec();
        let cout = wshape.first().copied().unwrap_or(0);
        let mut expect = vec![cout, cin];
        expect.extend(geom.kernel_dims());
        if wshape != expect {
            return Err(Error::shape(
                "conv",
                format!("weights {wshape:?} incompatible with input {:?} (expected {expect:?})", self.shape(x)),
            ));
        }
        self.check_bias(b, cout, "conv")?;
        let output = geom.conv_out(input)?;
        let dims = ConvDims { batch, in_channels: cin, out_channels: cout, input, output };
        let data = kernels::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &dims,
            &geom,
        );
        let value = Tensor::from_parts(join_nc_spatial(batch, cout, output, rank), data);
        let rg = self.any_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(value, Op::Conv { x, w, b, geom, dims }, rg))
    }

    /// Transposed convolution of `x: [B, C, (D,) H, W]` with `w: [C, C', k…]`.
    pub fn conv_transpose(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let rank = geom.spatial_rank;
        let (batch, cin, input) = split_nc_spatial(self.shape(x), rank, "conv_transpose")?;
        let wshape = self.shape(w).to_vec();
        if wshape.len() != rank + 2 || wshape[0] != cin || wshape[2..] != geom.kernel_dims()[..] {
            return Err(Error::shape(
                "conv_transpose",
                format!("weights {wshape:?} incompatible with input {:?}", self.shape(x)),
            ));
        }
        let cout = wshape[1];
        self.check_bias(b, cout, "conv_transpose")?;
        let output = geom.transpose_out(input)?;
        let dims = ConvDims { batch, in_channels: cin, out_channels: cout, input, output };
        let data = kernels::conv_transpose_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &dims,
            &geom,
        );
        let value = Tensor::from_parts(join_nc_spatial(batch, cout, output, rank), data);
        let rg = self.any_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(value, Op::ConvTranspose { x, w, b, geom, dims }, rg))
    }

    fn check_bias(&self, b: Option<Var>, channels: usize, op: &'static str) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(Error::shape(op, format!("bias {:?} for {channels} output channels", self.shape(b))));
            }
        }
        Ok(())
    }

    /// Max pooling over the two trailing axes of a rank ≥ 3 tensor.
    pub fn max_pool(&mut self, x: Var, geom: PoolGeom) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return Err(Error::shape("max_pool", format!("need at least 3 axes, got {shape:?}")));
        }
        let n = shape.len();
        let input = [shape[n - 2], shape[n - 1]];
        let out = geom.out(input)?;
        let planes: usize = shape[..n - 2].iter().product();
        let (vals, argmax) = kernels::maxpool_forward(self.value(x).data(), planes, input, out, &geom);
        let mut oshape = shape[..n - 2].to_vec();
        oshape.extend_from_slice(&out);
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::from_parts(oshape, vals), Op::MaxPool { x, argmax }, rg))
    }

    /// Per-channel normalisation of `[B, C, …]` followed by `γ·x̂ + β`.
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// update its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
        eps: T,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("batch_norm", format!("need [B, C, …], got {shape:?}")));
        }
        let (batch, ch) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(Error::shape("batch_norm", format!("scale/shift must be [{ch}]")));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let count = batch * inner;
        let (mean, var, train) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![T::zero(); ch];
                let mut var = vec![T::zero(); ch];
                let n = T::from_usize(count).unwrap();
                for c in 0..ch {
                    let mut s = T::zero();
                    for b in 0..batch {
                        s = s + xs[(b * ch + c) * inner..][..inner].iter().copied().sum::<T>();
                    }
                    let m = s / n;
                    let mut v = T::zero();
                    for b in 0..batch {
                        for &xv in &xs[(b * ch + c) * inner..][..inner] {
                            v = v + (xv - m) * (xv - m);
                        }
                    }
                    mean[c] = m;
                    var[c] = v / n;
                }
                (mean, var, true)
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != ch || var.len() != ch {
                    return Err(Error::shape("batch_norm", "running statistics length differs from channels"));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for b in 0..batch {
            for c in 0..ch {
                let off = (b * ch + c) * inner;
                for i in off..off + inner {
                    let h = (xs[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        let stats = train.then(|| BatchStats { mean, var, count });
        let rg = self.any_grad(&[x, gamma, beta]);
        let v = self.push(
            Tensor::from_parts(shape, out),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train },
            rg,
        );
        Ok((v, stats))
    }

    /// `max(x, slope·x)`; the derivative at exactly zero is `slope`.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { slope * v });
        let rg = self.requires_grad(x);
        self.push(value, Op::LeakyRelu { x, slope }, rg)
    }

    /// Softmax over axis 1 of `[B, K, …]`.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("softmax_channels", format!("need [B, K, …], got {shape:?}")));
        }
        let positions: usize = shape[2..].iter().product();
        let data = kernels::softmax_channels(self.value(x).data(), shape[0], shape[1], positions);
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax { x }, rg))
    }

    /// Concatenation along axis 1.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if base.len() < 2 {
            return Err(Error::shape("concat_channels", format!("need [B, C, …], got {base:?}")));
        }
        let mut channels = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..] {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{s:?} cannot be concatenated with {base:?} along channels"),
                ));
            }
            channels += s[1];
        }
        let inner: usize = base[2..].iter().product();
        let batch = base[0];
        let mut data = Vec::with_capacity(batch * channels * inner);
        for b in 0..batch {
            for &v in xs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = base.clone();
        shape[1] = channels;
        let rg = self.any_grad(xs);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat { xs: xs.to_vec() }, rg))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    // ----------------------------------------------------------------
    // Elementwise and reduction operations used by the losses
    // ----------------------------------------------------------------

    /// `ln(max(x, floor))`; no gradient flows where the clamp is active.
    pub fn clamp_log(&mut self, x: Var, floor: T) -> Var {
        let value = self.value(x).map(|v| v.max(floor).ln());
        let rg = self.requires_grad(x);
        self.push(value, Op::ClampLog { x, floor }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Mul { a, b }, rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "div", |x, y| x / y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(v, Op::Div { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.requires_grad(x);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        let rg = self.requires_grad(x);
        self.push(value, Op::AddScalar { x }, rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let rg = self.requires_grad(x);
        self.push(value, Op::Square { x }, rg)
    }

    /// Sums away every axis after the first `keep`; `keep = 0` yields a
    /// one-element tensor.
    pub fn sum_trailing(&mut self, x: Var, keep: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if keep > shape.len() {
            return Err(Error::shape("sum_trailing", format!("cannot keep {keep} axes of {shape:?}")));
        }
        let lead: usize = shape[..keep].iter().product();
        let inner: usize = shape[keep..].iter().product();
        let data: Vec<T> = self.value(x).data().chunks(inner).map(|c| c.iter().copied().sum()).collect();
        debug_assert_eq!(data.len(), lead);
        let oshape = if keep == 0 { vec![1] } else { shape[..keep].to_vec() };
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::from_parts(oshape, data), Op::SumTrailing { x }, rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        self.sum_trailing(x, 0).expect("keeping zero axes is always valid")
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum_all(x);
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// Maximum over the last axis; the gradient goes to the first maximum.
    pub fn max_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("max_last", format!("need at least 2 axes, got {shape:?}")));
        }
        let last = *shape.last().unwrap();
        let mut vals = Vec::new();
        let mut argmax = Vec::new();
        for (row, chunk) in self.value(x).data().chunks(last).enumerate() {
            let mut best = 0;
            for (i, &v) in chunk.iter().enumerate() {
                if v > chunk[best] {
                    best = i;
                }
            }
            vals.push(chunk[best]);
            argmax.push(row * last + best);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::from_parts(shape[..shape.len() - 1].to_vec(), vals), Op::MaxLast { x, argmax }, rg))
    }

    /// Repeats `x` over new trailing axes so it takes `shape`, whose leading
    /// axes must equal the shape of `x`.
    pub fn broadcast_trailing(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if shape.len() < xs.len() || shape[..xs.len()] != xs[..] {
            return Err(Error::shape("broadcast_trailing", format!("{xs:?} does not lead {shape:?}")));
        }
        let inner: usize = shape[xs.len()..].iter().product();
        let mut data = Vec::with_capacity(self.value(x).numel() * inner);
        for &v in self.value(x).data() {
            data.extend(std::iter::repeat_n(v, inner));
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), data), Op::BroadcastTrailing { x }, rg))
    }

    // ----------------------------------------------------------------
    // Backward
    // ----------------------------------------------------------------

    /// Back-propagates from a one-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape().to_vec(), T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape().to_vec()));
        f(slot.data_mut());
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom, dims } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = self.take_buffer(grads, *x);
                let mut dw = self.take_buffer(grads, *w);
                let mut db = b.and_then(|b| self.take_buffer(grads, b));
                kernels::conv_backward(
                    xv,
                    wv,
                    gd,
                    dims,
                    geom,
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                self.restore(grads, *x, dx);
                self.restore(grads, *w, dw);
                if let Some(b) = b {
                    self.restore(grads, *b, db);
                }
            }
            Op::ConvTranspose { x, w, b, geom, dims } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = self.take_buffer(grads, *x);
                let mut dw = self.take_buffer(grads, *w);
                let mut db = b.and_then(|b| self.take_buffer(grads, b));
                kernels::conv_transpose_backward(
                    xv,
                    wv,
                    gd,
                    dims,
                    geom,
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                self.restore(grads, *x, dx);
                self.restore(grads, *w, dw);
                if let Some(b) = b {
                    self.restore(grads, *b, db);
                }
            }
            Op::MaxPool { x, argmax } => self.accumulate(grads, *x, |dx| {
                for (&src, &gv) in argmax.iter().zip(gd) {
                    dx[src] += gv;
                }
            }),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let shape = node.value.shape();
                let (batch, ch) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); ch];
                let mut dbeta = vec![T::zero(); ch];
                for b in 0..batch {
                    for c in 0..ch {
                        let off = (b * ch + c) * inner;
                        for k in off..off + inner {
                            dgamma[c] += gd[k] * xhat[k];
                            dbeta[c] += gd[k];
                        }
                    }
                }
                self.accumulate(grads, *gamma, |d| d.iter_mut().zip(&dgamma).for_each(|(a, &v)| *a += v));
                self.accumulate(grads, *beta, |d| d.iter_mut().zip(&dbeta).for_each(|(a, &v)| *a += v));
                let n = T::from_usize(batch * inner).unwrap();
                self.accumulate(grads, *x, |dx| {
                    for b in 0..batch {
                        for c in 0..ch {
                            let off = (b * ch + c) * inner;
                            for k in off..off + inner {
                                let dxhat = gd[k] * gam[c];
                                dx[k] += if *train {
                                    // (N·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)) · inv_std / N, with dx̂ = g·γ
                                    inv_std[c] / n * (n * dxhat - dbeta[c] * gam[c] - xhat[k] * dgamma[c] * gam[c])
                                } else {
                                    dxhat * inv_std[c]
                                };
                            }
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(gd).zip(xv) {
                        *d += if v > T::zero() { gv } else { *slope * gv };
                    }
                });
            }
            Op::Softmax { x } => {
                let shape = node.value.shape();
                let (batch, k) = (shape[0], shape[1]);
                let positions: usize = shape[2..].iter().product();
                let p = node.value.data();
                self.accumulate(grads, *x, |dx| {
                    for b in 0..batch {
                        let base = b * k * positions;
                        for pos in 0..positions {
                            let mut dot = T::zero();
                            for c in 0..k {
                                let j = base + c * positions + pos;
                                dot += gd[j] * p[j];
                            }
                            for c in 0..k {
                                let j = base + c * positions + pos;
                                dx[j] += p[j] * (gd[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::Concat { xs } => {
                let shape = node.value.shape();
                let batch = shape[0];
                let total = shape[1];
                let inner: usize = shape[2..].iter().product();
                let mut start = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    self.accumulate(grads, v, |dx| {
                        for b in 0..batch {
                            let src = &gd[(b * total + start) * inner..][..c * inner];
                            for (d, &s) in dx[b * c * inner..][..c * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    start += c;
                }
            }
            Op::Reshape { x } => self.accumulate(grads, *x, |dx| add_into(dx, gd)),
            Op::ClampLog { x, floor } => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(gd).zip(xv) {
                        if v > *floor {
                            *d += gv / v;
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |d| add_into(d, gd));
                self.accumulate(grads, *b, |d| add_into(d, gd));
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, |d| add_into(d, gd));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(gd).for_each(|(d, &g)| *d -= g));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    d.iter_mut().zip(gd).zip(bv).for_each(|((d, &g), &y)| *d += g * y)
                });
                self.accumulate(grads, *b, |d| {
                    d.iter_mut().zip(gd).zip(av).for_each(|((d, &g), &x)| *d += g * x)
                });
            }
            Op::Div { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |d| {
                    d.iter_mut().zip(gd).zip(bv).for_each(|((d, &g), &y)| *d += g / y)
                });
                self.accumulate(grads, *b, |d| {
                    for (((d, &g), &x), &y) in d.iter_mut().zip(gd).zip(av).zip(bv) {
                        *d -= g * x / (y * y);
                    }
                });
            }
            Op::Scale { x, factor } => self.accumulate(grads, *x, |d| {
                d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g * *factor)
            }),
            Op::AddScalar { x } => self.accumulate(grads, *x, |d| add_into(d, gd)),
            Op::Square { x } => {
                let xv = self.value(*x).data();
                let two = T::one() + T::one();
                self.accumulate(grads, *x, |d| {
                    d.iter_mut().zip(gd).zip(xv).for_each(|((d, &g), &v)| *d += two * v * g)
                });
            }
            Op::SumTrailing { x } => {
                let inner = self.value(*x).numel() / node.value.numel();
                self.accumulate(grads, *x, |d| {
                    for (chunk, &gv) in d.chunks_mut(inner).zip(gd) {
                        chunk.iter_mut().for_each(|v| *v += gv);
                    }
                });
            }
            Op::MaxLast { x, argmax } => self.accumulate(grads, *x, |d| {
                for (&src, &gv) in argmax.iter().zip(gd) {
                    d[src] += gv;
                }
            }),
            Op::BroadcastTrailing { x } => {
                let inner = node.value.numel() / self.value(*x).numel();
                self.accumulate(grads, *x, |d| {
                    for (dv, chunk) in d.iter_mut().zip(gd.chunks(inner)) {
                        *dv += chunk.iter().copied().sum::<T>();
                    }
                });
            }
        }
    }

    fn take_buffer(&self, grads: &mut [Option<Tensor<T>>], v: Var) -> Option<Tensor<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(grads[v.0].take().unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape().to_vec())))
    }

    fn restore(&self, grads: &mut [Option<Tensor<T>>], v: Var, buf: Option<Tensor<T>>) {
        if buf.is_some() {
            grads[v.0] = buf;
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
