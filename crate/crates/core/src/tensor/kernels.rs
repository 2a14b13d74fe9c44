//! Raw kernels over flat row-major buffers.
//!
//! Convolutions are lowered to im2col + GEMM. Column rows are ordered
//! `(channel, kd, kh, kw)` and columns `(od, oh, ow)`, so for the f64 build
//! each output element is the ascending-order sum over channel and kernel
//! taps, followed by the bias.

use super::shape::{ConvGeom, PoolGeom};
use super::{MatRef, Scalar};

/// Fills `col` (`channels·taps × out_positions`) from one sample `x`
/// (`channels × d × h × w`).
pub fn im2col<T: Scalar>(x: &[T], channels: usize, input: [usize; 3], out: [usize; 3], g: &ConvGeom, col: &mut [T]) {
    let [id, ih, iw] = input;
    let [od, oh, ow] = out;
    let positions = od * oh * ow;
    debug_assert_eq!(col.len(), channels * g.taps() * positions);
    let mut row = 0;
    for c in 0..channels {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kd in 0..g.kernel[0] {
            for kh in 0..g.kernel[1] {
                for kw in 0..g.kernel[2] {
                    let dst = &mut col[row * positions..(row + 1) * positions];
                    let (w_lo, w_hi) = valid_range(ow, iw, g.stride[2], kw * g.dilation[2], g.padding[2]);
                    for z in 0..od {
                        let zi = (z * g.stride[0] + kd * g.dilation[0]) as isize - g.padding[0] as isize;
                        for y in 0..oh {
                            let yi = (y * g.stride[1] + kh * g.dilation[1]) as isize - g.padding[1] as isize;
                            let seg = &mut dst[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                            if zi < 0 || zi >= id as isize || yi < 0 || yi >= ih as isize {
                                seg.fill(T::zero());
                                continue;
                            }
                            let src = &xc[(zi as usize * ih + yi as usize) * iw..][..iw];
                            seg[..w_lo].fill(T::zero());
                            seg[w_hi..].fill(T::zero());
                            let off = kw * g.dilation[2];
                            for (xo, v) in seg[w_lo..w_hi].iter_mut().enumerate() {
                                let xi = (w_lo + xo) * g.stride[2] + off - g.padding[2];
                                *v = src[xi];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-adds `col` back into `x` (the adjoint of [`im2col`]).
///
/// `x` must be zeroed by the caller when a fresh result is wanted. Rows are
/// visited in `(channel, kd, kh, kw)` order and positions ascending.
pub fn col2im<T: Scalar>(col: &[T], channels: usize, input: [usize; 3], out: [usize; 3], g: &ConvGeom, x: &mut [T]) {
    let [id, ih, iw] = input;
    let [od, oh, ow] = out;
    let positions = od * oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let xc = &mut x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kd in 0..g.kernel[0] {
            for kh in 0..g.kernel[1] {
                for kw in 0..g.kernel[2] {
                    let src = &col[row * positions..(row + 1) * positions];
                    let (w_lo, w_hi) = valid_range(ow, iw, g.stride[2], kw * g.dilation[2], g.padding[2]);
                    for z in 0..od {
                        let zi = (z * g.stride[0] + kd * g.dilation[0]) as isize - g.padding[0] as isize;
                        if zi < 0 || zi >= id as isize {
                            continue;
                        }
                        for y in 0..oh {
                            let yi = (y * g.stride[1] + kh * g.dilation[1]) as isize - g.padding[1] as isize;
                            if yi < 0 || yi >= ih as isize {
                                continue;
                            }
                            let seg = &src[(z * oh + y) * ow..(z * oh + y + 1) * ow];
                            let dst = &mut xc[(zi as usize * ih + yi as usize) * iw..][..iw];
                            let off = kw * g.dilation[2];
                            for xo in w_lo..w_hi {
                                let xi = xo * g.stride[2] + off - g.padding[2];
                                dst[xi] += seg[xo];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Output positions `[lo, hi)` along one axis whose input tap
/// `o·stride + offset − pad` lands inside `[0, input)`.
fn valid_range(out: usize, input: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize) {
    // o·stride + offset ≥ pad
    let lo = if offset >= pad { 0 } else { (pad - offset).div_ceil(stride) };
    // o·stride + offset − pad ≤ input − 1
    let limit = input + pad;
    let hi = if offset >= limit { 0 } else { (limit - offset - 1) / stride + 1 };
    let hi = hi.min(out);
    (lo.min(hi), hi)
}

/// Shapes of one convolution call in the `[d, h, w]` convention.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvDims {
    fn in_len(&self) -> usize {
        self.in_channels * self.input.iter().product::<usize>()
    }
    fn out_positions(&self) -> usize {
        self.output.iter().product()
    }
}

/// Forward convolution: `out[b] = W · im2col(x[b]) + bias`.
pub fn conv_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, d: &ConvDims, g: &ConvGeom) -> Vec<T> {
    let p = d.out_positions();
    let ck = d.in_channels * g.taps();
    let mut out = vec![T::zero(); d.batch * d.out_channels * p];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); ck * p] };
    for b in 0..d.batch {
        let xb = &x[b * d.in_len()..(b + 1) * d.in_len()];
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, d.in_channels, d.input, d.output, g, &mut col);
            &col
        };
        let ob = &mut out[b * d.out_channels * p..(b + 1) * d.out_channels * p];
        T::gemm(d.out_channels, ck, p, MatRef::rows(w, ck), MatRef::rows(cols, p), ob, false);
        if let Some(bias) = bias {
            add_channel_bias(ob, bias, p);
        }
    }
    out
}

/// Gradients of [`conv_forward`]; each output is accumulated only when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    d: &ConvDims,
    g: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let p = d.out_positions();
    let ck = d.in_channels * g.taps();
    let mut col = vec![T::zero(); if g.is_pointwise() { 0 } else { ck * p }];
    let mut dcol = vec![T::zero(); if dx.is_some() && !g.is_pointwise() { ck * p } else { 0 }];
    for b in 0..d.batch {
        let gb = &gout[b * d.out_channels * p..(b + 1) * d.out_channels * p];
        let xb = &x[b * d.in_len()..(b + 1) * d.in_len()];
        if let Some(dw) = dw.as_deref_mut() {
            let cols: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, d.in_channels, d.input, d.output, g, &mut col);
                &col
            };
            // dW[Cout, CK] += gout[Cout, P] · colᵀ[P, CK]
            T::gemm(d.out_channels, p, ck, MatRef::rows(gb, p), MatRef::transposed(cols, p), dw, true);
        }
        if let Some(db) = db.as_deref_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += gb[co * p..(co + 1) * p].iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * d.in_len()..(b + 1) * d.in_len()];
            // dcol[CK, P] = Wᵀ[CK, Cout] · gout[Cout, P]
            if g.is_pointwise() {
                T::gemm(ck, d.out_channels, p, MatRef::transposed(w, ck), MatRef::rows(gb, p), dxb, true);
            } else {
                T::gemm(ck, d.out_channels, p, MatRef::transposed(w, ck), MatRef::rows(gb, p), &mut dcol, false);
                col2im(&dcol, d.in_channels, d.input, d.output, g, dxb);
            }
        }
    }
}

/// Transposed convolution with weights `[Cin, Cout, k…]`:
/// `out[b] = col2im(Wᵀ · x[b]) + bias`, the adjoint of a convolution mapping
/// `out` extents to `x` extents.
///
/// In `d`, `input` / `in_channels` describe `x` and `output` /
/// `out_channels` the (larger) result.
pub fn conv_transpose_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, d: &ConvDims, g: &ConvGeom) -> Vec<T> {
    let pin: usize = d.input.iter().product();
    let pout = d.out_positions();
    let ck = d.out_channels * g.taps();
    let mut out = vec![T::zero(); d.batch * d.out_channels * pout];
    let mut col = vec![T::zero(); ck * pin];
    for b in 0..d.batch {
        let xb = &x[b * d.in_len()..(b + 1) * d.in_len()];
        T::gemm(ck, d.in_channels, pin, MatRef::transposed(w, ck), MatRef::rows(xb, pin), &mut col, false);
        let ob = &mut out[b * d.out_channels * pout..(b + 1) * d.out_channels * pout];
        col2im(&col, d.out_channels, d.output, d.input, g, ob);
        if let Some(bias) = bias {
            add_channel_bias(ob, bias, pout);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    d: &ConvDims,
    g: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let pin: usize = d.input.iter().product();
    let pout = d.out_positions();
    let ck = d.out_channels * g.taps();
    let mut col = vec![T::zero(); ck * pin];
    for b in 0..d.batch {
        let gb = &gout[b * d.out_channels * pout..(b + 1) * d.out_channels * pout];
        if let Some(db) = db.as_deref_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += gb[co * pout..(co + 1) * pout].iter().copied().sum::<T>();
            }
        }
        if dx.is_none() && dw.is_none() {
            continue;
        }
        im2col(gb, d.out_channels, d.output, d.input, g, &mut col);
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * d.in_len()..(b + 1) * d.in_len()];
            // dx[Cin, Pin] += W[Cin, CK] · col[CK, Pin]
            T::gemm(d.in_channels, ck, pin, MatRef::rows(w, ck), MatRef::rows(&col, pin), dxb, true);
        }
        if let Some(dw) = dw.as_deref_mut() {
            let xb = &x[b * d.in_len()..(b + 1) * d.in_len()];
            // dW[Cin, CK] += x[Cin, Pin] · colᵀ[Pin, CK]
            T::gemm(d.in_channels, pin, ck, MatRef::rows(xb, pin), MatRef::transposed(&col, pin), dw, true);
        }
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], positions: usize) {
    for (chunk, &bv) in out.chunks_mut(positions).zip(bias) {
        for v in chunk {
            *v = *v + bv;
        }
    }
}

/// Max pooling over the two trailing axes of `planes × h × w`.
///
/// Returns the pooled values and, per output element, the flat input index
/// of the first maximum in row-major window order.
pub fn maxpool_forward<T: Scalar>(x: &[T], planes: usize, input: [usize; 2], out: [usize; 2], g: &PoolGeom) -> (Vec<T>, Vec<usize>) {
    let [ih, iw] = input;
    let [oh, ow] = out;
    let mut vals = Vec::with_capacity(planes * oh * ow);
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * ih * iw;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + (y * g.stride[0]) * iw + xo * g.stride[1];
                for ky in 0..g.kernel[0] {
                    for kx in 0..g.kernel[1] {
                        let i = base + (y * g.stride[0] + ky) * iw + xo * g.stride[1] + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                vals.push(x[best]);
                idx.push(best);
            }
        }
    }
    (vals, idx)
}

/// Numerically stable softmax along axis 1 of `[B, K, positions]`.
pub fn softmax_channels<T: Scalar>(x: &[T], batch: usize, k: usize, positions: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        let base = b * k * positions;
        for p in 0..positions {
            let mut m = T::neg_infinity();
            for c in 0..k {
                m = m.max(x[base + c * positions + p]);
            }
            let mut total = T::zero();
            for c in 0..k {
                let e = (x[base + c * positions + p] - m).exp();
                out[base + c * positions + p] = e;
                total = total + e;
            }
            for c in 0..k {
                let v = &mut out[base + c * positions + p];
                *v = *v / total;
            }
        }
    }
    out
}
