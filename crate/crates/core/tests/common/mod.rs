//! Brute-force reference implementations. Each sums in ascending index
//! order so the f64 kernels can be compared bit for bit.

#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvrss::tensor::{ConvGeom, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `[B, C, D, H, W]` view of a rank-4 or rank-5 shape.
fn as_5d(shape: &[usize]) -> [usize; 5] {
    match *shape {
        [b, c, h, w] => [b, c, 1, h, w],
        [b, c, d, h, w] => [b, c, d, h, w],
        _ => panic!("unsupported rank {shape:?}"),
    }
}

fn out_extent(input: usize, k: usize, s: usize, p: usize, d: usize) -> usize {
    (input + 2 * p - d * (k - 1) - 1) / s + 1
}

/// Input coordinate of output `o` and tap `k`, if inside the input.
fn tap(o: usize, k: usize, g: &ConvGeom, axis: usize, input: usize) -> Option<usize> {
    let i = (o * g.stride[axis] + k * g.dilation[axis]) as isize - g.padding[axis] as isize;
    (0..input as isize).contains(&i).then_some(i as usize)
}

/// Cross-correlation by direct summation over `(c, kd, kh, kw)`.
pub fn conv_loop(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&Tensor<f64>>, g: &ConvGeom) -> Tensor<f64> {
    let [bn, cin, id, ih, iw] = as_5d(x.shape());
    let cout = w.shape()[0];
    let [kd, kh, kw] = g.kernel;
    let od = out_extent(id, kd, g.stride[0], g.padding[0], g.dilation[0]);
    let oh = out_extent(ih, kh, g.stride[1], g.padding[1], g.dilation[1]);
    let ow = out_extent(iw, kw, g.stride[2], g.padding[2], g.dilation[2]);
    let xs = x.data();
    let ws = w.data();
    let mut out = Vec::with_capacity(bn * cout * od * oh * ow);
    for b in 0..bn {
        for co in 0..cout {
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut s = 0.0;
                        for c in 0..cin {
                            for a in 0..kd {
                                for e in 0..kh {
                                    for f in 0..kw {
                                        let wv = ws[(((co * cin + c) * kd + a) * kh + e) * kw + f];
                                        let xv = match (tap(z, a, g, 0, id), tap(y, e, g, 1, ih), tap(xo, f, g, 2, iw)) {
                                            (Some(zi), Some(yi), Some(xi)) => xs[(((b * cin + c) * id + zi) * ih + yi) * iw + xi],
                                            _ => 0.0,
                                        };
                                        s += wv * xv;
                                    }
                                }
                            }
                        }
                        if let Some(bias) = bias {
                            s += bias.data()[co];
                        }
                        out.push(s);
                    }
                }
            }
        }
    }
    let shape = if x.shape().len() == 4 { vec![bn, cout, oh, ow] } else { vec![bn, cout, od, oh, ow] };
    Tensor::new(shape, out).unwrap()
}

/// Gradient of `Σ out ⊙ gout` with respect to the weights of [`conv_loop`].
pub fn conv_weight_grad_loop(x: &Tensor<f64>, gout: &Tensor<f64>, wshape: &[usize], g: &ConvGeom) -> Tensor<f64> {
    let [bn, cin, id, ih, iw] = as_5d(x.shape());
    let [_, cout, od, oh, ow] = as_5d(gout.shape());
    let [kd, kh, kw] = g.kernel;
    let mut dw = vec![0.0; wshape.iter().product()];
    for co in 0..cout {
        for c in 0..cin {
            for a in 0..kd {
                for e in 0..kh {
                    for f in 0..kw {
                        let mut s = 0.0;
                        for b in 0..bn {
                            for z in 0..od {
                                for y in 0..oh {
                                    for xo in 0..ow {
                                        if let (Some(zi), Some(yi), Some(xi)) = (tap(z, a, g, 0, id), tap(y, e, g, 1, ih), tap(xo, f, g, 2, iw)) {
                                            s += gout.data()[(((b * cout + co) * od + z) * oh + y) * ow + xo]
                                                * x.data()[(((b * cin + c) * id + zi) * ih + yi) * iw + xi];
                                        }
                                    }
                                }
                            }
                        }
                        dw[(((co * cin + c) * kd + a) * kh + e) * kw + f] = s;
                    }
                }
            }
        }
    }
    Tensor::new(wshape.to_vec(), dw).unwrap()
}

/// Transposed convolution as a scatter-add: every input element spreads
/// `x · w` over the outputs its taps reach. Contributions are visited in
/// `(c_out, taps, input position)` order with the sum over input channels
/// formed first.
pub fn conv_transpose_loop(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&Tensor<f64>>, g: &ConvGeom) -> Tensor<f64> {
    let [bn, cin, id, ih, iw] = as_5d(x.shape());
    let cout = w.shape()[1];
    let [kd, kh, kw] = g.kernel;
    let full = |i: usize, axis: usize, k: usize| (i - 1) * g.stride[axis] + g.dilation[axis] * (k - 1) + 1 - 2 * g.padding[axis];
    let (od, oh, ow) = (full(id, 0, kd), full(ih, 1, kh), full(iw, 2, kw));
    let mut out = vec![0.0; bn * cout * od * oh * ow];
    for b in 0..bn {
        for co in 0..cout {
            for a in 0..kd {
                for e in 0..kh {
                    for f in 0..kw {
                        for z in 0..id {
                            for y in 0..ih {
                                for xi in 0..iw {
                                    let (Some(zo), Some(yo), Some(xo)) = (tap(z, a, g, 0, od), tap(y, e, g, 1, oh), tap(xi, f, g, 2, ow)) else {
                                        continue;
                                    };
                                    let mut s = 0.0;
                                    for c in 0..cin {
                                        s += w.data()[(((c * cout + co) * kd + a) * kh + e) * kw + f]
                                            * x.data()[(((b * cin + c) * id + z) * ih + y) * iw + xi];
                                    }
                                    out[(((b * cout + co) * od + zo) * oh + yo) * ow + xo] += s;
                                }
                            }
                        }
                    }
                }
            }
            if let Some(bias) = bias {
                for v in &mut out[(b * cout + co) * od * oh * ow..][..od * oh * ow] {
                    *v += bias.data()[co];
                }
            }
        }
    }
    let shape = if x.shape().len() == 4 { vec![bn, cout, oh, ow] } else { vec![bn, cout, od, oh, ow] };
    Tensor::new(shape, out).unwrap()
}

/// Max pooling with the first maximum in row-major window order; returns
/// the pooled map and the flat source index of every output.
pub fn maxpool_loop(x: &Tensor<f64>, k: [usize; 2], s: [usize; 2]) -> (Tensor<f64>, Vec<usize>) {
    let shape = x.shape();
    let n = shape.len();
    let (ih, iw) = (shape[n - 2], shape[n - 1]);
    let (oh, ow) = ((ih - k[0]) / s[0] + 1, (iw - k[1]) / s[1] + 1);
    let planes: usize = shape[..n - 2].iter().product();
    let mut vals = Vec::new();
    let mut idx = Vec::new();
    for p in 0..planes {
        for y in 0..oh {
            for xo in 0..ow {
                let mut best: Option<usize> = None;
                for a in 0..k[0] {
                    for b in 0..k[1] {
                        let i = p * ih * iw + (y * s[0] + a) * iw + xo * s[1] + b;
                        if best.is_none_or(|j| x.data()[i] > x.data()[j]) {
                            best = Some(i);
                        }
                    }
                }
                let j = best.unwrap();
                vals.push(x.data()[j]);
                idx.push(j);
            }
        }
    }
    let mut oshape = shape[..n - 2].to_vec();
    oshape.extend([oh, ow]);
    (Tensor::new(oshape, vals).unwrap(), idx)
}

/// `X[k] = Σ_n x[n] e^{−2πi kn/N}`.
pub fn dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * j % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

/// `10·log10(max(mean over the absent axis of |X|², 1e-12))` for one view
/// of a `range × angle × doppler` cube. `keep` names the two kept axes.
pub fn view_direct(cube: &[Complex64], dims: [usize; 3], keep: [usize; 2]) -> Vec<f64> {
    let drop = 3 - keep[0] - keep[1];
    let mut out = Vec::new();
    for i in 0..dims[keep[0]] {
        for j in 0..dims[keep[1]] {
            let mut s = 0.0;
            for l in 0..dims[drop] {
                let mut at = [0; 3];
                at[keep[0]] = i;
                at[keep[1]] = j;
                at[drop] = l;
                s += cube[(at[0] * dims[1] + at[1]) * dims[2] + at[2]].norm_sqr();
            }
            out.push(10.0 * (s / dims[drop] as f64).max(1e-12).log10());
        }
    }
    out
}

/// `−(1/K) Σ_k w_k Σ_{m,n} y log max(p, 1e-12)` over `[K, M, N]` maps.
pub fn wce_loop(p: &Tensor<f64>, y: &Tensor<f64>, w: &[f64]) -> f64 {
    let [k, m, n] = p.shape().try_into().unwrap();
    let mut total = 0.0;
    for c in 0..k {
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..n {
                s += y.at(&[c, i, j]) * p.at(&[c, i, j]).max(1e-12).ln();
            }
        }
        total += w[c] * s;
    }
    -total / k as f64
}

/// `mean_k 1 − (2 Σ y p + s) / (Σ y² + Σ p² + s)` with `s = 1e-6`.
pub fn soft_dice_loop(p: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let [k, m, n] = p.shape().try_into().unwrap();
    let mut total = 0.0;
    for c in 0..k {
        let (mut inter, mut yy, mut pp) = (0.0, 0.0, 0.0);
        for i in 0..m {
            for j in 0..n {
                let (a, b) = (y.at(&[c, i, j]), p.at(&[c, i, j]));
                inter += a * b;
                yy += a * a;
                pp += b * b;
            }
        }
        total += 1.0 - (2.0 * inter + 1e-6) / (yy + pp + 1e-6);
    }
    total / k as f64
}

/// Mean over `(k, r)` of the squared difference between the Doppler-max
/// of `p_rd: [K, R, D]` and the angle-max of `p_ra: [K, R, A]`.
pub fn coherence_loop(p_rd: &Tensor<f64>, p_ra: &Tensor<f64>) -> f64 {
    let [k, r, d] = p_rd.shape().try_into().unwrap();
    let a = p_ra.shape()[2];
    let mut total = 0.0;
    for c in 0..k {
        for i in 0..r {
            let mrd = (0..d).map(|j| p_rd.at(&[c, i, j])).fold(f64::NEG_INFINITY, f64::max);
            let mra = (0..a).map(|j| p_ra.at(&[c, i, j])).fold(f64::NEG_INFINITY, f64::max);
            total += (mrd - mra).powi(2);
        }
    }
    total / (k * r) as f64
}

/// Scalar Adam with bias correction, one parameter.
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub t: i32,
}

impl ScalarAdam {
    pub fn step(&mut self, x: f64, g: f64, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let mh = self.m / (1.0 - b1.powi(self.t));
        let vh = self.v / (1.0 - b2.powi(self.t));
        x - lr * mh / (vh.sqrt() + eps)
    }
}
