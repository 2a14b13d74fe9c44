use rand::Rng;

use crate::error::{Error, Result};
use crate::radar::ViewFrame;
use crate::tensor::{Scalar, Tensor};

/// Where the stacked frames go.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputLayout {
    /// `[q+1, H, W]`: frames as channels (2D models).
    Channels,
    /// `[1, q+1, H, W]`: frames as depth (3D encoders).
    Depth,
}

/// Temporally stacked inputs ending at frame `t`, with the labels of `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub rd_in: Tensor<T>,
    pub ra_in: Tensor<T>,
    pub ad_in: Option<Tensor<T>>,
    /// `n_range × n_doppler` class indices.
    pub rd_labels: Tensor<u8>,
    /// `n_range × n_angle` class indices.
    pub ra_labels: Tensor<u8>,
    pub t: usize,
}

impl<T: Scalar> Sample<T> {
    /// One-hot `K × n_range × n_doppler` target.
    pub fn rd_target(&self, k: usize) -> Result<Tensor<T>> {
        one_hot(&self.rd_labels, k)
    }

    /// One-hot `K × n_range × n_angle` target.
    pub fn ra_target(&self, k: usize) -> Result<Tensor<T>> {
        one_hot(&self.ra_labels, k)
    }
}

/// `[..., H, W]` labels to `[..., K, H, W]` one-hot planes.
pub fn one_hot<T: Scalar>(labels: &Tensor<u8>, k: usize) -> Result<Tensor<T>> {
    let shape = labels.shape();
    if shape.len() < 2 {
        return Err(Error::shape("one_hot", format!("labels need ≥ 2 dims, got {shape:?}")));
    }
    let plane: usize = shape[shape.len() - 2..].iter().product();
    let lead: usize = shape[..shape.len() - 2].iter().product();
    let mut out = vec![T::zero(); lead * k * plane];
    for (b, chunk) in labels.data().chunks(plane).enumerate() {
        for (i, &c) in chunk.iter().enumerate() {
            if c as usize >= k {
                return Err(Error::Data(format!("label {c} outside 0..{k}")));
            }
            out[(b * k + c as usize) * plane + i] = T::one();
        }
    }
    let mut out_shape = shape[..shape.len() - 2].to_vec();
    out_shape.push(k);
    out_shape.extend_from_slice(&shape[shape.len() - 2..]);
    Ok(Tensor::from_parts(out_shape, out))
}

fn stack_views<T: Scalar>(frames: &[ViewFrame], view: impl Fn(&ViewFrame) -> &Tensor<f32>, layout: InputLayout) -> Tensor<T> {
    let plane = view(&frames[0]).shape().to_vec();
    let mut data = Vec::with_capacity(frames.len() * plane.iter().product::<usize>());
    for f in frames {
        data.extend(view(f).data().iter().map(|&v| T::from_f64_lossy(f64::from(v))));
    }
    let mut shape = match layout {
        InputLayout::Channels => vec![frames.len()],
        InputLayout::Depth => vec![1, frames.len()],
    };
    shape.extend(plane);
    Tensor::from_parts(shape, data)
}

/// Stacks frames `t − q ..= t` of a sequence; `Ok(None)` when `t < q`.
pub fn stack_sample<T: Scalar>(
    frames: &[ViewFrame],
    t: usize,
    q: usize,
    layout: InputLayout,
    with_ad: bool,
) -> Result<Option<Sample<T>>> {
    if t < q {
        return Ok(None);
    }
    if t >= frames.len() {
        return Err(Error::Data(format!("frame {t} beyond a {}-frame sequence", frames.len())));
    }
    let window = &frames[t - q..=t];
    Ok(Some(Sample {
        rd_in: stack_views(window, |f| &f.rd, layout),
        ra_in: stack_views(window, |f| &f.ra, layout),
        ad_in: with_ad.then(|| stack_views(window, |f| &f.ad, layout)),
        rd_labels: frames[t].rd_mask.clone(),
        ra_labels: frames[t].ra_mask.clone(),
        t,
    }))
}

/// Which axes to mirror.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flips {
    pub range: bool,
    pub doppler: bool,
    pub angle: bool,
}

/// Mirrors the last axis (`last`) or the one before it.
fn flip_axis<U: Copy>(t: &Tensor<U>, last: bool) -> Tensor<U> {
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let mut out = t.clone();
    for (src, dst) in t.data().chunks(h * w).zip(out.data_mut().chunks_mut(h * w)) {
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = if last { (i, w - 1 - j) } else { (h - 1 - i, j) };
                dst[i * w + j] = src[si * w + sj];
            }
        }
    }
    out
}

/// Mirrors inputs and labels together. Range is the second-to-last axis of
/// RD, RA and both masks; Doppler is the last axis of RD, AD and the RD
/// mask; angle is the last axis of RA and the RA mask and the
/// second-to-last axis of AD.
pub fn apply_flips<T: Copy>(s: &Sample<T>, f: Flips) -> Sample<T> {
    let mut out = s.clone();
    if f.range {
        out.rd_in = flip_axis(&out.rd_in, false);
        out.ra_in = flip_axis(&out.ra_in, false);
        out.rd_labels = flip_axis(&out.rd_labels, false);
        out.ra_labels = flip_axis(&out.ra_labels, false);
    }
    if f.doppler {
        out.rd_in = flip_axis(&out.rd_in, true);
        out.ad_in = out.ad_in.as_ref().map(|a| flip_axis(a, true));
        out.rd_labels = flip_axis(&out.rd_labels, true);
    }
    if f.angle {
        out.ra_in = flip_axis(&out.ra_in, true);
        out.ad_in = out.ad_in.as_ref().map(|a| flip_axis(a, false));
        out.ra_labels = flip_axis(&out.ra_labels, true);
    }
    out
}

/// Three independent fair coins, one per axis.
pub fn augment_flip<T: Copy, R: Rng + ?Sized>(s: &Sample<T>, rng: &mut R) -> Sample<T> {
    let f = Flips { range: rng.random_bool(0.5), doppler: rng.random_bool(0.5), angle: rng.random_bool(0.5) };
    apply_flips(s, f)
}

/// Samples stacked along a new leading batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub rd_in: Tensor<T>,
    pub ra_in: Tensor<T>,
    pub ad_in: Option<Tensor<T>>,
    /// `[B, n_range, n_doppler]`.
    pub rd_labels: Tensor<u8>,
    /// `[B, n_range, n_angle]`.
    pub ra_labels: Tensor<u8>,
}

impl<T: Scalar> Batch<T> {
    pub fn collate(samples: &[Sample<T>]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract("cannot collate an empty batch".into()));
        }
        let stack = |f: &dyn Fn(&Sample<T>) -> Tensor<T>| Tensor::stack(&samples.iter().map(f).collect::<Vec<_>>());
        let labels = |f: &dyn Fn(&Sample<T>) -> &Tensor<u8>| -> Result<Tensor<u8>> {
            let first = f(&samples[0]).shape().to_vec();
            let mut data = Vec::new();
            for s in samples {
                if f(s).shape() != first.as_slice() {
                    return Err(Error::shape("collate", "label extents differ within the batch"));
                }
                data.extend_from_slice(f(s).data());
            }
            let mut shape = vec![samples.len()];
            shape.extend(first);
            Tensor::new(shape, data)
        };
        let ad_in = match samples.iter().map(|s| s.ad_in.clone()).collect::<Option<Vec<_>>>() {
            Some(ads) => Some(Tensor::stack(&ads)?),
            None => None,
        };
        Ok(Batch {
            rd_in: stack(&|s| s.rd_in.clone())?,
            ra_in: stack(&|s| s.ra_in.clone())?,
            ad_in,
            rd_labels: labels(&|s| &s.rd_labels)?,
            ra_labels: labels(&|s| &s.ra_labels)?,
        })
    }

    pub fn len(&self) -> usize {
        self.rd_in.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
