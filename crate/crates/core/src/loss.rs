//! Segmentation losses built from tape primitives.
//!
//! Probability maps are `[B, K, M, N]` (or unbatched `[K, M, N]`) and every
//! loss averages over the batch axis.

use crate::dataset::one_hot;
use crate::error::{Error, Result};
use crate::model::SegmentationOutput;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Floor applied to probabilities before the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;
/// Added to the numerator and denominator of every soft-Dice ratio.
pub const DICE_SMOOTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub wce: f64,
    pub sdice: f64,
    pub col: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { wce: 1.0, sdice: 10.0, col: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("wce", self.wce), ("sdice", self.sdice), ("col", self.col)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Unweighted term values of one [`combined`] evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub wce_rd: f64,
    pub wce_ra: f64,
    pub sdice_rd: f64,
    pub sdice_ra: f64,
    pub col: f64,
    pub total: f64,
}

/// `(batch, classes, plane)` of a probability map.
fn split_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match shape {
        [k, m, n] => Ok((1, *k, m * n)),
        [b, k, m, n] => Ok((*b, *k, m * n)),
        _ => Err(Error::shape(op, format!("expected [B, K, M, N] or [K, M, N], got {shape:?}"))),
    }
}

fn check_one_hot<T: Scalar>(y: &Tensor<T>, k: usize, plane: usize) -> Result<()> {
    for sample in y.data().chunks(k * plane) {
        for i in 0..plane {
            let mut sum = T::zero();
            for c in 0..k {
                let v = sample[c * plane + i];
                if v != T::zero() && v != T::one() {
                    return Err(Error::Contract(format!("target is not one-hot: value {v}")));
                }
                sum += v;
            }
            if sum != T::one() {
                return Err(Error::Contract(format!("target is not one-hot: bin {i} sums to {sum}")));
            }
        }
    }
    Ok(())
}

/// Weighted cross entropy `−(1/K) Σ_k w_k Σ_{m,n} y log max(p, 1e-12)`.
pub fn wce<T: Scalar>(tape: &mut Tape<T>, p: Var, y: &Tensor<T>, w: &[f64]) -> Result<Var> {
    let shape = tape.shape(p).to_vec();
    let (b, k, plane) = split_dims(&shape, "wce")?;
    if y.shape() != shape.as_slice() {
        return Err(Error::shape("wce", format!("prediction {shape:?} vs target {:?}", y.shape())));
    }
    if w.len() != k {
        return Err(Error::shape("wce", format!("{} class weights for {k} classes", w.len())));
    }
    check_one_hot(y, k, plane)?;
    let norm = (k * b) as f64;
    let coef: Vec<T> = y
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * T::from_f64_lossy(-w[(i / plane) % k] / norm))
        .collect();
    let coef = tape.constant(Tensor::new(shape, coef)?);
    let logp = tape.clamp_log(p, T::from_f64_lossy(LOG_FLOOR));
    let terms = tape.mul(logp, coef)?;
    Ok(tape.sum_all(terms))
}

/// Soft Dice `mean_k 1 − (2 Σ y p + s) / (Σ y² + Σ p² + s)`.
pub fn soft_dice<T: Scalar>(tape: &mut Tape<T>, p: Var, y: &Tensor<T>) -> Result<Var> {
    let shape = tape.shape(p).to_vec();
    let (b, k, plane) = split_dims(&shape, "soft_dice")?;
    if y.shape() != shape.as_slice() {
        return Err(Error::shape("soft_dice", format!("prediction {shape:?} vs target {:?}", y.shape())));
    }
    let smooth = T::from_f64_lossy(DICE_SMOOTH);
    let y_sq: Vec<T> = y.data().chunks(plane).map(|c| c.iter().map(|&v| v * v).sum::<T>() + smooth).collect();
    let y_sq = tape.constant(Tensor::new(vec![b, k], y_sq)?);
    let p = tape.reshape(p, &[b, k, plane])?;
    let yv = tape.constant(y.clone().reshape(vec![b, k, plane])?);
    let inter = tape.mul(p, yv)?;
    let inter = tape.sum_trailing(inter, 2)?;
    let num = tape.scale(inter, T::from_f64_lossy(2.0));
    let num = tape.add_scalar(num, smooth);
    let p_sq = tape.square(p);
    let p_sq = tape.sum_trailing(p_sq, 2)?;
    let den = tape.add(p_sq, y_sq)?;
    let ratio = tape.div(num, den)?;
    let mean = tape.mean_all(ratio);
    let neg = tape.scale(mean, -T::one());
    Ok(tape.add_scalar(neg, T::one()))
}

/// Mean squared difference between the Doppler-max range profile of `p_rd`
/// and the angle-max range profile of `p_ra`.
pub fn coherence<T: Scalar>(tape: &mut Tape<T>, p_rd: Var, p_ra: Var) -> Result<Var> {
    let (rd, ra) = (tape.shape(p_rd).to_vec(), tape.shape(p_ra).to_vec());
    split_dims(&rd, "coherence")?;
    split_dims(&ra, "coherence")?;
    if rd.len() != ra.len() || rd[..rd.len() - 1] != ra[..ra.len() - 1] {
        return Err(Error::shape("coherence", format!("RD {rd:?} and RA {ra:?} disagree on batch, classes or range")));
    }
    let a = tape.max_last(p_rd)?;
    let b = tape.max_last(p_ra)?;
    let d = tape.sub(a, b)?;
    let d = tape.square(d);
    Ok(tape.mean_all(d))
}

/// Per-view targets and class weights.
#[derive(Clone, Debug)]
pub struct Targets<'a> {
    pub rd_labels: &'a Tensor<u8>,
    pub ra_labels: &'a Tensor<u8>,
    pub rd_weights: &'a [f64],
    pub ra_weights: &'a [f64],
}

/// `λ_wce (wce_rd + wce_ra) + λ_sdice (sdice_rd + sdice_ra) + λ_col col`.
pub fn combined<T: Scalar>(
    tape: &mut Tape<T>,
    out: &SegmentationOutput<Var>,
    targets: &Targets<'_>,
    lw: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    lw.validate()?;
    let k = tape.shape(out.p_rd)[1];
    let y_rd = one_hot::<T>(targets.rd_labels, k)?;
    let y_ra = one_hot::<T>(targets.ra_labels, k)?;
    let wce_rd = wce(tape, out.p_rd, &y_rd, targets.rd_weights)?;
    let wce_ra = wce(tape, out.p_ra, &y_ra, targets.ra_weights)?;
    let sd_rd = soft_dice(tape, out.p_rd, &y_rd)?;
    let sd_ra = soft_dice(tape, out.p_ra, &y_ra)?;
    let col = coherence(tape, out.p_rd, out.p_ra)?;

    let w = tape.add(wce_rd, wce_ra)?;
    let w = tape.scale(w, T::from_f64_lossy(lw.wce));
    let s = tape.add(sd_rd, sd_ra)?;
    let s = tape.scale(s, T::from_f64_lossy(lw.sdice));
    let c = tape.scale(col, T::from_f64_lossy(lw.col));
    let total = tape.add(w, s)?;
    let total = tape.add(total, c)?;

    let v = |tape: &Tape<T>, x: Var| tape.value(x).data()[0].to_f64_lossy();
    let breakdown = LossBreakdown {
        wce_rd: v(tape, wce_rd),
        wce_ra: v(tape, wce_ra),
        sdice_rd: v(tape, sd_rd),
        sdice_ra: v(tape, sd_ra),
        col: v(tape, col),
        total: v(tape, total),
    };
    Ok((total, breakdown))
}
