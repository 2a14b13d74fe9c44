use crate::error::{Error, Result};
use crate::radar::{class_name, ViewFrame};
use crate::tensor::Tensor;

/// Class weights `w_k ∝ 1 / count_k`, normalized to sum to one.
pub fn compute_class_weights(counts: &[u64]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::Data("no classes to weight".into()));
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!(
            "class {k} ({}) never occurs in the training split; cannot weight it",
            class_name(k as u8)
        )));
    }
    let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
    let total: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|w| w / total).collect())
}

/// Adds the label histogram of `mask` to `counts`.
pub fn count_labels(mask: &Tensor<u8>, counts: &mut [u64]) -> Result<()> {
    let k = counts.len();
    for &c in mask.data() {
        let slot = counts
            .get_mut(c as usize)
            .ok_or_else(|| Error::Data(format!("label {c} outside 0..{k}")))?;
        *slot += 1;
    }
    Ok(())
}

/// Global min/max of one view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const EMPTY: Range = Range { min: f64::INFINITY, max: f64::NEG_INFINITY };

    pub fn update(&mut self, t: &Tensor<f32>) {
        for &v in t.data() {
            let v = f64::from(v);
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
    }

    fn span(&self, view: &str) -> Result<f64> {
        let span = self.max - self.min;
        if !(span > 0.0 && span.is_finite()) {
            return Err(Error::Config(format!(
                "degenerate {view} statistics: min {} max {}",
                self.min, self.max
            )));
        }
        Ok(span)
    }
}

/// Per-view statistics gathered from the training split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub rd: Range,
    pub ra: Range,
    pub ad: Range,
}

impl NormStats {
    pub fn from_frames<'a>(frames: impl IntoIterator<Item = &'a ViewFrame>) -> Self {
        let mut s = NormStats { rd: Range::EMPTY, ra: Range::EMPTY, ad: Range::EMPTY };
        for f in frames {
            s.rd.update(&f.rd);
            s.ra.update(&f.ra);
            s.ad.update(&f.ad);
        }
        s
    }
}

fn normalize(t: &Tensor<f32>, r: &Range, view: &str) -> Result<Tensor<f32>> {
    let span = r.span(view)?;
    Ok(t.map(|v| ((f64::from(v) - r.min) / span).clamp(0.0, 1.0) as f32))
}

fn denormalize(t: &Tensor<f32>, r: &Range, view: &str) -> Result<Tensor<f32>> {
    let span = r.span(view)?;
    Ok(t.map(|v| (f64::from(v) * span + r.min) as f32))
}

/// Maps each view to `[0, 1]` with `(x − min)/(max − min)`, clamping values
/// outside the training range.
pub fn normalize_views(frame: &ViewFrame, stats: &NormStats) -> Result<ViewFrame> {
    Ok(ViewFrame {
        rd: normalize(&frame.rd, &stats.rd, "rd")?,
        ra: normalize(&frame.ra, &stats.ra, "ra")?,
        ad: normalize(&frame.ad, &stats.ad, "ad")?,
        ..frame.clone()
    })
}

pub fn denormalize_views(frame: &ViewFrame, stats: &NormStats) -> Result<ViewFrame> {
    Ok(ViewFrame {
        rd: denormalize(&frame.rd, &stats.rd, "rd")?,
        ra: denormalize(&frame.ra, &stats.ra, "ra")?,
        ad: denormalize(&frame.ad, &stats.ad, "ad")?,
        ..frame.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(rd: f32, ra: f32, ad: f32) -> ViewFrame {
        ViewFrame {
            rd: Tensor::full(vec![2, 2], rd),
            ra: Tensor::full(vec![2, 3], ra),
            ad: Tensor::full(vec![3, 2], ad),
            rd_mask: Tensor::full(vec![2, 2], 0),
            ra_mask: Tensor::full(vec![2, 3], 0),
            timestamp: 0,
        }
    }

    #[test]
    fn equal_counts_give_equal_weights() {
        assert_eq!(compute_class_weights(&[7, 7]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn weights_are_inverse_frequencies() {
        let w = compute_class_weights(&[90, 10]).unwrap();
        assert!((w[0] - 0.1).abs() < 1e-15 && (w[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_named() {
        let err = compute_class_weights(&[100, 3, 0, 8]).unwrap_err().to_string();
        assert!(err.contains("cyclist"), "{err}");
    }

    #[test]
    fn extremes_map_to_unit_interval() {
        let stats = NormStats::from_frames(&[frame(-10.0, 0.0, 5.0), frame(30.0, 8.0, 9.0)]);
        let lo = normalize_views(&frame(-10.0, 0.0, 5.0), &stats).unwrap();
        let hi = normalize_views(&frame(30.0, 8.0, 9.0), &stats).unwrap();
        for t in [&lo.rd, &lo.ra, &lo.ad] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
        for t in [&hi.rd, &hi.ra, &hi.ad] {
            assert!(t.data().iter().all(|&v| v == 1.0));
        }
        let out = normalize_views(&frame(100.0, -5.0, 7.0), &stats).unwrap();
        assert_eq!(out.rd.data()[0], 1.0);
        assert_eq!(out.ra.data()[0], 0.0);
        assert_eq!(out.ad.data()[0], 0.5);
    }

    #[test]
    fn degenerate_stats_are_rejected() {
        let stats = NormStats::from_frames(&[frame(1.0, 1.0, 1.0)]);
        assert!(matches!(normalize_views(&frame(1.0, 1.0, 1.0), &stats), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_reverse_frequency_order(counts in prop::collection::vec(1u64..1_000_000, 2..6)) {
            let w = compute_class_weights(&counts).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x > 0.0));
            for i in 0..counts.len() {
                for j in 0..counts.len() {
                    if counts[i] < counts[j] {
                        prop_assert!(w[i] > w[j]);
                    }
                }
            }
        }

        #[test]
        // error measured in normalized units
        fn normalization_round_trips(lo in -80f32..0.0, span in 1f32..100.0, t in 0f32..=1.0) {
            let stats = NormStats::from_frames(&[frame(lo, lo, lo), frame(lo + span, lo + span, lo + span)]);
            let x = lo + t * span;
            let back = denormalize_views(&normalize_views(&frame(x, x, x), &stats).unwrap(), &stats).unwrap();
            for v in [back.rd.data()[0], back.ra.data()[0], back.ad.data()[0]] {
                prop_assert!(f64::from((v - x).abs()) / f64::from(span) <= 1e-6);
            }
        }
    }
}
