//! IoU and Dice over hard-decoded maps, accumulated over a whole split.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::radar::class_name;
use crate::tensor::{Scalar, Tensor};

/// Arg-max over the class axis of `[B, K, M, N]` or `[K, M, N]`; ties go to
/// the lowest class index.
pub fn decode_hard<T: Scalar>(p: &Tensor<T>) -> Result<Tensor<u8>> {
    let shape = p.shape();
    let (k, out_shape) = match shape {
        [k, m, n] => (*k, vec![*m, *n]),
        [b, k, m, n] => (*k, vec![*b, *m, *n]),
        _ => return Err(Error::shape("decode_hard", format!("expected [B, K, M, N] or [K, M, N], got {shape:?}"))),
    };
    if k == 0 || k > u8::MAX as usize + 1 {
        return Err(Error::shape("decode_hard", format!("{k} classes")));
    }
    let plane = shape[shape.len() - 2..].iter().product::<usize>();
    let mut out = Vec::with_capacity(p.numel() / k);
    for sample in p.data().chunks(k * plane) {
        for i in 0..plane {
            let mut best = 0;
            for c in 1..k {
                if sample[c * plane + i] > sample[best * plane + i] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    Tensor::new(out_shape, out)
}

/// Per-class `|A∩B|`, `|A|` (predicted) and `|B|` (ground truth).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionAccumulator {
    pub intersection: Vec<u64>,
    pub predicted: Vec<u64>,
    pub truth: Vec<u64>,
}

impl ConfusionAccumulator {
    pub fn new(n_classes: usize) -> Self {
        ConfusionAccumulator {
            intersection: vec![0; n_classes],
            predicted: vec![0; n_classes],
            truth: vec![0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.truth.len()
    }

    pub fn add(&mut self, prediction: &Tensor<u8>, truth: &Tensor<u8>) -> Result<()> {
        if prediction.shape() != truth.shape() {
            return Err(Error::shape(
                "confusion",
                format!("prediction {:?} vs truth {:?}", prediction.shape(), truth.shape()),
            ));
        }
        let k = self.n_classes();
        if let Some(&c) = prediction.data().iter().chain(truth.data()).find(|&&c| c as usize >= k) {
            return Err(Error::Data(format!("label {c} outside 0..{k}")));
        }
        for (&a, &b) in prediction.data().iter().zip(truth.data()) {
            self.predicted[a as usize] += 1;
            self.truth[b as usize] += 1;
            if a == b {
                self.intersection[a as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) -> Result<()> {
        if other.n_classes() != self.n_classes() {
            return Err(Error::shape("confusion merge", format!("{} vs {} classes", self.n_classes(), other.n_classes())));
        }
        for (dst, src) in [
            (&mut self.intersection, &other.intersection),
            (&mut self.predicted, &other.predicted),
            (&mut self.truth, &other.truth),
        ] {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
        Ok(())
    }

    /// `(|A∩B|, |A∪B|)` for class `k`.
    fn overlap(&self, k: usize) -> (u64, u64) {
        let i = self.intersection[k];
        (i, self.predicted[k] + self.truth[k] - i)
    }

    /// Precision of class `k` in percent; `None` when nothing was predicted.
    pub fn precision(&self, k: usize) -> Option<f64> {
        (self.predicted[k] > 0).then(|| 100.0 * self.intersection[k] as f64 / self.predicted[k] as f64)
    }

    /// Recall of class `k` in percent; `None` when the class never occurs.
    pub fn recall(&self, k: usize) -> Option<f64> {
        (self.truth[k] > 0).then(|| 100.0 * self.intersection[k] as f64 / self.truth[k] as f64)
    }
}

/// Per-class and mean scores in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub iou: Vec<f64>,
    pub dice: Vec<f64>,
    pub miou: f64,
    pub mdice: f64,
}

/// Classes absent from both prediction and truth score 100.
pub fn iou_dice(acc: &ConfusionAccumulator) -> Scores {
    let k = acc.n_classes();
    let (mut iou, mut dice) = (Vec::with_capacity(k), Vec::with_capacity(k));
    for c in 0..k {
        let (inter, union) = acc.overlap(c);
        if union == 0 {
            iou.push(100.0);
            dice.push(100.0);
        } else {
            iou.push(100.0 * inter as f64 / union as f64);
            dice.push(100.0 * 2.0 * inter as f64 / (acc.predicted[c] + acc.truth[c]) as f64);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Scores { miou: mean(&iou), mdice: mean(&dice), iou, dice }
}

/// Largest violation over all classes of `Dice = 2·IoU/(1+IoU)` and of
/// `Dice = harmonic mean(precision, recall)`, in percent points.
pub fn identity_residual(acc: &ConfusionAccumulator) -> f64 {
    let s = iou_dice(acc);
    let mut worst: f64 = 0.0;
    for c in 0..acc.n_classes() {
        if acc.overlap(c).1 == 0 {
            continue;
        }
        let j = s.iou[c] / 100.0;
        worst = worst.max((s.dice[c] - 100.0 * 2.0 * j / (1.0 + j)).abs());
        let hm = match (acc.precision(c), acc.recall(c)) {
            (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
            _ => 0.0,
        };
        worst = worst.max((s.dice[c] - hm).abs());
    }
    worst
}

/// `view,class,iou,dice` rows, then a `mean` row per view.
pub fn csv_report(views: &[(&str, &Scores)]) -> String {
    let mut out = String::from("view,class,iou,dice\n");
    for (view, s) in views {
        for (c, (iou, dice)) in s.iou.iter().zip(&s.dice).enumerate() {
            let _ = writeln!(out, "{view},{},{iou:.4},{dice:.4}", class_name(c as u8));
        }
        let _ = writeln!(out, "{view},mean,{:.4},{:.4}", s.miou, s.mdice);
    }
    out
}

/// One row per view: per-class IoU, mIoU, per-class Dice, mDice.
pub fn text_report(views: &[(&str, &Scores)]) -> String {
    let Some((_, first)) = views.first() else {
        return String::new();
    };
    let names: Vec<&str> = (0..first.iou.len()).map(|c| class_name(c as u8)).collect();
    let mut out = format!("{:<6}", "view");
    for metric in ["IoU", "Dice"] {
        for n in &names {
            let _ = write!(out, " {:>10}", format!("{metric}:{}", &n[..n.len().min(4)]));
        }
        let _ = write!(out, " {:>10}", format!("m{metric}"));
    }
    out.push('\n');
    for (view, s) in views {
        let _ = write!(out, "{view:<6}");
        for (per, mean) in [(&s.iou, s.miou), (&s.dice, s.mdice)] {
            for v in per {
                let _ = write!(out, " {v:>10.1}");
            }
            let _ = write!(out, " {mean:>10.1}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: &[u8]) -> Tensor<u8> {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    fn scores(pred: &[u8], truth: &[u8], k: usize) -> (ConfusionAccumulator, Scores) {
        let mut acc = ConfusionAccumulator::new(k);
        acc.add(&labels(pred), &labels(truth)).unwrap();
        let s = iou_dice(&acc);
        (acc, s)
    }

    #[test]
    fn decode_prefers_lowest_index_on_ties() {
        let p = Tensor::new(vec![3, 1, 2], vec![0.2, 0.5, 0.4, 0.5, 0.4, 0.0]).unwrap();
        assert_eq!(decode_hard(&p).unwrap().data(), &[1, 0]);
        assert!(decode_hard(&Tensor::full(vec![4, 2, 2], 0.25)).unwrap().data().iter().all(|&c| c == 0));
    }

    #[test]
    fn closed_form_cases() {
        let (_, s) = scores(&[1, 1, 0], &[1, 1, 0], 2);
        assert_eq!(s.iou, vec![100.0, 100.0]);
        let (_, s) = scores(&[1, 1, 0, 0], &[0, 0, 1, 1], 2);
        assert_eq!(s.iou, vec![0.0, 0.0]);
        assert_eq!(s.dice, vec![0.0, 0.0]);
        let (acc, s) = scores(&[1, 1, 0, 0], &[1, 0, 1, 0], 2);
        assert!((s.iou[1] - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.dice[1], 50.0);
        assert!(identity_residual(&acc) < 1e-12);
    }

    #[test]
    fn absent_class_scores_full_marks() {
        let (_, s) = scores(&[0, 1], &[0, 1], 3);
        assert_eq!(s.iou[2], 100.0);
        assert_eq!(s.miou, 100.0);
    }

    #[test]
    fn rejects_mismatch_and_out_of_range() {
        let mut acc = ConfusionAccumulator::new(2);
        assert!(acc.add(&labels(&[0, 1]), &labels(&[0])).is_err());
        assert!(acc.add(&labels(&[0, 2]), &labels(&[0, 1])).is_err());
        assert!(acc.merge(&ConfusionAccumulator::new(3)).is_err());
    }

    #[test]
    fn reports_list_every_class() {
        let (_, s) = scores(&[0, 1, 2, 3], &[0, 1, 2, 2], 4);
        let csv = csv_report(&[("rd", &s)]);
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.contains("rd,pedestrian,100.0000,100.0000"));
        assert!(csv.ends_with(&format!("rd,mean,{:.4},{:.4}\n", s.miou, s.mdice)));
        let text = text_report(&[("rd", &s), ("ra", &s)]);
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("mIoU"));
    }

    proptest! {
        #[test]
        fn accumulation_is_additive_and_identities_hold(
            a in prop::collection::vec((0u8..4, 0u8..4), 1..64),
            b in prop::collection::vec((0u8..4, 0u8..4), 1..64),
        ) {
            let split = |v: &[(u8, u8)]| (v.iter().map(|x| x.0).collect::<Vec<_>>(), v.iter().map(|x| x.1).collect::<Vec<_>>());
            let ((pa, ta), (pb, tb)) = (split(&a), split(&b));
            let mut acc_a = ConfusionAccumulator::new(4);
            acc_a.add(&labels(&pa), &labels(&ta)).unwrap();
            let mut acc_b = ConfusionAccumulator::new(4);
            acc_b.add(&labels(&pb), &labels(&tb)).unwrap();
            acc_a.merge(&acc_b).unwrap();
            let mut whole = ConfusionAccumulator::new(4);
            whole.add(&labels(&[pa, pb].concat()), &labels(&[ta, tb].concat())).unwrap();
            prop_assert_eq!(&acc_a, &whole);
            let s = iou_dice(&whole);
            for c in 0..4 {
                prop_assert!(whole.intersection[c] <= whole.predicted[c].min(whole.truth[c]));
                prop_assert!(0.0 <= s.iou[c] && s.iou[c] <= s.dice[c] + 1e-12 && s.dice[c] <= 100.0);
            }
            prop_assert!(identity_residual(&whole) < 1e-9);
        }
    }
}
