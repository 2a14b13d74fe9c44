mod common;

use proptest::prelude::*;
use rand::Rng;

use mvrss::dataset::one_hot;
use mvrss::loss::{coherence, combined, soft_dice, wce, LossWeights, Targets};
use mvrss::metrics::{decode_hard, identity_residual, iou_dice, ConfusionAccumulator};
use mvrss::model::SegmentationOutput;
use mvrss::tensor::{Tape, Tensor};

use common::{coherence_loop, rng, soft_dice_loop, wce_loop};

/// Softmax over axis 0 of random logits.
fn probs(shape: Vec<usize>, r: &mut impl Rng) -> Tensor<f64> {
    let (k, plane) = (shape[0], shape[1..].iter().product::<usize>());
    let logits: Vec<f64> = (0..k * plane).map(|_| r.random_range(-3.0..3.0)).collect();
    let mut p = vec![0.0; logits.len()];
    for i in 0..plane {
        let z: f64 = (0..k).map(|c| logits[c * plane + i].exp()).sum();
        for c in 0..k {
            p[c * plane + i] = logits[c * plane + i].exp() / z;
        }
    }
    Tensor::new(shape, p).unwrap()
}

fn labels(shape: Vec<usize>, k: u8, r: &mut impl Rng) -> Tensor<u8> {
    Tensor::from_fn(shape, |_| r.random_range(0..k))
}

fn scalar(f: impl FnOnce(&mut Tape<f64>) -> mvrss::Result<mvrss::tensor::Var>) -> f64 {
    let mut t = Tape::new();
    let v = f(&mut t).unwrap();
    t.value(v).data()[0]
}

#[test]
fn losses_match_double_loop_evaluators() {
    let mut r = rng(11);
    for _ in 0..20 {
        let p = probs(vec![4, 6, 5], &mut r);
        let y = one_hot::<f64>(&labels(vec![6, 5], 4, &mut r), 4).unwrap();
        let w = [0.1, 0.2, 0.3, 0.4];
        let got = scalar(|t| {
            let pv = t.constant(p.clone());
            wce(t, pv, &y, &w)
        });
        assert!((got - wce_loop(&p, &y, &w)).abs() < 1e-12);
        let got = scalar(|t| {
            let pv = t.constant(p.clone());
            soft_dice(t, pv, &y)
        });
        assert!((got - soft_dice_loop(&p, &y)).abs() < 1e-12);
        let q = probs(vec![4, 6, 7], &mut r);
        let got = scalar(|t| {
            let (a, b) = (t.constant(p.clone()), t.constant(q.clone()));
            coherence(t, a, b)
        });
        assert!((got - coherence_loop(&p, &q)).abs() < 1e-12);
    }
}

#[test]
fn uniform_prediction_costs_log_k_per_bin() {
    let (k, m, n) = (4, 5, 3);
    let p = Tensor::full(vec![k, m, n], 1.0 / k as f64);
    let y = one_hot::<f64>(&labels(vec![m, n], 4, &mut rng(12)), k).unwrap();
    let w = [0.25; 4];
    let got = scalar(|t| {
        let pv = t.constant(p.clone());
        wce(t, pv, &y, &w)
    });
    let expect = 0.25 * 0.25 * (m * n) as f64 * (k as f64).ln();
    assert!((got - expect).abs() < 1e-12);
    assert!((got - wce_loop(&p, &y, &w)).abs() < 1e-12);
}

#[test]
fn combined_is_the_weighted_sum_of_its_terms() {
    let mut r = rng(13);
    let (p_rd, p_ra) = (probs(vec![1, 4, 8, 4], &mut r), probs(vec![1, 4, 8, 8], &mut r));
    let (l_rd, l_ra) = (labels(vec![1, 8, 4], 4, &mut r), labels(vec![1, 8, 8], 4, &mut r));
    let (w_rd, w_ra) = ([0.1, 0.2, 0.3, 0.4], [0.4, 0.3, 0.2, 0.1]);
    let targets = Targets { rd_labels: &l_rd, ra_labels: &l_ra, rd_weights: &w_rd, ra_weights: &w_ra };
    let squeeze = |t: &Tensor<f64>| t.clone().reshape(t.shape()[1..].to_vec()).unwrap();
    let (y_rd, y_ra) = (one_hot::<f64>(&squeeze_u8(&l_rd), 4).unwrap(), one_hot::<f64>(&squeeze_u8(&l_ra), 4).unwrap());
    let (p3_rd, p3_ra) = (squeeze(&p_rd), squeeze(&p_ra));
    let terms = [
        wce_loop(&p3_rd, &y_rd, &w_rd) + wce_loop(&p3_ra, &y_ra, &w_ra),
        soft_dice_loop(&p3_rd, &y_rd) + soft_dice_loop(&p3_ra, &y_ra),
        coherence_loop(&p3_rd, &p3_ra),
    ];
    for lw in [LossWeights::default(), LossWeights { wce: 1.0, sdice: 0.0, col: 0.0 }, LossWeights { wce: 0.5, sdice: 2.0, col: 7.0 }] {
        let mut t = Tape::new();
        let out = SegmentationOutput { p_rd: t.constant(p_rd.clone()), p_ra: t.constant(p_ra.clone()) };
        let (v, parts) = combined(&mut t, &out, &targets, &lw).unwrap();
        let expect = lw.wce * terms[0] + lw.sdice * terms[1] + lw.col * terms[2];
        assert!((t.value(v).data()[0] - expect).abs() < 1e-12);
        assert!((parts.total - expect).abs() < 1e-12);
    }
}

fn squeeze_u8(t: &Tensor<u8>) -> Tensor<u8> {
    t.clone().reshape(t.shape()[1..].to_vec()).unwrap()
}

#[test]
fn tiny_counts_give_the_closed_form_scores() {
    // |A| = 2, |B| = 2, |A ∩ B| = 1
    let pred = Tensor::new(vec![1, 4], vec![1u8, 1, 0, 0]).unwrap();
    let truth = Tensor::new(vec![1, 4], vec![1u8, 0, 1, 0]).unwrap();
    let mut acc = ConfusionAccumulator::new(2);
    acc.add(&pred, &truth).unwrap();
    let s = iou_dice(&acc);
    assert!((s.iou[1] - 100.0 / 3.0).abs() < 1e-9);
    assert!((s.dice[1] - 50.0).abs() < 1e-9);
}

proptest! {
    #[test]
    fn metric_identities_hold_on_random_evaluations(seed in any::<u64>(), frames in 1usize..5) {
        let mut r = rng(seed);
        let mut acc = ConfusionAccumulator::new(4);
        for _ in 0..frames {
            let p = probs(vec![4, 6, 6], &mut r);
            acc.add(&decode_hard(&p).unwrap(), &labels(vec![6, 6], 4, &mut r)).unwrap();
        }
        prop_assert!(identity_residual(&acc) < 1e-9);
        let s = iou_dice(&acc);
        for (iou, dice) in s.iou.iter().zip(&s.dice) {
            let i = iou / 100.0;
            prop_assert!((dice / 100.0 - 2.0 * i / (1.0 + i)).abs() < 1e-12);
        }
    }

    #[test]
    fn coherence_ignores_doppler_and_angle_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = (probs(vec![3, 4, 5], &mut r), probs(vec![3, 4, 6], &mut r));
        let rev = |t: &Tensor<f64>| {
            let n = t.shape()[2];
            Tensor::from_fn(t.shape().to_vec(), |i| t.data()[i - i % n + (n - 1 - i % n)])
        };
        let v = |x: &Tensor<f64>, y: &Tensor<f64>| scalar(|t| {
            let (xv, yv) = (t.constant(x.clone()), t.constant(y.clone()));
            coherence(t, xv, yv)
        });
        prop_assert!((v(&a, &b) - v(&rev(&a), &rev(&b))).abs() < 1e-15);
    }
}
