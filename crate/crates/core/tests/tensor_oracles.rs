mod common;

use proptest::prelude::*;

use mvrss::tensor::{ConvGeom, PoolGeom, Tape, Tensor};

use common::{conv_loop, conv_transpose_loop, conv_weight_grad_loop, maxpool_loop, random, rng};

fn conv_tape(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, g: ConvGeom, transpose: bool) -> Tensor<f64> {
    let mut t = Tape::new();
    let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
    let y = if transpose { t.conv_transpose(xv, wv, Some(bv), g) } else { t.conv(xv, wv, Some(bv), g) }.unwrap();
    t.value(y).clone()
}

#[test]
fn conv2d_matches_the_loop_reference_exactly() {
    let mut r = rng(1);
    let x = random(vec![1, 2, 5, 5], &mut r);
    let w = random(vec![3, 2, 3, 3], &mut r);
    let b = random(vec![3], &mut r);
    let g = ConvGeom::square(3, 1, 1, 1);
    assert_eq!(conv_tape(&x, &w, &b, g, false), conv_loop(&x, &w, Some(&b), &g));
}

#[test]
fn conv3d_matches_the_loop_reference_exactly() {
    let mut r = rng(2);
    let x = random(vec![1, 1, 3, 4, 4], &mut r);
    let w = random(vec![2, 1, 3, 3, 3], &mut r);
    let b = random(vec![2], &mut r);
    let g = ConvGeom::conv3d([3; 3], [1; 3], [0, 1, 1], [1; 3]);
    assert_eq!(conv_tape(&x, &w, &b, g, false), conv_loop(&x, &w, Some(&b), &g));
}

#[test]
fn transposed_conv_matches_the_scatter_add_reference_exactly() {
    let mut r = rng(3);
    let x = random(vec![2, 3, 4, 3], &mut r);
    let w = random(vec![3, 2, 2, 2], &mut r);
    let b = random(vec![2], &mut r);
    let g = ConvGeom::square(2, 2, 0, 1);
    let y = conv_tape(&x, &w, &b, g, true);
    assert_eq!(y.shape(), &[2, 2, 8, 6]);
    assert_eq!(y, conv_transpose_loop(&x, &w, Some(&b), &g));
}

#[test]
fn pooling_values_and_routing_match_the_reference() {
    let mut r = rng(4);
    // quantised values force ties
    let x = Tensor::from_fn(vec![2, 3, 8, 8], |_| (rand::Rng::random_range(&mut r, 0..5) as f64) * 0.5);
    for k in [[2, 2], [2, 1], [1, 2]] {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let y = t.max_pool(xv, PoolGeom::new(k, k)).unwrap();
        let (expect, idx) = maxpool_loop(&x, k, k);
        assert_eq!(t.value(y), &expect);
        let gout = Tensor::from_fn(expect.shape().to_vec(), |i| i as f64 + 1.0);
        let gv = t.constant(gout.clone());
        let m = t.mul(y, gv).unwrap();
        let s = t.sum_all(m);
        let grads = t.backward(s).unwrap();
        let mut routed = vec![0.0; x.numel()];
        for (&src, &g) in idx.iter().zip(gout.data()) {
            routed[src] += g;
        }
        assert_eq!(grads.get(xv).unwrap().data(), routed.as_slice());
    }
}

fn geometry() -> impl Strategy<Value = (ConvGeom, [usize; 3], usize, usize, bool)> {
    (1usize..=3, 1usize..=3, 1usize..=2, 1usize..=2, 0usize..=2, 1usize..=2, 1usize..=3, 1usize..=3, 1usize..=2, any::<bool>())
        .prop_flat_map(|(kh, kw, sh, sw, pad, dil, cin, cout, batch, three_d)| {
            let need = |k: usize| dil * (k - 1) + 1;
            let lo_h = need(kh).saturating_sub(2 * pad).max(1);
            let lo_w = need(kw).saturating_sub(2 * pad).max(1);
            (Just((kh, kw, sh, sw, pad, dil, cin, cout, batch, three_d)), lo_h..=8usize, lo_w..=8usize, 1usize..=4)
        })
        .prop_map(|((kh, kw, sh, sw, pad, dil, cin, cout, batch, three_d), h, w, d)| {
            let g = if three_d {
                let kd = d.min(3);
                ConvGeom::conv3d([kd, kh, kw], [1, sh, sw], [0, pad, pad], [1, dil, dil])
            } else {
                ConvGeom::conv2d([kh, kw], [sh, sw], [pad, pad], [dil, dil])
            };
            (g, [d, h, w], cin, cout * 10 + batch, three_d)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_convolutions_are_bit_exact((g, [d, h, w], cin, packed, three_d) in geometry(), seed in any::<u64>()) {
        let (cout, batch) = (packed / 10, packed % 10);
        let mut r = rng(seed);
        let mut xs = vec![batch, cin];
        if three_d { xs.push(d); }
        xs.extend([h, w]);
        let mut ws = vec![cout, cin];
        ws.extend(g.kernel_dims());
        let x = random(xs, &mut r);
        let wt = random(ws.clone(), &mut r);
        let b = random(vec![cout], &mut r);
        let y = conv_tape(&x, &wt, &b, g, false);
        prop_assert_eq!(&y, &conv_loop(&x, &wt, Some(&b), &g));

        let gout = random(y.shape().to_vec(), &mut r);
        let mut t = Tape::new();
        let (xv, wv) = (t.constant(x.clone()), t.leaf(wt.clone()));
        let yv = t.conv(xv, wv, None, g).unwrap();
        let gv = t.constant(gout.clone());
        let m = t.mul(yv, gv).unwrap();
        let s = t.sum_all(m);
        let grads = t.backward(s).unwrap();
        let expect = conv_weight_grad_loop(&x, &gout, &ws, &g);
        for (a, e) in grads.get(wv).unwrap().data().iter().zip(expect.data()) {
            prop_assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn random_transposed_convolutions_are_bit_exact(
        k in prop::sample::select(vec![[2usize, 2], [2, 1], [1, 2], [3, 3]]),
        stride in prop::sample::select(vec![[2usize, 2], [2, 1], [1, 1]]),
        h in 1usize..=4, w in 1usize..=4, cin in 1usize..=3, cout in 1usize..=3, seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let g = ConvGeom::conv2d(k, stride, [0, 0], [1, 1]);
        let x = random(vec![1, cin, h, w], &mut r);
        let wt = random(vec![cin, cout, k[0], k[1]], &mut r);
        let b = random(vec![cout], &mut r);
        prop_assert_eq!(conv_tape(&x, &wt, &b, g, true), conv_transpose_loop(&x, &wt, Some(&b), &g));
    }
}
