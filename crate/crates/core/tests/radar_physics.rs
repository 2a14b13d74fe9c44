mod common;

use num_complex::Complex64;
use rand::Rng;

use mvrss::radar::fft::Radix2Fft;
use mvrss::radar::{
    aggregate_views, apply_speckle, fft_chain, range_support, simulate_sequence, synthesize_adc, ObjectClass, PointTarget,
    RadTensor, RadarParams, Scenario,
};

use common::{dft, rng, view_direct};

#[test]
fn fft_matches_the_direct_dft() {
    let mut r = rng(5);
    let x: Vec<Complex64> = (0..16).map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
    let mut y = x.clone();
    Radix2Fft::new(16).unwrap().process(&mut y);
    for (a, b) in y.iter().zip(dft(&x)) {
        assert!((a - b).norm() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn single_targets_peak_at_their_analytic_bins() {
    let p = RadarParams::desk();
    let mut r = rng(6);
    for scene in 0..200 {
        let rb = r.random_range(1.0..p.n_range as f64 - 2.0);
        let db = r.random_range(1.0..p.n_doppler as f64 - 2.0);
        let angle = r.random_range(-p.max_angle..p.max_angle);
        let t = PointTarget {
            range: p.range_of_bin(rb),
            velocity: p.velocity_of_bin(db),
            angle,
            rcs: r.random_range(0.5..2.0),
            class_id: 1,
            extent: [1.0; 3],
        };
        let rad = fft_chain(&synthesize_adc(&p, &[t.clone()], scene).unwrap(), p.n_angle).unwrap();
        let peak = rad.argmax();
        let analytic = t.bins(&p);
        for axis in 0..3 {
            assert!(
                (peak[axis] as f64 - analytic[axis]).abs() <= 1.0,
                "scene {scene}: peak {peak:?} vs analytic {analytic:?}"
            );
        }
    }
}

#[test]
fn views_match_direct_summation() {
    let mut r = rng(7);
    let dims = [8, 16, 4];
    let mut rad = RadTensor::zeros(dims[0], dims[1], dims[2]);
    for v in &mut rad.data {
        *v = Complex64::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
    }
    rad.data[5] = Complex64::new(0.0, 0.0);
    let views = aggregate_views(&rad);
    for (got, keep) in [(&views.rd, [0, 2]), (&views.ra, [0, 1]), (&views.ad, [1, 2])] {
        for (a, b) in got.data().iter().zip(view_direct(&rad.data, dims, keep)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn speckle_preserves_mean_intensity() {
    let n = [64, 64, 32];
    let mut rad = RadTensor::zeros(n[0], n[1], n[2]);
    for (i, v) in rad.data.iter_mut().enumerate() {
        *v = Complex64::from_polar(1.0 + (i % 7) as f64, i as f64);
    }
    let clean: f64 = rad.data.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let speckled: f64 = apply_speckle(&rad, 9).data.iter().map(|v| v.norm_sqr()).sum::<f64>();
    assert!(rad.data.len() >= 100_000);
    assert!((speckled / clean - 1.0).abs() < 0.02, "ratio {}", speckled / clean);
}

#[test]
fn simulated_masks_share_range_support_in_every_frame() {
    let p = RadarParams::with_extents(32, 32, 8);
    let mut r = rng(8);
    for seed in 0..5 {
        let scenario = Scenario::random_with_classes(&p, &ObjectClass::ALL, 6, &mut r);
        for f in simulate_sequence(&p, &scenario, 6, seed).unwrap() {
            assert_eq!(range_support(&f.rd_mask), range_support(&f.ra_mask));
            assert!(f.rd.data().iter().chain(f.ra.data()).chain(f.ad.data()).all(|v| v.is_finite()));
        }
    }
}
