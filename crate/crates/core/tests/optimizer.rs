mod common;

use mvrss::model::ParamStore;
use mvrss::tensor::Tensor;
use mvrss::train::{AdamConfig, AdamState, LrSchedule};

use common::ScalarAdam;

#[test]
fn adam_trace_matches_the_scalar_reference() {
    // minimise (x − 3)² from x = 0
    let mut store = ParamStore::<f64>::default();
    store.add("x", Tensor::full(vec![1], 0.0));
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let mut reference = ScalarAdam { m: 0.0, v: 0.0, t: 0 };
    let mut x_ref = 0.0;
    for _ in 0..10 {
        let x = store.params[0].value.data()[0];
        let g = 2.0 * (x - 3.0);
        adam.step(&mut store, &[Some(Tensor::full(vec![1], g))], 0.1).unwrap();
        x_ref = reference.step(x_ref, 2.0 * (x_ref - 3.0), 0.1);
        assert!((store.params[0].value.data()[0] - x_ref).abs() < 1e-12);
    }
    assert!(x_ref > 0.9);
}

#[test]
fn schedule_decays_every_ten_epochs() {
    let s = LrSchedule { base: 1e-4, gamma: 0.9, every: 10 };
    assert_eq!(s.lr_at(0), 1e-4);
    assert_eq!(s.lr_at(9), 1e-4);
    assert!((s.lr_at(10) - 0.9e-4).abs() < 1e-18);
    assert!((s.lr_at(35) - 1e-4 * 0.9f64.powi(3)).abs() < 1e-18);
}
