use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::*;
use crate::dataset::{simulate_dataset, SimConfig};
use crate::model::{ParamStore, Variant};
use crate::radar::RadarParams;

fn tiny_index(dir: &Path) -> DatasetIndex {
    let cfg = SimConfig {
        params: RadarParams::with_extents(16, 16, 4),
        train_frames: 8,
        val_frames: 4,
        test_frames: 4,
        sequence_len: 4,
        max_objects: 2,
        seed: 11,
    };
    simulate_dataset(dir, &cfg).unwrap()
}

fn tiny_config(variant: Variant) -> TrainConfig {
    let mut c = TrainConfig::new(variant);
    c.width = 1.0 / 32.0;
    c.batch_size = 2;
    c.epochs = 2;
    c.lr = 1e-3;
    c.q = if variant.is_temporal() { 2 } else { 1 };
    c.precision = Precision::F64;
    c.checkpoint_every = 0;
    c
}

fn trainer(index: &DatasetIndex, cfg: TrainConfig) -> Trainer<f64> {
    Trainer::new(cfg, Extents::of(index), index.class_weights(View::Rd).unwrap(), index.class_weights(View::Ra).unwrap())
        .unwrap()
}

fn fingerprint(p: &ParamStore<f64>) -> u64 {
    let mut h = DefaultHasher::new();
    for t in &p.params {
        t.name.hash(&mut h);
        t.value.data().iter().for_each(|v| v.to_bits().hash(&mut h));
    }
    for b in &p.buffers {
        b.mean.iter().chain(&b.var).for_each(|v| v.to_bits().hash(&mut h));
    }
    h.finish()
}

#[test]
fn identical_seeds_give_identical_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let index = tiny_index(dir.path());
    let cfg = tiny_config(Variant::MvaNetB);
    let train = load_samples::<f64>(&index, Split::Train, cfg.variant, cfg.q).unwrap();
    let mut a = trainer(&index, cfg.clone());
    let mut b = trainer(&index, cfg);
    fit(&mut a, &train, None, None).unwrap();
    fit(&mut b, &train, None, None).unwrap();
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.adam, b.adam);
}

#[test]
fn resume_continues_the_same_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let index = tiny_index(&dir.path().join("data"));
    let mut cfg = tiny_config(Variant::TmvaNet);
    cfg.epochs = 3;
    let train = load_samples::<f64>(&index, Split::Train, cfg.variant, cfg.q).unwrap();
    let mut straight = trainer(&index, cfg.clone());
    fit(&mut straight, &train, None, None).unwrap();

    let mut first = trainer(&index, TrainConfig { epochs: 1, ..cfg.clone() });
    fit(&mut first, &train, None, None).unwrap();
    let ckpt = dir.path().join("ckpt");
    first.save(&ckpt).unwrap();
    let mut resumed = Trainer::<f64>::load(&ckpt).unwrap();
    assert_eq!(resumed.model.params, first.model.params);
    resumed.config.epochs = 3;
    fit(&mut resumed, &train, None, None).unwrap();
    assert_eq!(resumed.model.params, straight.model.params);
    assert_eq!(resumed.step, straight.step);
}

#[test]
fn evaluation_leaves_parameters_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let index = tiny_index(dir.path());
    let cfg = tiny_config(Variant::MvNet);
    let val = load_samples::<f64>(&index, Split::Val, cfg.variant, cfg.q).unwrap();
    let mut t = trainer(&index, cfg);
    let train = load_samples::<f64>(&index, Split::Train, t.config.variant, t.config.q).unwrap();
    t.run_epoch(&train.samples).unwrap();
    let before = fingerprint(&t.model.params);
    let a = evaluate(&t.model, &val.samples, 2, true).unwrap();
    let b = evaluate(&t.model, &val.samples, 3, false).unwrap();
    assert_eq!(before, fingerprint(&t.model.params));
    assert_eq!(a.rd, b.rd);
    assert_eq!(a.predictions.len(), val.len());
}

#[test]
fn zero_heads_predict_background_at_its_prevalence() {
    let dir = tempfile::tempdir().unwrap();
    let index = tiny_index(dir.path());
    let mut t = trainer(&index, tiny_config(Variant::MvNet));
    t.model.zero_heads();
    let val = load_samples::<f64>(&index, Split::Val, t.config.variant, t.config.q).unwrap();
    let ev = evaluate(&t.model, &val.samples, 2, false).unwrap();
    let (rd, _) = ev.scores();
    let total: u64 = ev.rd.truth.iter().sum();
    assert_eq!(ev.rd.predicted[0], total);
    let prevalence = 100.0 * ev.rd.truth[0] as f64 / total as f64;
    assert!((rd.iou[0] - prevalence).abs() < 1e-9);
}

#[test]
fn non_finite_loss_aborts_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let index = tiny_index(dir.path());
    let mut t = trainer(&index, tiny_config(Variant::MvNet));
    let train = load_samples::<f64>(&index, Split::Train, t.config.variant, t.config.q).unwrap();
    t.model.params.params[0].value.data_mut()[0] = f64::NAN;
    let err = t.run_epoch(&train.samples).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
    assert!(err.to_string().contains("epoch 0"), "{err}");
}

#[test]
fn checkpoint_evaluation_exports_masks() {
    let dir = tempfile::tempdir().unwrap();
    let index = tiny_index(&dir.path().join("data"));
    let mut cfg = tiny_config(Variant::MvNet);
    cfg.epochs = 1;
    let out = dir.path().join("run");
    train_on_dataset(&index, cfg, &out, None).unwrap();
    assert!(out.join("best/meta.txt").exists());
    assert_eq!(std::fs::read_to_string(out.join("log.csv")).unwrap().lines().count(), 2);
    let masks = dir.path().join("masks");
    let report = evaluate_checkpoint(&out.join("last"), &index, Split::Test, Some(&masks)).unwrap();
    assert!(report.identity_residual < 1e-9);
    let seq = index.sequences_in(Split::Test).next().unwrap();
    let png = masks.join(&seq.id).join("frame_0001.rd.png");
    assert_eq!(load_mask_png(&png).unwrap().shape(), &[16, 4]);

    let other = tiny_index(&dir.path().join("wide"));
    let mut wide = other.clone();
    wide.n_range = 32;
    assert!(evaluate_checkpoint(&out.join("last"), &wide, Split::Test, None).is_err());
}
