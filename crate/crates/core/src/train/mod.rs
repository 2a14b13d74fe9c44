//! Adam, the learning-rate schedule, checkpoints and the training and
//! evaluation loops.

mod adam;
mod checkpoint;
mod config;
mod data;
mod export;
mod trainer;

use std::path::Path;

pub use adam::{AdamConfig, AdamState, LrSchedule};
pub use checkpoint::checkpoint_precision;
pub use config::{Precision, TrainConfig};
pub use data::{load_samples, SplitSamples};
pub use export::{load_mask_png, save_mask_png, PALETTE};
pub use trainer::{evaluate, fit, model_config, EpochLog, Evaluation, Extents, TrainOutcome, TrainScalar, Trainer};

use crate::dataset::{DatasetIndex, Split, View};
use crate::error::{Error, Result};
use crate::metrics::Scores;

impl Extents {
    pub fn of(index: &DatasetIndex) -> Self {
        Extents {
            n_range: index.n_range,
            n_angle: index.n_angle,
            n_doppler: index.n_doppler,
            n_classes: index.n_classes,
        }
    }
}

/// Trains on the train split of `index`, validating on its val split, in
/// the precision of `config`. Resumes from `resume` when given.
pub fn train_on_dataset(index: &DatasetIndex, config: TrainConfig, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    match config.precision {
        Precision::F32 => train_as::<f32>(index, config, out, resume),
        Precision::F64 => train_as::<f64>(index, config, out, resume),
    }
}

fn train_as<T: TrainScalar>(index: &DatasetIndex, config: TrainConfig, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let extents = Extents::of(index);
    let mut trainer = match resume {
        Some(dir) => {
            let mut t = Trainer::<T>::load(dir)?;
            if t.extents() != extents {
                return Err(Error::Data(format!(
                    "checkpoint {} was trained on {:?}, dataset has {extents:?}",
                    dir.display(),
                    t.extents()
                )));
            }
            t.config.epochs = config.epochs;
            t
        }
        None => Trainer::new(config, extents, index.class_weights(View::Rd)?, index.class_weights(View::Ra)?)?,
    };
    let (variant, q) = (trainer.config.variant, trainer.config.q);
    let train = load_samples::<T>(index, Split::Train, variant, q)?;
    let val = load_samples::<T>(index, Split::Val, variant, q)?;
    fit(&mut trainer, &train, Some(&val), Some(out))
}

/// Scores of one checkpoint on one split.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rd: Scores,
    pub ra: Scores,
    pub coherence: f64,
    /// Largest deviation from the Dice/IoU and Dice/precision-recall
    /// identities over both views, in percent points.
    pub identity_residual: f64,
    pub samples: usize,
}

/// Eval-mode scores of the checkpoint in `ckpt` on `split`, optionally
/// writing the predicted masks as `{export}/{sequence}/frame_TTTT.{rd,ra}.png`.
pub fn evaluate_checkpoint(ckpt: &Path, index: &DatasetIndex, split: Split, export: Option<&Path>) -> Result<EvalReport> {
    match checkpoint_precision(ckpt)? {
        Precision::F32 => evaluate_as::<f32>(ckpt, index, split, export),
        Precision::F64 => evaluate_as::<f64>(ckpt, index, split, export),
    }
}

fn evaluate_as<T: TrainScalar>(ckpt: &Path, index: &DatasetIndex, split: Split, export: Option<&Path>) -> Result<EvalReport> {
    let trainer = Trainer::<T>::load(ckpt)?;
    let extents = Extents::of(index);
    if trainer.extents() != extents {
        return Err(Error::Data(format!(
            "checkpoint {} expects {:?}, dataset {} has {extents:?}",
            ckpt.display(),
            trainer.extents(),
            index.root.display()
        )));
    }
    let samples = load_samples::<T>(index, split, trainer.config.variant, trainer.config.q)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("split {split} has no frame with {} predecessors", trainer.config.q)));
    }
    let ev = evaluate(&trainer.model, &samples.samples, trainer.config.batch_size, export.is_some())?;
    if let Some(dir) = export {
        for ((seq, t), (rd, ra)) in samples.ids.iter().zip(&ev.predictions) {
            let d = dir.join(seq);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            save_mask_png(&d.join(format!("frame_{t:04}.rd.png")), rd)?;
            save_mask_png(&d.join(format!("frame_{t:04}.ra.png")), ra)?;
        }
    }
    let (rd, ra) = ev.scores();
    let residual = crate::metrics::identity_residual(&ev.rd).max(crate::metrics::identity_residual(&ev.ra));
    Ok(EvalReport { rd, ra, coherence: ev.coherence, identity_residual: residual, samples: samples.len() })
}

#[cfg(test)]
mod tests;
