use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::rseg::Element;
use crate::dataset::{augment_flip, Batch, Sample};
use crate::error::{Error, Result};
use crate::loss::{coherence, combined, LossBreakdown, Targets};
use crate::metrics::{decode_hard, iou_dice, ConfusionAccumulator, Scores};
use crate::model::{Inputs, Model, ModelConfig, TapeGraph};
use crate::tensor::{Scalar, Tensor};

use super::adam::AdamState;
use super::config::{Precision, TrainConfig};
use super::data::SplitSamples;

/// Scalars the trainer can run and checkpoint.
pub trait TrainScalar: Scalar + Element {
    const PRECISION: Precision;
}

impl TrainScalar for f32 {
    const PRECISION: Precision = Precision::F32;
}

impl TrainScalar for f64 {
    const PRECISION: Precision = Precision::F64;
}

/// View extents and class count of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Extents {
    pub n_range: usize,
    pub n_angle: usize,
    pub n_doppler: usize,
    pub n_classes: usize,
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct Trainer<T: Scalar> {
    pub config: TrainConfig,
    pub model: Model<T>,
    pub adam: AdamState<T>,
    /// Drives shuffling and augmentation.
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub best_score: Option<f64>,
    pub rd_weights: Vec<f64>,
    pub ra_weights: Vec<f64>,
}

pub fn model_config(cfg: &TrainConfig, e: Extents) -> ModelConfig {
    let mut m = ModelConfig::new(cfg.variant)
        .with_extents(e.n_range, e.n_angle, e.n_doppler)
        .with_width(cfg.width);
    m.n_classes = e.n_classes;
    m.q = cfg.q;
    m.aspp_rates = cfg.aspp_rates.clone();
    m
}

impl<T: TrainScalar> Trainer<T> {
    pub fn new(config: TrainConfig, extents: Extents, rd_weights: Vec<f64>, ra_weights: Vec<f64>) -> Result<Self> {
        config.validate()?;
        for w in [&rd_weights, &ra_weights] {
            if w.len() != extents.n_classes {
                return Err(Error::Config(format!("{} class weights for {} classes", w.len(), extents.n_classes)));
            }
        }
        let model = Model::build(model_config(&config, extents), config.seed)?;
        let adam = AdamState::new(&model.params, config.adam);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546);
        Ok(Trainer { config, model, adam, rng, epoch: 0, step: 0, best_score: None, rd_weights, ra_weights })
    }

    pub fn extents(&self) -> Extents {
        let c = &self.model.config;
        Extents { n_range: c.n_range, n_angle: c.n_angle, n_doppler: c.n_doppler, n_classes: c.n_classes }
    }

    /// Forward, combined loss, backward, running statistics and one Adam
    /// update. Non-finite losses abort before any state changes.
    pub fn train_step(&mut self, batch: &Batch<T>, lr: f64) -> Result<LossBreakdown> {
        let mut g = TapeGraph::new(&self.model.params, true);
        let inputs = Inputs {
            rd: g.input(batch.rd_in.clone()),
            ra: g.input(batch.ra_in.clone()),
            ad: batch.ad_in.clone().map(|a| g.input(a)),
        };
        let out = self.model.forward(&mut g, inputs)?;
        let targets = Targets {
            rd_labels: &batch.rd_labels,
            ra_labels: &batch.ra_labels,
            rd_weights: &self.rd_weights,
            ra_weights: &self.ra_weights,
        };
        let (loss, breakdown) = combined(&mut g.tape, &out, &targets, &self.config.loss)?;
        if !breakdown.total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {breakdown:?} at epoch {}, step {}",
                self.epoch, self.step
            )));
        }
        let mut grads = g.tape.backward(loss)?;
        let grads: Vec<Option<Tensor<T>>> = g.param_vars().iter().map(|&v| grads.take(v)).collect();
        if let Some(i) = grads.iter().position(|g| g.as_ref().is_some_and(|g| !g.all_finite())) {
            return Err(Error::Numerical(format!(
                "non-finite gradient for {} at epoch {}, step {}",
                self.model.params.params[i].name, self.epoch, self.step
            )));
        }
        let stats = std::mem::take(&mut g.batch_stats);
        drop(g);
        self.model.update_running_stats(&stats);
        self.adam.step(&mut self.model.params, &grads, lr)?;
        self.step += 1;
        Ok(breakdown)
    }

    /// One pass over `samples` in shuffled order; returns the mean loss
    /// terms.
    pub fn run_epoch(&mut self, samples: &[Sample<T>]) -> Result<LossBreakdown> {
        if samples.is_empty() {
            return Err(Error::Data("training split has no samples".into()));
        }
        let lr = self.config.schedule().lr_at(self.epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = LossBreakdown::default();
        for chunk in order.chunks(self.config.batch_size) {
            let picked: Vec<Sample<T>> = chunk
                .iter()
                .map(|&i| if self.config.augment { augment_flip(&samples[i], &mut self.rng) } else { samples[i].clone() })
                .collect();
            let b = self.train_step(&Batch::collate(&picked)?, lr)?;
            let n = chunk.len() as f64;
            sum.wce_rd += n * b.wce_rd;
            sum.wce_ra += n * b.wce_ra;
            sum.sdice_rd += n * b.sdice_rd;
            sum.sdice_ra += n * b.sdice_ra;
            sum.col += n * b.col;
            sum.total += n * b.total;
        }
        self.epoch += 1;
        let n = samples.len() as f64;
        Ok(LossBreakdown {
            wce_rd: sum.wce_rd / n,
            wce_ra: sum.wce_ra / n,
            sdice_rd: sum.sdice_rd / n,
            sdice_ra: sum.sdice_ra / n,
            col: sum.col / n,
            total: sum.total / n,
        })
    }
}

/// Accumulated eval-mode results over a split.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub rd: ConfusionAccumulator,
    pub ra: ConfusionAccumulator,
    /// Mean coherence loss of the predicted probability maps.
    pub coherence: f64,
    /// Hard RD and RA maps per sample, when requested.
    pub predictions: Vec<(Tensor<u8>, Tensor<u8>)>,
}

impl Evaluation {
    pub fn scores(&self) -> (Scores, Scores) {
        (iou_dice(&self.rd), iou_dice(&self.ra))
    }

    /// `(mIoU_RD + mIoU_RA) / 2`.
    pub fn score(&self) -> f64 {
        let (rd, ra) = self.scores();
        (rd.miou + ra.miou) / 2.0
    }
}

/// Eval-mode forward (running batch-norm statistics, no augmentation) over
/// `samples`. Parameters are only read.
pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[Sample<T>], batch_size: usize, keep: bool) -> Result<Evaluation> {
    let k = model.config.n_classes;
    let mut ev = Evaluation {
        rd: ConfusionAccumulator::new(k),
        ra: ConfusionAccumulator::new(k),
        coherence: 0.0,
        predictions: Vec::new(),
    };
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = Batch::collate(chunk)?;
        let mut g = TapeGraph::new(&model.params, false);
        let inputs = Inputs {
            rd: g.input(batch.rd_in),
            ra: g.input(batch.ra_in),
            ad: batch.ad_in.map(|a| g.input(a)),
        };
        let out = model.forward(&mut g, inputs)?;
        let col = coherence(&mut g.tape, out.p_rd, out.p_ra)?;
        ev.coherence += g.tape.value(col).data()[0].to_f64_lossy() * chunk.len() as f64;
        let rd = decode_hard(g.tape.value(out.p_rd))?;
        let ra = decode_hard(g.tape.value(out.p_ra))?;
        ev.rd.add(&rd, &batch.rd_labels)?;
        ev.ra.add(&ra, &batch.ra_labels)?;
        if keep {
            for i in 0..chunk.len() {
                ev.predictions.push((rd.index_axis0(i), ra.index_axis0(i)));
            }
        }
    }
    ev.coherence /= samples.len().max(1) as f64;
    Ok(ev)
}

/// One line of the training log.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub val: Option<(Scores, Scores, f64)>,
    pub train_miou: Option<(f64, f64)>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,loss,wce_rd,wce_ra,sdice_rd,sdice_ra,col,\
        val_miou_rd,val_miou_ra,val_mdice_rd,val_mdice_ra,val_col,train_miou_rd,train_miou_ra";

    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        let val = self.val.as_ref();
        format!(
            "{},{:e},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            l.total,
            l.wce_rd,
            l.wce_ra,
            l.sdice_rd,
            l.sdice_ra,
            l.col,
            opt(val.map(|v| v.0.miou)),
            opt(val.map(|v| v.1.miou)),
            opt(val.map(|v| v.0.mdice)),
            opt(val.map(|v| v.1.mdice)),
            opt(val.map(|v| v.2)),
            opt(self.train_miou.map(|v| v.0)),
            opt(self.train_miou.map(|v| v.1)),
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    /// The train-mIoU target was reached before the last epoch.
    pub stopped_early: bool,
}

/// Runs epochs until `config.epochs` (or the train-mIoU target). With an
/// `out` directory, writes `log.csv`, `last/` every `checkpoint_every`
/// epochs and at the end, and `best/` whenever validation improves.
pub fn fit<T: TrainScalar>(
    trainer: &mut Trainer<T>,
    train: &SplitSamples<T>,
    val: Option<&SplitSamples<T>>,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let cfg = trainer.config.clone();
    let mut log_file = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("log.csv");
            let fresh = !path.exists();
            let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
            if fresh {
                writeln!(f, "{}", EpochLog::CSV_HEADER).map_err(|e| Error::io(&path, e))?;
            }
            Some((f, path))
        }
        None => None,
    };
    let mut outcome = TrainOutcome { history: Vec::new(), stopped_early: false };
    while trainer.epoch < cfg.epochs {
        let lr = cfg.schedule().lr_at(trainer.epoch);
        let loss = trainer.run_epoch(&train.samples)?;
        let epoch = trainer.epoch;
        let eval_due = cfg.validate_every > 0 && epoch % cfg.validate_every == 0;
        let mut entry = EpochLog { epoch, lr, loss, val: None, train_miou: None };
        if eval_due {
            if let Some(val) = val.filter(|v| !v.is_empty()) {
                let ev = evaluate(&trainer.model, &val.samples, cfg.batch_size, false)?;
                let (rd, ra) = ev.scores();
                let score = ev.score();
                if trainer.best_score.is_none_or(|b| score > b) {
                    trainer.best_score = Some(score);
                    if let Some(dir) = out {
                        trainer.save(&dir.join("best"))?;
                    }
                }
                entry.val = Some((rd, ra, ev.coherence));
            }
            if cfg.target_train_miou.is_some() {
                let ev = evaluate(&trainer.model, &train.samples, cfg.batch_size, false)?;
                let (rd, ra) = ev.scores();
                entry.train_miou = Some((rd.miou, ra.miou));
            }
        }
        log::info!(
            "epoch {epoch} lr {lr:.3e} loss {:.5} (wce {:.4}/{:.4} sdice {:.4}/{:.4} col {:.4}){}{}",
            loss.total,
            loss.wce_rd,
            loss.wce_ra,
            loss.sdice_rd,
            loss.sdice_ra,
            loss.col,
            entry.val.as_ref().map_or(String::new(), |(rd, ra, _)| format!(" val mIoU {:.2}/{:.2}", rd.miou, ra.miou)),
            entry.train_miou.map_or(String::new(), |(rd, ra)| format!(" train mIoU {rd:.2}/{ra:.2}")),
        );
        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{}", entry.csv_row()).map_err(|e| Error::io(path.as_path(), e))?;
        }
        let reached = match (cfg.target_train_miou, entry.train_miou) {
            (Some(target), Some((rd, ra))) => rd >= target && ra >= target,
            _ => false,
        };
        outcome.history.push(entry);
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                trainer.save(&dir.join("last"))?;
            }
        }
        if reached {
            outcome.stopped_early = trainer.epoch < cfg.epochs;
            break;
        }
    }
    if let Some(dir) = out {
        trainer.save(&dir.join("last"))?;
    }
    Ok(outcome)
}
