//! Checkpoint directories: `meta.txt`, `config.txt` and one RSEG file per
//! tensor under `params/`, `bn/` and `adam/`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{parse_key_values, rseg, KeyValues};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

use super::adam::AdamState;
use super::config::{Precision, TrainConfig};
use super::trainer::{model_config, Extents, TrainScalar, Trainer};

const FORMAT: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    let mut out = [0u8; 32];
    if s.len() != 64 {
        return None;
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn tensor_path(dir: &Path, group: &str, name: &str, suffix: &str) -> PathBuf {
    dir.join(group).join(format!("{name}{suffix}.rseg"))
}

/// Precision a checkpoint was written in.
pub fn checkpoint_precision(dir: &Path) -> Result<Precision> {
    let path = dir.join("config.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let map = parse_key_values(&text, &path)?;
    KeyValues { map: &map, origin: &path }.get::<String>("precision")?.parse()
}

impl<T: TrainScalar> Trainer<T> {
    /// Writes the complete training state to `dir`, replacing any previous
    /// checkpoint there only once the new one is complete.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = dir.with_extension("partial");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        for group in ["params", "bn", "adam"] {
            let p = tmp.join(group);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let e = self.extents();
        let meta = [
            format!("format={FORMAT}"),
            format!("epoch={}", self.epoch),
            format!("step={}", self.step),
            format!("adam_step={}", self.adam.step),
            format!("best_score={}", self.best_score.map_or("none".into(), |v| v.to_string())),
            format!("rng_seed={}", hex(&self.rng.get_seed())),
            format!("rng_stream={}", self.rng.get_stream()),
            format!("rng_word_pos={}", self.rng.get_word_pos()),
            format!("n_range={}", e.n_range),
            format!("n_angle={}", e.n_angle),
            format!("n_doppler={}", e.n_doppler),
            format!("n_classes={}", e.n_classes),
            format!("rd_weights={}", join(&self.rd_weights)),
            format!("ra_weights={}", join(&self.ra_weights)),
        ]
        .join("\n")
            + "\n";
        let write = |path: PathBuf, text: &str| fs::write(&path, text).map_err(|e| Error::io(&path, e));
        write(tmp.join("meta.txt"), &meta)?;
        let mut cfg = self.config.clone();
        cfg.precision = T::PRECISION;
        write(tmp.join("config.txt"), &cfg.to_key_values())?;
        let params = &self.model.params;
        for (i, p) in params.params.iter().enumerate() {
            rseg::save(&tensor_path(&tmp, "params", &p.name, ""), &p.value)?;
            rseg::save(&tensor_path(&tmp, "adam", &p.name, ".m"), &self.adam.m[i])?;
            rseg::save(&tensor_path(&tmp, "adam", &p.name, ".v"), &self.adam.v[i])?;
        }
        for b in &params.buffers {
            let n = b.mean.len();
            rseg::save(&tensor_path(&tmp, "bn", &b.name, ".mean"), &Tensor::new(vec![n], b.mean.clone())?)?;
            rseg::save(&tensor_path(&tmp, "bn", &b.name, ".var"), &Tensor::new(vec![n], b.var.clone())?)?;
        }
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }

    /// Restores a state saved by [`Trainer::save`]. `f32` files widen into
    /// an `f64` trainer; the reverse is refused.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.txt");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let map = parse_key_values(&text, &meta_path)?;
        let kv = KeyValues { map: &map, origin: &meta_path };
        let format: u32 = kv.get("format")?;
        if format != FORMAT {
            return Err(Error::format(&meta_path, format!("checkpoint format {format}, expected {FORMAT}")));
        }
        let config = TrainConfig::load(&dir.join("config.txt"), None)?;
        let extents = Extents {
            n_range: kv.get("n_range")?,
            n_angle: kv.get("n_angle")?,
            n_doppler: kv.get("n_doppler")?,
            n_classes: kv.get("n_classes")?,
        };
        let mut model = Model::<T>::build(model_config(&config, extents), 0)?;
        let mut adam = AdamState::new(&model.params, config.adam);
        let store = &mut model.params;
        for (i, p) in store.params.iter_mut().enumerate() {
            let load = |group: &str, suffix: &str| -> Result<Tensor<T>> {
                let path = tensor_path(dir, group, &p.name, suffix);
                let t: Tensor<T> = rseg::load(&path)?;
                if t.shape() != p.value.shape() {
                    return Err(Error::format(&path, format!("shape {:?}, model expects {:?}", t.shape(), p.value.shape())));
                }
                Ok(t)
            };
            adam.m[i] = load("adam", ".m")?;
            adam.v[i] = load("adam", ".v")?;
            p.value = load("params", "")?;
        }
        for b in &mut store.buffers {
            for (suffix, dst) in [(".mean", &mut b.mean), (".var", &mut b.var)] {
                let path = tensor_path(dir, "bn", &b.name, suffix);
                let t: Tensor<T> = rseg::load(&path)?;
                if t.shape() != [dst.len()] {
                    return Err(Error::format(&path, format!("shape {:?}, expected [{}]", t.shape(), dst.len())));
                }
                *dst = t.into_data();
            }
        }
        adam.step = kv.get("adam_step")?;
        let seed = unhex(&kv.get::<String>("rng_seed")?).ok_or_else(|| Error::format(&meta_path, "malformed rng_seed"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(kv.get("rng_stream")?);
        rng.set_word_pos(kv.get("rng_word_pos")?);
        let best: String = kv.get("best_score")?;
        let best_score = match best.as_str() {
            "none" => None,
            _ => Some(kv.get("best_score")?),
        };
        Ok(Trainer {
            config,
            model,
            adam,
            rng,
            epoch: kv.get("epoch")?,
            step: kv.get("step")?,
            best_score,
            rd_weights: kv.list("rd_weights")?,
            ra_weights: kv.list("ra_weights")?,
        })
    }
}
