use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{parse_key_values, KeyValues};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::Variant;

use super::adam::{AdamConfig, LrSchedule};

/// Floating-point width of training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision {s:?} (expected f32 or f64)"))),
        }
    }
}

/// Training protocol. Every field maps to one `key=value` line.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub q: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_gamma: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub seed: u64,
    /// Epochs between `last` checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub width: f64,
    pub aspp_rates: Vec<usize>,
    pub precision: Precision,
    pub augment: bool,
    /// Epochs between validation passes; 0 disables validation.
    pub validate_every: usize,
    /// Stop once the eval-mode train mIoU of both views reaches this value
    /// (percent), checked every `validate_every` epochs.
    pub target_train_miou: Option<f64>,
}

impl TrainConfig {
    /// Desk profile: width 1/4, batch 4.
    pub fn new(variant: Variant) -> Self {
        TrainConfig {
            variant,
            q: variant.default_q(),
            batch_size: 4,
            lr: 1e-4,
            lr_decay_gamma: 0.9,
            lr_decay_every: 10,
            epochs: 300,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            seed: 0,
            checkpoint_every: 10,
            width: 0.25,
            aspp_rates: vec![6, 12, 18],
            precision: Precision::F32,
            augment: true,
            validate_every: 1,
            target_train_miou: None,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { base: self.lr, gamma: self.lr_decay_gamma, every: self.lr_decay_every }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_decay_gamma > 0.0 && self.lr_decay_gamma <= 1.0) {
            return bad(format!("lr_decay_gamma must lie in (0, 1], got {}", self.lr_decay_gamma));
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be at least 1".into());
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad(format!("adam parameters out of range: {a:?}"));
        }
        self.loss.validate()
    }

    pub fn to_key_values(&self) -> String {
        let rates: Vec<String> = self.aspp_rates.iter().map(ToString::to_string).collect();
        let lines = [
            format!("variant={}", self.variant),
            format!("q={}", self.q),
            format!("batch_size={}", self.batch_size),
            format!("lr={:e}", self.lr),
            format!("lr_decay_gamma={}", self.lr_decay_gamma),
            format!("lr_decay_every={}", self.lr_decay_every),
            format!("epochs={}", self.epochs),
            format!("beta1={}", self.adam.beta1),
            format!("beta2={}", self.adam.beta2),
            format!("adam_eps={:e}", self.adam.eps),
            format!("lambda_wce={}", self.loss.wce),
            format!("lambda_sdice={}", self.loss.sdice),
            format!("lambda_col={}", self.loss.col),
            format!("seed={}", self.seed),
            format!("checkpoint_every={}", self.checkpoint_every),
            format!("width={}", self.width),
            format!("aspp_rates={}", rates.join(",")),
            format!("precision={}", self.precision),
            format!("augment={}", self.augment),
            format!("validate_every={}", self.validate_every),
            format!("target_train_miou={}", self.target_train_miou.map_or("none".into(), |v| v.to_string())),
        ];
        lines.join("\n") + "\n"
    }

    /// Starts from the defaults of `variant` (or of the file's `variant`
    /// key) and overrides every listed key. Unknown keys are errors.
    pub fn parse(text: &str, origin: &Path, variant: Option<Variant>) -> Result<Self> {
        let map = parse_key_values(text, origin)?;
        let kv = KeyValues { map: &map, origin };
        let v = match (variant, map.contains_key("variant")) {
            (Some(v), _) => v,
            (None, true) => kv.get::<String>("variant")?.parse()?,
            (None, false) => {
                return Err(Error::Config(format!("{}: no variant given", origin.display())));
            }
        };
        let mut c = TrainConfig::new(v);
        c.apply(&map, origin)?;
        if let Some(v) = variant {
            c.variant = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path, variant: Option<Variant>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, variant)
    }

    fn apply(&mut self, map: &BTreeMap<String, String>, origin: &Path) -> Result<()> {
        let kv = KeyValues { map, origin };
        for key in map.keys() {
            let k = key.as_str();
            let cfg = |e: Error| Error::Config(e.to_string());
            match k {
                "variant" => self.variant = kv.get::<String>(k).map_err(cfg)?.parse()?,
                "q" => self.q = kv.get(k).map_err(cfg)?,
                "batch_size" => self.batch_size = kv.get(k).map_err(cfg)?,
                "lr" => self.lr = kv.get(k).map_err(cfg)?,
                "lr_decay_gamma" => self.lr_decay_gamma = kv.get(k).map_err(cfg)?,
                "lr_decay_every" => self.lr_decay_every = kv.get(k).map_err(cfg)?,
                "epochs" => self.epochs = kv.get(k).map_err(cfg)?,
                "beta1" => self.adam.beta1 = kv.get(k).map_err(cfg)?,
                "beta2" => self.adam.beta2 = kv.get(k).map_err(cfg)?,
                "adam_eps" => self.adam.eps = kv.get(k).map_err(cfg)?,
                "lambda_wce" => self.loss.wce = kv.get(k).map_err(cfg)?,
                "lambda_sdice" => self.loss.sdice = kv.get(k).map_err(cfg)?,
                "lambda_col" => self.loss.col = kv.get(k).map_err(cfg)?,
                "seed" => self.seed = kv.get(k).map_err(cfg)?,
                "checkpoint_every" => self.checkpoint_every = kv.get(k).map_err(cfg)?,
                "width" => self.width = kv.get(k).map_err(cfg)?,
                "aspp_rates" => self.aspp_rates = kv.list(k).map_err(cfg)?,
                "precision" => self.precision = kv.get::<String>(k).map_err(cfg)?.parse()?,
                "augment" => self.augment = kv.get(k).map_err(cfg)?,
                "validate_every" => self.validate_every = kv.get(k).map_err(cfg)?,
                "target_train_miou" => {
                    let raw: String = kv.get(k).map_err(cfg)?;
                    self.target_train_miou = match raw.as_str() {
                        "none" | "" => None,
                        _ => Some(kv.get(k).map_err(cfg)?),
                    };
                }
                _ => return Err(Error::Config(format!("{}: unknown key {k:?}", origin.display()))),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_key_values() {
        let mut c = TrainConfig::new(Variant::TmvaNet);
        c.lr = 3e-4;
        c.loss.col = 0.0;
        c.aspp_rates = vec![1, 2];
        c.target_train_miou = Some(95.0);
        c.precision = Precision::F64;
        let back = TrainConfig::parse(&c.to_key_values(), Path::new("c.txt"), None).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        let p = Path::new("c.txt");
        let err = TrainConfig::parse("variant=mv_net\nlearning_rate=1\n", p, None).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert!(TrainConfig::parse("lr=0\n", p, Some(Variant::MvNet)).is_err());
        assert!(TrainConfig::parse("batch_size=0\n", p, Some(Variant::MvNet)).is_err());
        assert!(TrainConfig::parse("lr=abc\n", p, Some(Variant::MvNet)).is_err());
        assert!(TrainConfig::parse("epochs=3\n", p, None).is_err());
    }

    #[test]
    fn command_line_variant_wins() {
        let c = TrainConfig::parse("variant=mv_net\nepochs=3\n", Path::new("c"), Some(Variant::TmvaNet)).unwrap();
        assert_eq!(c.variant, Variant::TmvaNet);
        assert_eq!(c.q, 4);
        assert_eq!(c.epochs, 3);
    }
}
