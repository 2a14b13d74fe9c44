use std::fmt;
use std::str::FromStr;

use crate::dataset::InputLayout;
use crate::error::{Error, Result};
use crate::radar::NUM_CLASSES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// RD and RA encoder-decoders sharing a latent space.
    MvNet,
    /// MV-Net with an ASPP module per encoder.
    MvaNetA,
    /// MVA-Net(a) with a third (AD) encoder feeding both decoders.
    MvaNetB,
    /// MVA-Net(b) whose encoders start with temporal 3D convolutions.
    TmvaNet,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::MvNet, Variant::MvaNetA, Variant::MvaNetB, Variant::TmvaNet];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MvNet => "mv_net",
            Variant::MvaNetA => "mva_net_a",
            Variant::MvaNetB => "mva_net_b",
            Variant::TmvaNet => "tmva_net",
        }
    }

    pub fn uses_ad(self) -> bool {
        matches!(self, Variant::MvaNetB | Variant::TmvaNet)
    }

    pub fn has_aspp(self) -> bool {
        self != Variant::MvNet
    }

    pub fn is_temporal(self) -> bool {
        self == Variant::TmvaNet
    }

    /// Past frames stacked with the current one.
    pub fn default_q(self) -> usize {
        if self.is_temporal() {
            4
        } else {
            2
        }
    }

    pub fn layout(self) -> InputLayout {
        if self.is_temporal() {
            InputLayout::Depth
        } else {
            InputLayout::Channels
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::Config(format!("unknown variant {s:?} (expected mv_net, mva_net_a, mva_net_b or tmva_net)"))
        })
    }
}

/// Architecture description.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_classes: usize,
    pub q: usize,
    pub n_range: usize,
    pub n_angle: usize,
    pub n_doppler: usize,
    /// Multiplier on the 128 base channels.
    pub width: f64,
    /// Dilation rates of the atrous ASPP branches.
    pub aspp_rates: Vec<usize>,
}

impl ModelConfig {
    /// Full-size defaults: 256 × 256 × 64 views, width 1, four classes.
    pub fn new(variant: Variant) -> Self {
        ModelConfig {
            variant,
            n_classes: NUM_CLASSES,
            q: variant.default_q(),
            n_range: 256,
            n_angle: 256,
            n_doppler: 64,
            width: 1.0,
            aspp_rates: vec![6, 12, 18],
        }
    }

    pub fn with_extents(mut self, n_range: usize, n_angle: usize, n_doppler: usize) -> Self {
        (self.n_range, self.n_angle, self.n_doppler) = (n_range, n_angle, n_doppler);
        self
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width = width;
        self
    }

    pub fn channels(&self) -> usize {
        ((128.0 * self.width).round() as usize).max(1)
    }

    pub fn frames(&self) -> usize {
        self.q + 1
    }

    /// Checks everything except per-layer extents, which the build-time
    /// shape trace covers.
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!("width must be positive, got {}", self.width)));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if self.variant.is_temporal() && !matches!(self.frames(), 3 | 5) {
            return Err(Error::Config(format!(
                "{} stacks q+1 = {} frames; its two temporal convolutions collapse only 3 or 5 frames to depth 1",
                self.variant,
                self.frames()
            )));
        }
        if self.variant.has_aspp() && self.aspp_rates.is_empty() {
            return Err(Error::Config("ASPP needs at least one dilation rate".into()));
        }
        for (name, n) in [("n_range", self.n_range), ("n_angle", self.n_angle)] {
            if n == 0 || n % 4 != 0 {
                return Err(Error::Config(format!("{name} = {n} must be a positive multiple of 4")));
            }
        }
        if self.n_doppler == 0 {
            return Err(Error::Config("n_doppler must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("unet".parse::<Variant>().is_err());
    }

    #[test]
    fn temporal_depth_is_checked() {
        let mut c = ModelConfig::new(Variant::TmvaNet);
        assert_eq!(c.frames(), 5);
        c.validate().unwrap();
        c.q = 3;
        assert!(c.validate().is_err());
        c.q = 2;
        c.validate().unwrap();
    }

    #[test]
    fn width_scales_channels() {
        let c = ModelConfig::new(Variant::MvNet);
        assert_eq!(c.channels(), 128);
        assert_eq!(c.with_width(0.125).channels(), 16);
    }
}
