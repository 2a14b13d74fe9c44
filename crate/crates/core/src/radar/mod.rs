//! Desk-scale FMCW radar simulation.
//!
//! # Bin mappings
//!
//! The simulated radar samples the de-chirped beat signal as complex I/Q,
//! `n_range` samples per chirp, `n_doppler` chirps per frame and
//! `n_antennas` half-wavelength-spaced receive channels. With
//! `λ = c / carrier_hz`:
//!
//! * range: bandwidth `B = c / (2·range_resolution)`, so the beat frequency
//!   of a target at range `r` is `r / range_resolution` cycles per chirp
//!   and `range_bin(r) = r / range_resolution`, covering `[0, n_range·Δr)`.
//! * Doppler: the chirp-to-chirp phase advance is `4π·v·T_c/λ`; with
//!   `v_max = λ / (4·T_c)` the centred bin is
//!   `doppler_bin(v) = n_doppler/2 + v / Δv`, `Δv = 2·v_max / n_doppler`.
//! * angle: the element-to-element phase is `π·sin θ`, and the centred
//!   angle-FFT bin is `angle_bin(θ) = n_angle/2 + sin θ · n_angle/2`.
//!
//! Range and Doppler mappings are linear; the angle mapping is linear in
//! `sin θ` and monotone over the covered sector.

pub mod fft;
mod masks;
mod scene;
mod synth;

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use masks::{range_support, render_masks};
pub use scene::{class_name, simulate_sequence, ObjectClass, SceneObject, Scenario};
pub(crate) use scene::derive_seed;
pub use synth::{aggregate_views, apply_speckle, fft_chain, synthesize_adc, AdcCube, RadTensor, Views};

/// Speed of light (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Number of segmentation classes: background, pedestrian, cyclist, car.
pub const NUM_CLASSES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct RadarParams {
    pub n_range: usize,
    pub n_angle: usize,
    pub n_doppler: usize,
    /// Receive channels; the angle FFT zero-pads them to `n_angle`.
    pub n_antennas: usize,
    pub carrier_hz: f64,
    /// Metres per range bin.
    pub range_resolution: f64,
    /// Chirp repetition period in seconds.
    pub chirp_period: f64,
    /// Time between frames in seconds.
    pub frame_period: f64,
    /// Half-width of the covered azimuth sector (radians, < π/2).
    pub max_angle: f64,
    /// Standard deviation of the complex ADC noise (per sample, both
    /// quadratures combined).
    pub noise_std: f64,
}

impl RadarParams {
    /// Full-resolution profile: 256 × 256 × 64 bins.
    pub fn full() -> Self {
        RadarParams {
            n_range: 256,
            n_angle: 256,
            n_doppler: 64,
            n_antennas: 256,
            carrier_hz: 77e9,
            range_resolution: 0.2,
            chirp_period: 72.5e-6,
            frame_period: 0.1,
            max_angle: 60f64.to_radians(),
            noise_std: 4.0,
        }
    }

    /// Desk profile: every extent halved (128 × 128 × 32), same coverage.
    pub fn desk() -> Self {
        RadarParams {
            n_range: 128,
            n_angle: 128,
            n_doppler: 32,
            n_antennas: 128,
            range_resolution: 0.4,
            ..Self::full()
        }
    }

    /// Profile with arbitrary extents and the desk coverage.
    pub fn with_extents(n_range: usize, n_angle: usize, n_doppler: usize) -> Self {
        let desk = Self::desk();
        RadarParams {
            n_range,
            n_angle,
            n_doppler,
            n_antennas: n_angle,
            range_resolution: desk.max_range() / n_range as f64,
            ..desk
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("n_range", self.n_range),
            ("n_angle", self.n_angle),
            ("n_doppler", self.n_doppler),
            ("n_antennas", self.n_antennas),
        ] {
            if n < 2 {
                return Err(Error::Config(format!("{name} must be at least 2, got {n}")));
            }
        }
        if self.n_antennas > self.n_angle {
            return Err(Error::Config(format!(
                "n_antennas ({}) exceeds the angle FFT size ({})",
                self.n_antennas, self.n_angle
            )));
        }
        if !(self.max_angle > 0.0 && self.max_angle < FRAC_PI_2) {
            return Err(Error::Config("max_angle must lie in (0, π/2)".into()));
        }
        if self.range_resolution <= 0.0 || self.chirp_period <= 0.0 || self.carrier_hz <= 0.0 {
            return Err(Error::Config("resolution, chirp period and carrier must be positive".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn bandwidth(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.range_resolution)
    }

    pub fn max_range(&self) -> f64 {
        self.n_range as f64 * self.range_resolution
    }

    /// Unambiguous radial speed: `λ / (4·T_c)`.
    pub fn max_speed(&self) -> f64 {
        self.wavelength() / (4.0 * self.chirp_period)
    }

    pub fn velocity_resolution(&self) -> f64 {
        2.0 * self.max_speed() / self.n_doppler as f64
    }

    /// Fractional range bin of range `r` (metres).
    pub fn range_bin(&self, r: f64) -> f64 {
        r / self.range_resolution
    }

    /// Fractional centred Doppler bin of radial velocity `v` (m/s).
    pub fn doppler_bin(&self, v: f64) -> f64 {
        self.n_doppler as f64 / 2.0 + v / self.velocity_resolution()
    }

    /// Fractional centred angle bin of azimuth `theta` (radians).
    pub fn angle_bin(&self, theta: f64) -> f64 {
        let half = self.n_angle as f64 / 2.0;
        half + theta.sin() * half
    }

    pub fn range_of_bin(&self, bin: f64) -> f64 {
        bin * self.range_resolution
    }

    pub fn velocity_of_bin(&self, bin: f64) -> f64 {
        (bin - self.n_doppler as f64 / 2.0) * self.velocity_resolution()
    }

    pub fn angle_of_bin(&self, bin: f64) -> f64 {
        let half = self.n_angle as f64 / 2.0;
        ((bin - half) / half).clamp(-1.0, 1.0).asin()
    }

    /// Checks that a target lies inside the covered volume, naming the
    /// violated bound otherwise.
    pub fn check_coverage(&self, t: &PointTarget) -> Result<()> {
        if !(t.range >= 0.0 && t.range < self.max_range()) {
            return Err(Error::Config(format!(
                "target range {:.3} m outside [0, max_range = {:.3} m)",
                t.range,
                self.max_range()
            )));
        }
        let vmax = self.max_speed();
        if !(t.velocity >= -vmax && t.velocity < vmax) {
            return Err(Error::Config(format!(
                "target velocity {:.3} m/s outside [-max_speed, max_speed) = ±{vmax:.3} m/s",
                t.velocity
            )));
        }
        if !(t.angle.abs() <= self.max_angle) {
            return Err(Error::Config(format!(
                "target angle {:.4} rad outside ±max_angle = {:.4} rad",
                t.angle, self.max_angle
            )));
        }
        if !(t.rcs > 0.0) {
            return Err(Error::Config(format!("target rcs {} must be positive", t.rcs)));
        }
        Ok(())
    }

    /// Element count of the RAD cube divided by the element count of the
    /// three views.
    pub fn view_reduction_factor(&self) -> f64 {
        let cube = (self.n_range * self.n_angle * self.n_doppler) as f64;
        let views = (self.n_range * self.n_doppler + self.n_angle * self.n_doppler + self.n_range * self.n_angle) as f64;
        cube / views
    }
}

/// One point scatterer with the ground-truth footprint it paints.
#[derive(Clone, Debug, PartialEq)]
pub struct PointTarget {
    /// Metres.
    pub range: f64,
    /// Radial velocity in m/s, positive when receding.
    pub velocity: f64,
    /// Azimuth in radians, zero at boresight.
    pub angle: f64,
    /// Relative reflectivity (amplitude is `sqrt(rcs)`).
    pub rcs: f64,
    /// Class index in `1..NUM_CLASSES`.
    pub class_id: u8,
    /// Footprint half-widths in bins: `[range, doppler, angle]`, each ≥ 1.
    pub extent: [f64; 3],
}

impl PointTarget {
    /// Analytic `(range, angle, doppler)` fractional bins.
    pub fn bins(&self, params: &RadarParams) -> [f64; 3] {
        [params.range_bin(self.range), params.angle_bin(self.angle), params.doppler_bin(self.velocity)]
    }
}

/// One frame: dB views, masks and its index in the sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewFrame {
    /// `n_range × n_doppler`.
    pub rd: Tensor<f32>,
    /// `n_angle × n_doppler`.
    pub ad: Tensor<f32>,
    /// `n_range × n_angle`.
    pub ra: Tensor<f32>,
    pub rd_mask: Tensor<u8>,
    pub ra_mask: Tensor<u8>,
    pub timestamp: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_factor_at_full_extents() {
        let f = RadarParams::full().view_reduction_factor();
        // 256·256·64 / (256·64 + 256·64 + 256·256)
        assert!((f - 4_194_304.0 / 98_304.0).abs() < 1e-12);
    }

    #[test]
    fn bin_mappings_invert() {
        let p = RadarParams::desk();
        for &r in &[0.0, 3.3, 40.0] {
            assert!((p.range_of_bin(p.range_bin(r)) - r).abs() < 1e-12);
        }
        for &v in &[-5.0, 0.0, 7.5] {
            assert!((p.velocity_of_bin(p.doppler_bin(v)) - v).abs() < 1e-12);
        }
        for &a in &[-0.9, 0.0, 0.4] {
            assert!((p.angle_of_bin(p.angle_bin(a)) - a).abs() < 1e-12);
        }
        assert_eq!(p.doppler_bin(0.0), 16.0);
        assert_eq!(p.angle_bin(0.0), 64.0);
    }

    #[test]
    fn coverage_names_the_bound() {
        let p = RadarParams::desk();
        let t = PointTarget { range: 1e3, velocity: 0.0, angle: 0.0, rcs: 1.0, class_id: 1, extent: [1.0; 3] };
        let err = p.check_coverage(&t).unwrap_err().to_string();
        assert!(err.contains("max_range"), "{err}");
        let t = PointTarget { range: 5.0, velocity: 1e3, ..t };
        assert!(p.check_coverage(&t).unwrap_err().to_string().contains("max_speed"));
    }
}
