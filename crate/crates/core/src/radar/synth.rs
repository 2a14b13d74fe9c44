use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::fft::{fft_shift, Radix2Fft};
use super::{PointTarget, RadarParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Log floor applied to mean powers before conversion to dB.
pub const POWER_FLOOR: f64 = 1e-12;

/// Raw complex samples laid out `[fast time, antenna, chirp]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdcCube {
    pub samples: usize,
    pub antennas: usize,
    pub chirps: usize,
    pub data: Vec<Complex64>,
}

impl AdcCube {
    pub fn zeros(samples: usize, antennas: usize, chirps: usize) -> Self {
        AdcCube { samples, antennas, chirps, data: vec![Complex64::new(0.0, 0.0); samples * antennas * chirps] }
    }
}

/// Complex range × angle × Doppler cube.
#[derive(Clone, Debug, PartialEq)]
pub struct RadTensor {
    pub n_range: usize,
    pub n_angle: usize,
    pub n_doppler: usize,
    pub data: Vec<Complex64>,
}

impl RadTensor {
    pub fn zeros(n_range: usize, n_angle: usize, n_doppler: usize) -> Self {
        RadTensor { n_range, n_angle, n_doppler, data: vec![Complex64::new(0.0, 0.0); n_range * n_angle * n_doppler] }
    }

    pub fn at(&self, r: usize, a: usize, d: usize) -> Complex64 {
        self.data[(r * self.n_angle + a) * self.n_doppler + d]
    }

    /// `(range, angle, doppler)` of the largest modulus (first on ties).
    pub fn argmax(&self) -> [usize; 3] {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if v.norm_sqr() > self.data[best].norm_sqr() {
                best = i;
            }
        }
        let d = best % self.n_doppler;
        let a = (best / self.n_doppler) % self.n_angle;
        let r = best / (self.n_doppler * self.n_angle);
        [r, a, d]
    }
}

/// dB views of one cube, kept in double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Views {
    /// Mean over angle: `n_range × n_doppler`.
    pub rd: Tensor<f64>,
    /// Mean over range: `n_angle × n_doppler`.
    pub ad: Tensor<f64>,
    /// Mean over Doppler: `n_range × n_angle`.
    pub ra: Tensor<f64>,
}

/// Sums one complex sinusoid per target over fast time, antenna and chirp,
/// plus complex white Gaussian noise of standard deviation
/// `params.noise_std` (skipped when zero).
pub fn synthesize_adc(params: &RadarParams, targets: &[PointTarget], seed: u64) -> Result<AdcCube> {
    params.validate()?;
    let (ns, na, nc) = (params.n_range, params.n_antennas, params.n_doppler);
    let mut cube = AdcCube::zeros(ns, na, nc);
    for t in targets {
        params.check_coverage(t)?;
        let fr = params.range_bin(t.range) / ns as f64;
        let fa = t.angle.sin() / 2.0;
        let fd = (params.doppler_bin(t.velocity) - nc as f64 / 2.0) / nc as f64;
        let amp = t.rcs.sqrt();
        let rv: Vec<Complex64> = (0..ns).map(|n| Complex64::from_polar(amp, 2.0 * PI * fr * n as f64)).collect();
        let av: Vec<Complex64> = (0..na).map(|m| Complex64::from_polar(1.0, 2.0 * PI * fa * m as f64)).collect();
        let dv: Vec<Complex64> = (0..nc).map(|l| Complex64::from_polar(1.0, 2.0 * PI * fd * l as f64)).collect();
        for (s, r) in rv.iter().enumerate() {
            for (m, a) in av.iter().enumerate() {
                let ra = r * a;
                let row = &mut cube.data[(s * na + m) * nc..][..nc];
                for (cell, d) in row.iter_mut().zip(&dv) {
                    *cell += ra * d;
                }
            }
        }
    }
    if params.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = params.noise_std / 2f64.sqrt();
        for cell in &mut cube.data {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *cell += Complex64::new(sigma * re, sigma * im);
        }
    }
    Ok(cube)
}

/// Range FFT over fast time, angle FFT over the (zero-padded) antennas and
/// Doppler FFT over chirps; angle and Doppler spectra are shifted so
/// boresight and zero velocity sit at the centre bins.
pub fn fft_chain(adc: &AdcCube, n_angle: usize) -> Result<RadTensor> {
    let (ns, na, nc) = (adc.samples, adc.antennas, adc.chirps);
    if na > n_angle {
        return Err(Error::Config(format!("{na} antennas exceed angle FFT size {n_angle}")));
    }
    let range_fft = Radix2Fft::new(ns)?;
    let angle_fft = Radix2Fft::new(n_angle)?;
    let doppler_fft = Radix2Fft::new(nc)?;

    let mut rad = RadTensor::zeros(ns, n_angle, nc);
    let mut buf = vec![Complex64::new(0.0, 0.0); ns];
    // range: gather each (antenna, chirp) column
    for m in 0..na {
        for l in 0..nc {
            for (s, b) in buf.iter_mut().enumerate() {
                *b = adc.data[(s * na + m) * nc + l];
            }
            range_fft.process(&mut buf);
            for (s, b) in buf.iter().enumerate() {
                rad.data[(s * n_angle + m) * nc + l] = *b;
            }
        }
    }
    let mut abuf = vec![Complex64::new(0.0, 0.0); n_angle];
    for s in 0..ns {
        for l in 0..nc {
            for (m, b) in abuf.iter_mut().enumerate() {
                *b = rad.data[(s * n_angle + m) * nc + l];
            }
            angle_fft.process(&mut abuf);
            fft_shift(&mut abuf);
            for (m, b) in abuf.iter().enumerate() {
                rad.data[(s * n_angle + m) * nc + l] = *b;
            }
        }
    }
    for row in rad.data.chunks_mut(nc) {
        doppler_fft.process(row);
        fft_shift(row);
    }
    Ok(rad)
}

/// Fully developed speckle: every bin's intensity is multiplied by an
/// independent unit-mean exponential draw and its phase is replaced by a
/// uniform one.
pub fn apply_speckle(rad: &RadTensor, seed: u64) -> RadTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = rad
        .data
        .iter()
        .map(|v| {
            let intensity: f64 = Exp1.sample(&mut rng);
            let phase = rng.random::<f64>() * 2.0 * PI;
            Complex64::from_polar(v.norm() * intensity.sqrt(), phase)
        })
        .collect();
    RadTensor { n_range: rad.n_range, n_angle: rad.n_angle, n_doppler: rad.n_doppler, data }
}

/// Averages `|X|²` over the axis each view lacks and converts to dB with a
/// `1e-12` power floor.
pub fn aggregate_views(rad: &RadTensor) -> Views {
    let (nr, na, nd) = (rad.n_range, rad.n_angle, rad.n_doppler);
    let mut rd = vec![0.0; nr * nd];
    let mut ad = vec![0.0; na * nd];
    let mut ra = vec![0.0; nr * na];
    for r in 0..nr {
        for a in 0..na {
            let row = &rad.data[(r * na + a) * nd..][..nd];
            for (d, v) in row.iter().enumerate() {
                let p = v.norm_sqr();
                rd[r * nd + d] += p;
                ad[a * nd + d] += p;
                ra[r * na + a] += p;
            }
        }
    }
    let to_db = |sum: f64, n: usize| 10.0 * (sum / n as f64).max(POWER_FLOOR).log10();
    Views {
        rd: Tensor::from_parts(vec![nr, nd], rd.into_iter().map(|s| to_db(s, na)).collect()),
        ad: Tensor::from_parts(vec![na, nd], ad.into_iter().map(|s| to_db(s, nr)).collect()),
        ra: Tensor::from_parts(vec![nr, na], ra.into_iter().map(|s| to_db(s, nd)).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(n_range: usize, n_angle: usize, n_doppler: usize) -> RadarParams {
        RadarParams { noise_std: 0.0, ..RadarParams::with_extents(n_range, n_angle, n_doppler) }
    }

    fn target(range: f64, velocity: f64, angle: f64) -> PointTarget {
        PointTarget { range, velocity, angle, rcs: 1.0, class_id: 3, extent: [1.0; 3] }
    }

    #[test]
    fn no_targets_no_noise_is_silent() {
        let p = quiet(16, 16, 8);
        let adc = synthesize_adc(&p, &[], 1).unwrap();
        assert!(adc.data.iter().all(|v| v.norm() == 0.0));
        let rad = fft_chain(&adc, p.n_angle).unwrap();
        assert!(rad.data.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn superposition_holds_without_noise() {
        let p = quiet(16, 16, 8);
        let a = target(10.0, 2.0, 0.3);
        let b = target(30.0, -4.0, -0.5);
        let both = synthesize_adc(&p, &[a.clone(), b.clone()], 0).unwrap();
        let sa = synthesize_adc(&p, &[a], 0).unwrap();
        let sb = synthesize_adc(&p, &[b], 0).unwrap();
        for ((x, y), z) in both.data.iter().zip(&sa.data).zip(&sb.data) {
            assert!((x - (y + z)).norm() < 1e-12);
        }
    }

    #[test]
    fn beat_frequency_matches_range_mapping() {
        // The fast-time phase advance per sample is 2π·range_bin/n_range.
        let p = quiet(32, 8, 8);
        let t = target(p.range_of_bin(5.25), 0.0, 0.0);
        let adc = synthesize_adc(&p, &[t], 0).unwrap();
        let stride = p.n_antennas * p.n_doppler;
        let step = adc.data[stride] / adc.data[0];
        let expected = 2.0 * PI * 5.25 / 32.0;
        assert!((step.arg() - expected).abs() < 1e-12);
    }

    #[test]
    fn out_of_coverage_target_is_rejected() {
        let p = quiet(16, 16, 8);
        assert!(synthesize_adc(&p, &[target(-1.0, 0.0, 0.0)], 0).is_err());
    }

    #[test]
    fn non_power_of_two_extents_are_rejected() {
        let adc = AdcCube::zeros(12, 4, 8);
        assert!(fft_chain(&adc, 16).is_err());
    }

    #[test]
    fn uniform_modulus_views() {
        let mut rad = RadTensor::zeros(4, 8, 2);
        for v in &mut rad.data {
            *v = Complex64::from_polar(3.0, 0.7);
        }
        let views = aggregate_views(&rad);
        let expected = 20.0 * 3f64.log10();
        for t in [&views.rd, &views.ad, &views.ra] {
            assert!(t.data().iter().all(|&v| (v - expected).abs() < 1e-12));
        }
        for v in &mut rad.data {
            *v = Complex64::new(0.0, 1.0);
        }
        let views = aggregate_views(&rad);
        assert!(views.ra.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn speckle_is_seeded_and_multiplicative() {
        let mut rad = RadTensor::zeros(4, 4, 4);
        let zero = apply_speckle(&rad, 3);
        assert!(zero.data.iter().all(|v| v.norm() == 0.0));
        for v in &mut rad.data {
            *v = Complex64::new(1.0, 0.0);
        }
        assert_eq!(apply_speckle(&rad, 9), apply_speckle(&rad, 9));
        assert_ne!(apply_speckle(&rad, 9), apply_speckle(&rad, 10));
    }
}
