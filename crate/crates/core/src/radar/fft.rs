//! In-place iterative radix-2 FFT.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Precomputed twiddles for one transform length.
#[derive(Clone, Debug)]
pub struct Radix2Fft {
    n: usize,
    twiddles: Vec<Complex64>,
}

impl Radix2Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Config(format!("FFT length {n} is not a power of two")));
        }
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Ok(Radix2Fft { n, twiddles })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform `X[k] = Σ x[n]·e^{−2πi·kn/N}`.
    pub fn process(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "buffer length differs from plan length");
        let n = self.n;
        if n < 2 {
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * step];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

/// Rotates a spectrum so the zero-frequency bin sits at index `n/2`.
pub fn fft_shift(buf: &mut [Complex64]) {
    let n = buf.len();
    buf.rotate_right(n / 2);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Radix2Fft::new(12).is_err());
        assert!(Radix2Fft::new(0).is_err());
        assert!(Radix2Fft::new(1).is_ok());
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let plan = Radix2Fft::new(8).unwrap();
        let mut x = vec![Complex64::new(0.0, 0.0); 8];
        x[0] = Complex64::new(1.0, 0.0);
        plan.process(&mut x);
        assert!(x.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn shift_centres_dc() {
        let mut x: Vec<Complex64> = (0..4).map(|i| Complex64::new(i as f64, 0.0)).collect();
        fft_shift(&mut x);
        assert_eq!(x[2].re, 0.0);
        assert_eq!(x[0].re, 2.0);
    }
}
