//! Periodic Gaussian random fields on `[0, 1]²`.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;

use super::fft::{wavenumber, Fft2};
use crate::rng::{standard_normal, stream};
use crate::Result;

/// Spectrum `√2 · τ^(α−1) · (4π²|k|² + τ²)^(−α/2)`, zero at `k = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrfSpectrum {
    pub alpha: f64,
    pub tau: f64,
}

impl Default for GrfSpectrum {
    fn default() -> Self {
        Self { alpha: 2.5, tau: 7.0 }
    }
}

impl GrfSpectrum {
    pub fn amplitude(&self, kx: f64, ky: f64) -> f64 {
        if kx == 0.0 && ky == 0.0 {
            return 0.0;
        }
        let four_pi2 = 4.0 * core::f64::consts::PI * core::f64::consts::PI;
        let lap = four_pi2 * (kx * kx + ky * ky) + self.tau * self.tau;
        core::f64::consts::SQRT_2 * Float::powf(self.tau, self.alpha - 1.0) * Float::powf(lap, -self.alpha / 2.0)
    }

    /// Modes kept on an `n`-point grid: both components strictly inside `±n/2`.
    fn modes(n: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..n)
            .flat_map(move |i| (0..n).map(move |j| (i, j)))
            .filter(move |&(i, j)| i != n / 2 && j != n / 2)
    }

    /// Pointwise variance of a field drawn on an `n`-point grid.
    pub fn pointwise_variance(&self, n: usize) -> f64 {
        Self::modes(n)
            .map(|(i, j)| {
                let a = self.amplitude(wavenumber(i, n), wavenumber(j, n));
                a * a
            })
            .sum()
    }
}

fn mode_key(kx: f64, ky: f64) -> u64 {
    ((kx as i64 as u64) << 32) ^ (ky as i64 as u32 as u64)
}

/// Draws a zero-mean field sampled at `x_i = i/n`.
///
/// Each mode's complex coefficient comes from its own stream keyed by the
/// signed wavenumber pair, so low modes agree across grid sizes.
pub fn gaussian_random_field(n: usize, spectrum: &GrfSpectrum, seed: u64) -> Result<Vec<f64>> {
    let mut fft = Fft2::new(n)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    for (i, j) in GrfSpectrum::modes(n) {
        let (kx, ky) = (wavenumber(i, n), wavenumber(j, n));
        let a = spectrum.amplitude(kx, ky);
        if a == 0.0 {
            continue;
        }
        let mut rng = stream(seed, mode_key(kx, ky));
        let re = standard_normal(&mut rng);
        let im = standard_normal(&mut rng);
        buf[i * n + j] = Complex64::new(re * a, im * a);
    }
    fft.inverse(&mut buf);
    let scale = (n * n) as f64;
    Ok(buf.iter().map(|c| c.re * scale).collect())
}
