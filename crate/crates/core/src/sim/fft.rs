//! Radix-2 complex FFT and its 2-D extension for power-of-two grids.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::{Error, Result};

/// Unnormalized transforms: `forward` uses e^{-2πi jk/n}, `inverse`
/// e^{+2πi jk/n}; neither divides by n.
#[derive(Clone, Debug)]
pub struct Fft {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Config(alloc::format!("FFT length {n} is not a power of two")));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Ok(Self { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * step];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, false)
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, true)
    }
}

/// 2-D transform over a row-major `n × n` array.
#[derive(Clone, Debug)]
pub struct Fft2 {
    fft: Fft,
    column: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self {
            fft: Fft::new(n)?,
            column: vec![Complex64::new(0.0, 0.0); n],
        })
    }

    pub fn n(&self) -> usize {
        self.fft.len()
    }

    fn run(&mut self, data: &mut [Complex64], inverse: bool) {
        let n = self.fft.len();
        for row in data.chunks_mut(n) {
            self.fft.run(row, inverse);
        }
        for j in 0..n {
            for i in 0..n {
                self.column[i] = data[i * n + j];
            }
            self.fft.run(&mut self.column, inverse);
            for i in 0..n {
                data[i * n + j] = self.column[i];
            }
        }
    }

    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.run(data, false)
    }

    /// Inverse transform including the `1/n²` normalization.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.run(data, true);
        let s = 1.0 / (self.n() * self.n()) as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

/// Signed integer wavenumber of FFT index `i` on an `n`-point grid.
pub fn wavenumber(i: usize, n: usize) -> f64 {
    if i < n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}
