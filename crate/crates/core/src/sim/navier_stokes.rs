//! Pseudo-spectral vorticity solver for 2-D incompressible flow on the unit torus.
//!
//! `∂t w + u·∇w = ν Δw + f`, with `u = (∂y ψ, −∂x ψ)` and `−Δψ = w`. The
//! nonlinear term is explicit and 2/3-dealiased; diffusion is Crank–Nicolson.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;

use super::fft::{wavenumber, Fft2};
use super::{gaussian_random_field, Equation, GrfSpectrum, SystemParams, Trajectory, DIVERGENCE_LIMIT, FRAME_COUNT};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NsSetup {
    /// Simulation grid.
    pub grid: usize,
    /// Stored grid; must divide `grid`.
    pub out_grid: usize,
    pub dt: f64,
    pub t_final: f64,
    pub frames: usize,
    /// Whole-run retries with the step halved before giving up.
    pub max_halvings: u32,
}

impl Default for NsSetup {
    fn default() -> Self {
        Self {
            grid: 256,
            out_grid: 64,
            dt: 1e-3,
            t_final: 10.0,
            frames: FRAME_COUNT,
            max_halvings: 4,
        }
    }
}

impl NsSetup {
    pub fn dt_out(&self) -> f64 {
        self.t_final / (self.frames - 1) as f64
    }
}

/// `A (sin 2π(x+y) + cos 2π(x+y))` at `x_i = i/n`.
pub fn forcing_field(n: usize, amplitude: f64) -> Vec<f64> {
    let mut f = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let s = TWO_PI * (i + j) as f64 / n as f64;
            f[i * n + j] = amplitude * (Float::sin(s) + Float::cos(s));
        }
    }
    f
}

struct Spectral {
    n: usize,
    fft: Fft2,
    kx: Vec<f64>,
    ky: Vec<f64>,
    /// `4π²|k|²`, with the mean mode set to 1.
    lap: Vec<f64>,
    dealias: Vec<bool>,
}

impl Spectral {
    fn new(n: usize) -> Result<Self> {
        let fft = Fft2::new(n)?;
        let mut kx = vec![0.0; n * n];
        let mut ky = vec![0.0; n * n];
        let mut lap = vec![0.0; n * n];
        let mut dealias = vec![false; n * n];
        let cut = (2.0 / 3.0) * (n / 2) as f64;
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (wavenumber(i, n), wavenumber(j, n));
                let k = i * n + j;
                kx[k] = a;
                ky[k] = b;
                lap[k] = if k == 0 { 1.0 } else { TWO_PI * TWO_PI * (a * a + b * b) };
                dealias[k] = a.abs() <= cut && b.abs() <= cut;
            }
        }
        Ok(Self {
            n,
            fft,
            kx,
            ky,
            lap,
            dealias,
        })
    }

    fn spectral(&mut self, real: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = real.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        buf
    }

    /// Inverse transform of `a_h + i b_h` for Hermitian `a_h`, `b_h`: the real
    /// part is `a` and the imaginary part is `b`.
    fn pair_to_real(&mut self, mut buf: Vec<Complex64>, a: &mut [f64], b: &mut [f64]) {
        self.fft.inverse(&mut buf);
        for (k, c) in buf.iter().enumerate() {
            a[k] = c.re;
            b[k] = c.im;
        }
    }

    /// Velocity `(∂y ψ, −∂x ψ)` from spectral vorticity.
    fn velocity(&mut self, w_h: &[Complex64], u: &mut [f64], v: &mut [f64]) {
        // u_h + i v_h = 2πi (ky − i kx) ψ_h = 2π (kx + i ky) ψ_h
        let buf = (0..self.n * self.n)
            .map(|k| Complex64::new(TWO_PI * self.kx[k], TWO_PI * self.ky[k]) * w_h[k] / self.lap[k])
            .collect();
        self.pair_to_real(buf, u, v);
    }

    /// Vorticity gradient `(∂x w, ∂y w)`.
    fn gradient(&mut self, w_h: &[Complex64], gx: &mut [f64], gy: &mut [f64]) {
        // 2πi kx w_h + i·2πi ky w_h = 2π (−ky + i kx) w_h
        let buf = (0..self.n * self.n)
            .map(|k| Complex64::new(-TWO_PI * self.ky[k], TWO_PI * self.kx[k]) * w_h[k])
            .collect();
        self.pair_to_real(buf, gx, gy);
    }
}

pub fn velocity_from_vorticity(w: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(w, n)?;
    let mut sp = Spectral::new(n)?;
    let mut w_h = sp.spectral(w);
    w_h[0] = Complex64::new(0.0, 0.0);
    let mut u = vec![0.0; n * n];
    let mut v = vec![0.0; n * n];
    sp.velocity(&w_h, &mut u, &mut v);
    Ok((u, v))
}

/// Max |∂x u + ∂y v| evaluated spectrally.
pub fn spectral_divergence(u: &[f64], v: &[f64], n: usize) -> Result<f64> {
    check_len(u, n)?;
    check_len(v, n)?;
    let mut sp = Spectral::new(n)?;
    let u_h = sp.spectral(u);
    let v_h = sp.spectral(v);
    let i2pi = Complex64::new(0.0, TWO_PI);
    let mut buf: Vec<Complex64> = (0..n * n)
        .map(|k| i2pi * (sp.kx[k] * u_h[k] + sp.ky[k] * v_h[k]))
        .collect();
    sp.fft.inverse(&mut buf);
    Ok(buf.iter().fold(0.0, |m, c| Float::max(m, c.norm())))
}

fn check_len(a: &[f64], n: usize) -> Result<()> {
    if a.len() != n * n {
        return Err(Error::Config(format!("field has {} values, expected {n}×{n}", a.len())));
    }
    Ok(())
}

fn run(sp: &mut Spectral, params: &SystemParams, setup: &NsSetup, w0: &[f64], dt: f64) -> Result<Vec<Vec<f64>>> {
    let n = sp.n;
    let stride = n / setup.out_grid;
    let steps_per_frame = Float::round(setup.dt_out() / dt) as usize;
    let f_h = sp.spectral(&forcing_field(n, params.amplitude));
    let mut w_h = sp.spectral(w0);
    let nu = params.nu;

    let mut u = vec![0.0; n * n];
    let mut v = vec![0.0; n * n];
    let mut wx = vec![0.0; n * n];
    let mut wy = vec![0.0; n * n];
    let mut w = w0.to_vec();

    let downsample = |w: &[f64]| -> Vec<f64> {
        let m = setup.out_grid;
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = w[i * stride * n + j * stride];
            }
        }
        out
    };

    let mut frames = Vec::with_capacity(setup.frames);
    frames.push(downsample(&w));
    let mut step = 0usize;
    for _ in 1..setup.frames {
        for _ in 0..steps_per_frame {
            sp.velocity(&w_h, &mut u, &mut v);
            sp.gradient(&w_h, &mut wx, &mut wy);
            let nl: Vec<f64> = (0..n * n).map(|k| u[k] * wx[k] + v[k] * wy[k]).collect();
            let mut nl_h = sp.spectral(&nl);
            for (k, z) in nl_h.iter_mut().enumerate() {
                if !sp.dealias[k] {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
            nl_h[0] = Complex64::new(0.0, 0.0);
            for k in 0..n * n {
                let d = 0.5 * dt * nu * sp.lap[k];
                w_h[k] = (-dt * nl_h[k] + dt * f_h[k] + (1.0 - d) * w_h[k]) / (1.0 + d);
            }
            step += 1;
        }
        let mut buf = w_h.clone();
        sp.fft.inverse(&mut buf);
        let mut worst = 0.0f64;
        for (dst, c) in w.iter_mut().zip(&buf) {
            *dst = c.re;
            worst = worst.max(c.re.abs());
        }
        if !(worst <= DIVERGENCE_LIMIT) {
            return Err(Error::Divergence {
                step,
                time: step as f64 * dt,
            });
        }
        frames.push(downsample(&w));
    }
    Ok(frames)
}

/// Integrates from `w0` on `setup.grid`, returning frames on `setup.out_grid`.
///
/// On divergence the whole run restarts with half the step, up to
/// `max_halvings` times.
pub fn simulate_navier_stokes(params: &SystemParams, setup: &NsSetup, w0: &[f64]) -> Result<Vec<Vec<f64>>> {
    if params.equation != Equation::NavierStokes {
        return Err(Error::Config(format!(
            "Navier–Stokes solver called with {}",
            params.equation.name()
        )));
    }
    let n = setup.grid;
    check_len(w0, n)?;
    if setup.out_grid == 0 || !n.is_multiple_of(setup.out_grid) || setup.frames < 2 {
        return Err(Error::Config(format!(
            "output grid {} must divide grid {n}",
            setup.out_grid
        )));
    }
    let mut sp = Spectral::new(n)?;
    let mut dt = setup.dt;
    let mut last = None;
    for _ in 0..=setup.max_halvings {
        match run(&mut sp, params, setup, w0, dt) {
            Ok(frames) => return Ok(frames),
            Err(e @ Error::Divergence { .. }) => {
                last = Some(e);
                dt *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or(Error::Divergence { step: 0, time: 0.0 }))
}

/// Solves from a Gaussian random field initial vorticity seeded by `params.seed`.
pub fn solve_navier_stokes(params: &SystemParams, setup: &NsSetup) -> Result<Trajectory> {
    let w0 = gaussian_random_field(setup.grid, &GrfSpectrum::default(), params.seed)?;
    let frames = simulate_navier_stokes(params, setup, &w0)?;
    Ok(Trajectory::from_f64_frames(
        *params,
        setup.out_grid,
        setup.dt_out(),
        &frames,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forcing_has_zero_mean() {
        let f = forcing_field(16, 0.1);
        assert!(f.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn rejects_non_dividing_output_grid() {
        let mut p = crate::sim::sample_system(Equation::NavierStokes, 1).unwrap();
        p.nu = 1e-5;
        let setup = NsSetup {
            grid: 16,
            out_grid: 6,
            ..Default::default()
        };
        assert!(matches!(
            simulate_navier_stokes(&p, &setup, &vec![0.0; 256]),
            Err(Error::Config(_))
        ));
    }
}
