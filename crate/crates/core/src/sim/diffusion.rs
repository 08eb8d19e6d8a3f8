//! Finite-difference Heat and Burgers solvers on a cell-centred grid.
//!
//! Walls are handled with one ring of ghost cells: periodic wrap, Neumann
//! `ghost = interior + bc_value·Δx` (outward gradient), and Dirichlet
//! boundary cells pinned to `bc_value`. Time stepping is explicit Heun RK2.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::{BoundaryKind, Domain, Equation, SystemParams, Trajectory, DIVERGENCE_LIMIT, FRAME_COUNT};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionSetup {
    pub grid: usize,
    /// Internal time step.
    pub dt: f64,
    pub steps_per_frame: usize,
    pub frames: usize,
}

impl Default for DiffusionSetup {
    fn default() -> Self {
        Self {
            grid: 64,
            dt: 1e-4,
            steps_per_frame: 100,
            frames: FRAME_COUNT,
        }
    }
}

impl DiffusionSetup {
    pub fn dx(&self) -> f64 {
        Domain::for_equation(Equation::Heat).length() / self.grid as f64
    }

    /// Cell-centre coordinate of index `i`.
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 + (i as f64 + 0.5) * self.dx()
    }

    pub fn dt_out(&self) -> f64 {
        self.dt * self.steps_per_frame as f64
    }
}

/// `exp(−100 (x + y)²)` sampled at cell centres, with Dirichlet walls pinned.
pub fn diffusion_initial_condition(params: &SystemParams, setup: &DiffusionSetup) -> Vec<f64> {
    let n = setup.grid;
    let mut u = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let s = setup.coord(i) + setup.coord(j);
            u[i * n + j] = Float::exp(-100.0 * s * s);
        }
    }
    if params.bc_type == BoundaryKind::Dirichlet {
        pin_walls(&mut u, n, params.bc_value);
    }
    u
}

fn pin_walls(u: &mut [f64], n: usize, v: f64) {
    for k in 0..n {
        u[k] = v;
        u[(n - 1) * n + k] = v;
        u[k * n] = v;
        u[k * n + n - 1] = v;
    }
}

struct Stepper {
    n: usize,
    dx: f64,
    beta: f64,
    alpha: (f64, f64),
    bc: BoundaryKind,
    bc_value: f64,
    /// `(n+2)²` array with one ghost ring.
    padded: Vec<f64>,
}

impl Stepper {
    fn fill_padded(&mut self, u: &[f64]) {
        let n = self.n;
        let w = n + 2;
        for i in 0..n {
            self.padded[(i + 1) * w + 1..(i + 1) * w + 1 + n].copy_from_slice(&u[i * n..(i + 1) * n]);
        }
        let g = self.bc_value * self.dx;
        for k in 0..n {
            let (lo_x, hi_x, lo_y, hi_y) = match self.bc {
                BoundaryKind::Periodic => (u[(n - 1) * n + k], u[k], u[k * n + n - 1], u[k * n]),
                // Dirichlet walls are pinned cells, so the ghosts are never read
                // for updated cells; fill them like Neumann-0 for completeness.
                BoundaryKind::Neumann => (u[k] + g, u[(n - 1) * n + k] + g, u[k * n] + g, u[k * n + n - 1] + g),
                BoundaryKind::Dirichlet => (u[k], u[(n - 1) * n + k], u[k * n], u[k * n + n - 1]),
            };
            self.padded[k + 1] = lo_x;
            self.padded[(n + 1) * w + k + 1] = hi_x;
            self.padded[(k + 1) * w] = lo_y;
            self.padded[(k + 1) * w + n + 1] = hi_y;
        }
    }

    /// du/dt into `out`.
    fn rhs(&mut self, u: &[f64], out: &mut [f64]) {
        self.fill_padded(u);
        let n = self.n;
        let w = n + 2;
        let inv_dx2 = 1.0 / (self.dx * self.dx);
        let inv_dx = 1.0 / self.dx;
        let (ax, ay) = self.alpha;
        let advect = ax != 0.0 || ay != 0.0;
        let range = if self.bc == BoundaryKind::Dirichlet {
            1..n - 1
        } else {
            0..n
        };
        if self.bc == BoundaryKind::Dirichlet {
            out.iter_mut().for_each(|v| *v = 0.0);
        }
        let p = &self.padded;
        for i in range.clone() {
            for j in range.clone() {
                let c = (i + 1) * w + j + 1;
                let uc = p[c];
                let (xm, xp, ym, yp) = (p[c - w], p[c + w], p[c - 1], p[c + 1]);
                let lap = (xm + xp + ym + yp - 4.0 * uc) * inv_dx2;
                let mut du = self.beta * lap;
                if advect {
                    let sx = ax * uc;
                    let sy = ay * uc;
                    let dudx = if sx > 0.0 { uc - xm } else { xp - uc } * inv_dx;
                    let dudy = if sy > 0.0 { uc - ym } else { yp - uc } * inv_dx;
                    du -= sx * dudx + sy * dudy;
                }
                out[i * n + j] = du;
            }
        }
    }
}

/// Integrates Heat (α = 0) or Burgers from `ic`, returning every stored frame.
pub fn simulate_diffusion(params: &SystemParams, setup: &DiffusionSetup, ic: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = setup.grid;
    if ic.len() != n * n || n < 3 {
        return Err(Error::Config(format!("initial condition must be {n}×{n} with n ≥ 3")));
    }
    let alpha = match params.equation {
        Equation::Heat => (0.0, 0.0),
        Equation::Burgers => (params.alpha_x, params.alpha_y),
        other => {
            return Err(Error::Unsupported(format!(
                "finite-difference solver for {}",
                other.name()
            )))
        }
    };
    let mut st = Stepper {
        n,
        dx: setup.dx(),
        beta: params.beta,
        alpha,
        bc: params.bc_type,
        bc_value: params.bc_value,
        padded: vec![0.0; (n + 2) * (n + 2)],
    };
    let dt = setup.dt;
    let mut u = ic.to_vec();
    let (mut k1, mut k2, mut stage) = (vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]);
    let mut frames = Vec::with_capacity(setup.frames);
    frames.push(u.clone());
    let mut step = 0usize;
    for _ in 1..setup.frames {
        for _ in 0..setup.steps_per_frame {
            st.rhs(&u, &mut k1);
            for ((s, &a), &b) in stage.iter_mut().zip(&u).zip(&k1) {
                *s = a + dt * b;
            }
            st.rhs(&stage, &mut k2);
            let mut worst = 0.0f64;
            for ((x, &a), &b) in u.iter_mut().zip(&k1).zip(&k2) {
                *x += 0.5 * dt * (a + b);
                worst = worst.max(x.abs());
            }
            step += 1;
            if !(worst <= DIVERGENCE_LIMIT) {
                return Err(Error::Divergence {
                    step,
                    time: step as f64 * dt,
                });
            }
        }
        frames.push(u.clone());
    }
    Ok(frames)
}

fn solve(params: &SystemParams, setup: &DiffusionSetup) -> Result<Trajectory> {
    let ic = diffusion_initial_condition(params, setup);
    let frames = simulate_diffusion(params, setup, &ic)?;
    Ok(Trajectory::from_f64_frames(
        *params,
        setup.grid,
        setup.dt_out(),
        &frames,
    ))
}

pub fn solve_heat(params: &SystemParams, setup: &DiffusionSetup) -> Result<Trajectory> {
    if params.equation != Equation::Heat {
        return Err(Error::Config(format!(
            "solve_heat called with {}",
            params.equation.name()
        )));
    }
    solve(params, setup)
}

pub fn solve_burgers(params: &SystemParams, setup: &DiffusionSetup) -> Result<Trajectory> {
    if params.equation != Equation::Burgers {
        return Err(Error::Config(format!(
            "solve_burgers called with {}",
            params.equation.name()
        )));
    }
    solve(params, setup)
}
