use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{BoundaryKind, Equation, SystemParams};
use crate::{Error, Result};

/// Snapshots per trajectory, initial condition included.
pub const FRAME_COUNT: usize = 101;

/// Axis-aligned square simulation cell `[lo, hi]²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn for_equation(eq: Equation) -> Self {
        match eq {
            Equation::Heat | Equation::Burgers => Domain { lo: -0.5, hi: 0.5 },
            Equation::NavierStokes => Domain { lo: 0.0, hi: 1.0 },
            Equation::ShallowWater => Domain { lo: -2.5, hi: 2.5 },
        }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// One simulated solution stored as 32-bit snapshots, `[frame, x, y]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub params: SystemParams,
    pub grid: usize,
    pub domain: Domain,
    /// Time between stored frames.
    pub dt_out: f64,
    pub frames: Vec<f32>,
}

impl Trajectory {
    pub fn from_f64_frames(params: SystemParams, grid: usize, dt_out: f64, frames: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(frames.len() * grid * grid);
        for f in frames {
            data.extend(f.iter().map(|&v| v as f32));
        }
        Self {
            params,
            grid,
            domain: Domain::for_equation(params.equation),
            dt_out,
            frames: data,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.grid * self.grid
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len() / self.frame_len().max(1)
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }
}

/// Structural and physical checks applied to every ingested trajectory.
pub fn validate_trajectory(t: &Trajectory) -> Result<()> {
    let bad = |msg: alloc::string::String| Err(Error::Config(msg));
    if t.grid == 0 || t.frames.len() != FRAME_COUNT * t.grid * t.grid {
        return bad(format!(
            "expected {FRAME_COUNT} frames of {}×{}, got {} values",
            t.grid,
            t.grid,
            t.frames.len()
        ));
    }
    if let Some(i) = t.frames.iter().position(|v| !v.is_finite()) {
        return bad(format!("non-finite value at flat index {i}"));
    }
    if !(t.dt_out > 0.0) {
        return bad(format!("dt_out must be positive, got {}", t.dt_out));
    }
    if t.domain != Domain::for_equation(t.params.equation) {
        return bad(format!(
            "domain {:?} does not match {}",
            t.domain,
            t.params.equation.name()
        ));
    }
    if t.params.equation == Equation::ShallowWater {
        if t.params.bc_type != BoundaryKind::Neumann || t.params.bc_value != 0.0 {
            return bad("shallow-water data must carry zero-gradient Neumann walls".into());
        }
        if let Some(i) = t.frames.iter().position(|&h| h <= 0.0) {
            return bad(format!("water height must stay positive (flat index {i})"));
        }
    }
    Ok(())
}
