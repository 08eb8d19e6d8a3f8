//! Parallel trajectory generation.

use textpde_core::sim::{
    sample_system, solve_burgers, solve_heat, solve_navier_stokes, DiffusionSetup, Equation, NsSetup, Trajectory,
};

use crate::pool::parallel_map;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenerateSpec {
    pub equation: Equation,
    pub count: usize,
    /// Trajectory `i` uses system seed `first_seed + i`.
    pub first_seed: u64,
    /// Stored grid.
    pub grid: usize,
    /// Navier–Stokes simulation grid before downsampling.
    pub ns_sim_grid: usize,
}

impl GenerateSpec {
    pub fn new(equation: Equation, count: usize) -> Self {
        Self {
            equation,
            count,
            first_seed: 0,
            grid: 64,
            ns_sim_grid: 256,
        }
    }
}

pub fn generate_one(spec: &GenerateSpec, seed: u64) -> Result<Trajectory> {
    let p = sample_system(spec.equation, seed)?;
    let diffusion = DiffusionSetup {
        grid: spec.grid,
        ..DiffusionSetup::default()
    };
    let t = match spec.equation {
        Equation::Heat => solve_heat(&p, &diffusion)?,
        Equation::Burgers => solve_burgers(&p, &diffusion)?,
        _ => solve_navier_stokes(
            &p,
            &NsSetup {
                grid: spec.ns_sim_grid,
                out_grid: spec.grid,
                ..NsSetup::default()
            },
        )?,
    };
    Ok(t)
}

/// Trajectories in seed order, solved on up to `threads` workers.
pub fn generate(spec: &GenerateSpec, threads: usize) -> Result<Vec<Trajectory>> {
    let seeds: Vec<u64> = (0..spec.count as u64).map(|i| spec.first_seed + i).collect();
    parallel_map(&seeds, threads, |&s| generate_one(spec, s))
        .into_iter()
        .collect()
}
