//! Trajectory generation for the Heat, Burgers and Navier–Stokes systems,
//! plus validation of externally converted Shallow-Water data.

mod diffusion;
pub mod fft;
mod grf;
mod navier_stokes;
mod params;
mod trajectory;

pub use diffusion::{diffusion_initial_condition, simulate_diffusion, solve_burgers, solve_heat, DiffusionSetup};
pub use grf::{gaussian_random_field, GrfSpectrum};
pub use navier_stokes::{
    forcing_field, simulate_navier_stokes, solve_navier_stokes, spectral_divergence, velocity_from_vorticity, NsSetup,
};
pub use params::{sample_system, BoundaryKind, Equation, SystemParams};
pub use trajectory::{validate_trajectory, Domain, Trajectory, FRAME_COUNT};

/// Magnitude beyond which a solver run is treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
