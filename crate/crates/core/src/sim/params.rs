use alloc::format;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Equation {
    Heat,
    Burgers,
    NavierStokes,
    ShallowWater,
}

impl Equation {
    pub const ALL: [Equation; 4] = [
        Equation::Heat,
        Equation::Burgers,
        Equation::NavierStokes,
        Equation::ShallowWater,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Equation::Heat => "heat",
            Equation::Burgers => "burgers",
            Equation::NavierStokes => "navier_stokes",
            Equation::ShallowWater => "shallow_water",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| {
            e.name() == s || (s == "ns" && *e == Equation::NavierStokes) || (s == "sw" && *e == Equation::ShallowWater)
        })
    }

    fn tag(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BoundaryKind {
    Periodic,
    Neumann,
    Dirichlet,
}

/// Physics of one simulated system. All four walls share `bc_type` and
/// `bc_value`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub equation: Equation,
    pub bc_type: BoundaryKind,
    /// Outward normal gradient (Neumann) or wall value (Dirichlet).
    pub bc_value: f64,
    /// Diffusion coefficient.
    pub beta: f64,
    pub alpha_x: f64,
    pub alpha_y: f64,
    /// Viscosity.
    pub nu: f64,
    /// Forcing amplitude.
    pub amplitude: f64,
    pub seed: u64,
}

pub const NS_VISCOSITIES: [f64; 7] = [1e-8, 5e-8, 1e-7, 1e-6, 5e-6, 1e-5, 5e-5];
pub const NS_AMPLITUDES: [f64; 5] = [0.001, 0.005, 0.01, 0.05, 0.1];
pub const BETA_RANGE: (f64, f64) = (0.001, 0.01);
pub const ALPHA_RANGE: (f64, f64) = (-1.0, 1.0);
pub const BC_VALUE_RANGE: (f64, f64) = (-0.1, 0.1);

impl SystemParams {
    fn blank(equation: Equation, seed: u64) -> Self {
        Self {
            equation,
            bc_type: BoundaryKind::Periodic,
            bc_value: 0.0,
            beta: 0.0,
            alpha_x: 0.0,
            alpha_y: 0.0,
            nu: 0.0,
            amplitude: 0.0,
            seed,
        }
    }

    /// Shallow-Water metadata as produced by the converter.
    pub fn shallow_water(seed: u64) -> Self {
        Self {
            bc_type: BoundaryKind::Neumann,
            ..Self::blank(Equation::ShallowWater, seed)
        }
    }

    /// Canonical byte encoding: tags, then the six reals and the seed, all
    /// little-endian.
    pub fn canonical_bytes(&self) -> [u8; 58] {
        let mut out = [0u8; 58];
        out[0] = self.equation.tag();
        out[1] = self.bc_type as u8;
        let reals = [
            self.bc_value,
            self.beta,
            self.alpha_x,
            self.alpha_y,
            self.nu,
            self.amplitude,
        ];
        for (i, r) in reals.iter().enumerate() {
            out[2 + 8 * i..10 + 8 * i].copy_from_slice(&r.to_le_bytes());
        }
        out[50..58].copy_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_bytes()).into()
    }
}

/// Draws a system from the generator distributions.
pub fn sample_system(equation: Equation, seed: u64) -> Result<SystemParams> {
    let mut r = rng::named_stream(seed, "system");
    let mut p = SystemParams::blank(equation, seed);
    match equation {
        Equation::Heat | Equation::Burgers => {
            p.bc_type = [BoundaryKind::Periodic, BoundaryKind::Neumann, BoundaryKind::Dirichlet][rng::index(&mut r, 3)];
            let v = rng::uniform(&mut r, BC_VALUE_RANGE.0, BC_VALUE_RANGE.1);
            p.bc_value = if p.bc_type == BoundaryKind::Periodic { 0.0 } else { v };
            p.beta = rng::uniform(&mut r, BETA_RANGE.0, BETA_RANGE.1);
            if equation == Equation::Burgers {
                p.alpha_x = rng::uniform(&mut r, ALPHA_RANGE.0, ALPHA_RANGE.1);
                p.alpha_y = rng::uniform(&mut r, ALPHA_RANGE.0, ALPHA_RANGE.1);
            }
        }
        Equation::NavierStokes => {
            p.nu = NS_VISCOSITIES[rng::index(&mut r, NS_VISCOSITIES.len())];
            p.amplitude = NS_AMPLITUDES[rng::index(&mut r, NS_AMPLITUDES.len())];
        }
        Equation::ShallowWater => {
            return Err(Error::Unsupported(format!(
                "{} data is ingested from converted files, not sampled",
                equation.name()
            )))
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_has_no_advection() {
        for seed in 0..50 {
            let p = sample_system(Equation::Heat, seed).unwrap();
            assert_eq!((p.alpha_x, p.alpha_y), (0.0, 0.0));
            assert!((0.001..0.01).contains(&p.beta));
        }
    }

    #[test]
    fn navier_stokes_draws_from_the_discrete_sets() {
        for seed in 0..100 {
            let p = sample_system(Equation::NavierStokes, seed).unwrap();
            assert!(NS_VISCOSITIES.contains(&p.nu));
            assert!(NS_AMPLITUDES.contains(&p.amplitude));
            assert_eq!(p.bc_type, BoundaryKind::Periodic);
        }
    }

    #[test]
    fn burgers_ranges_and_boundary_values() {
        let mut kinds = [0usize; 3];
        for seed in 0..300 {
            let p = sample_system(Equation::Burgers, seed).unwrap();
            assert!(p.alpha_x.abs() <= 1.0 && p.alpha_y.abs() <= 1.0);
            kinds[p.bc_type as usize] += 1;
            match p.bc_type {
                BoundaryKind::Periodic => assert_eq!(p.bc_value, 0.0),
                _ => assert!(p.bc_value.abs() <= 0.1),
            }
        }
        assert!(kinds.iter().all(|&k| k > 50), "{kinds:?}");
    }

    #[test]
    fn equal_seeds_equal_params() {
        for eq in [Equation::Heat, Equation::Burgers, Equation::NavierStokes] {
            assert_eq!(sample_system(eq, 42).unwrap(), sample_system(eq, 42).unwrap());
        }
        assert_ne!(
            sample_system(Equation::Heat, 1).unwrap(),
            sample_system(Equation::Heat, 2).unwrap()
        );
    }

    #[test]
    fn shallow_water_is_ingest_only() {
        assert!(matches!(
            sample_system(Equation::ShallowWater, 0),
            Err(Error::Unsupported(_))
        ));
    }
}
