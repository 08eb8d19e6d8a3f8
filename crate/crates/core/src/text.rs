//! Templated natural-language descriptions of a simulated system.
//!
//! Sentence strings are reproduced byte-for-byte, spelling included, because
//! embedding stores are keyed by the exact UTF-8 bytes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::sim::{BoundaryKind, Equation, SystemParams};

/// Which optional sections follow the basic equation sentences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DescriptionFlags {
    pub boundary: bool,
    pub coefficients: bool,
    pub qualitative: bool,
}

impl DescriptionFlags {
    pub const NONE: Self = Self::new(false, false, false);
    pub const ALL: Self = Self::new(true, true, true);

    pub const fn new(boundary: bool, coefficients: bool, qualitative: bool) -> Self {
        Self {
            boundary,
            coefficients,
            qualitative,
        }
    }

    /// The eight combinations in ablation order: none, B, C, Q, BC, BQ, CQ, BCQ.
    pub fn ablation_rows() -> [Self; 8] {
        [
            Self::NONE,
            Self::new(true, false, false),
            Self::new(false, true, false),
            Self::new(false, false, true),
            Self::new(true, true, false),
            Self::new(true, false, true),
            Self::new(false, true, true),
            Self::ALL,
        ]
    }

    /// Short label such as `"BQ"`; the empty set is `"Equation"`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        for (on, c) in [(self.boundary, 'B'), (self.coefficients, 'C'), (self.qualitative, 'Q')] {
            if on {
                s.push(c);
            }
        }
        if s.is_empty() {
            s.push_str("Equation");
        }
        s
    }

    pub fn from_label(label: &str) -> Option<Self> {
        if label.eq_ignore_ascii_case("equation") || label.is_empty() || label == "-" {
            return Some(Self::NONE);
        }
        let mut f = Self::NONE;
        for c in label.chars() {
            let slot = match c.to_ascii_uppercase() {
                'B' => &mut f.boundary,
                'C' => &mut f.coefficients,
                'Q' => &mut f.qualitative,
                _ => return None,
            };
            if core::mem::replace(slot, true) {
                return None;
            }
        }
        Some(f)
    }

    /// True when every section enabled here is enabled in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        (!self.boundary || other.boundary)
            && (!self.coefficients || other.coefficients)
            && (!self.qualitative || other.qualitative)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDescription {
    pub text: String,
    pub flags: DescriptionFlags,
    pub params_digest: [u8; 32],
}

/// Shortest round-trip decimal, switching to exponent form below `1e-4`.
pub fn format_number(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-4 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn basic(eq: Equation) -> &'static str {
    match eq {
        Equation::Heat => {
            "The Heat equation models how a quantity such as heat diffuses through a given region. \
             The Heat equation is a linear parabolic partial differential equation."
        }
        Equation::Burgers => {
            "Burgers equation models a conservative system that can develop shock wave discontinuities. \
             Burgers equation is a second order partial differential equation."
        }
        Equation::NavierStokes => {
            "The incompressible Navier Stokes equations describe the motion of a viscous fluid with constant density. \
             We are predicting the vorticity field, which describes the local spinning motion of the fluid."
        }
        Equation::ShallowWater => {
            "The Shallow-Water equations are a set of hyperbolic partial differential equations \
             that describe the flow below a pressure surface in a fluid."
        }
    }
}

fn boundary(p: &SystemParams) -> String {
    match p.equation {
        Equation::NavierStokes => {
            "This system has periodic boundary conditions. The simulation cell is a torus.".into()
        }
        Equation::ShallowWater => {
            "This system has homogeneous Neumann boundary conditions with a derivative of 0 at the boundary.".into()
        }
        Equation::Heat | Equation::Burgers => match p.bc_type {
            BoundaryKind::Periodic => {
                "This system has periodic boundary conditions. The simulation space is a torus.".into()
            }
            BoundaryKind::Neumann => format!(
                "This system has Neumann boundary conditions. Neumann boundary conditions have a constant gradient. \
                 In this case we have a gradient of {} on the boundary.",
                format_number(p.bc_value)
            ),
            BoundaryKind::Dirichlet => format!(
                "This system has Dirichlet boundary conditions. Dirichlet boundary conditions have a constant value. \
                 In this case we have a value of {} on the boundary.",
                format_number(p.bc_value)
            ),
        },
    }
}

fn coefficients(p: &SystemParams) -> Option<String> {
    match p.equation {
        Equation::Heat => Some(format!(
            "In this case, the diffusion term has a coefficient of {}.",
            format_number(p.beta)
        )),
        Equation::Burgers => Some(format!(
            "In this case, the advection term has a coefficient of {} in the x direction, {} in the y direction, \
             and the diffusion term has a coefficient of {}.",
            format_number(p.alpha_x),
            format_number(p.alpha_y),
            format_number(p.beta)
        )),
        Equation::NavierStokes => Some(format!(
            "In this case, the viscosity is {}. This system is driven by a forcing term of the form \
             f(x,y) = A*(sin(2*pi*(x+y)) + cos(2*pi*(x+y))) with amplitude A={}.",
            format_number(p.nu),
            format_number(p.amplitude)
        )),
        Equation::ShallowWater => None,
    }
}

/// Qualitative sentences chosen by the system's regime thresholds.
pub fn classify_qualitative(p: &SystemParams) -> Vec<&'static str> {
    match p.equation {
        Equation::Heat => vec![if p.beta > 0.005 {
            "This system is strongly diffusive. The predicted state should look smoother than the inputs."
        } else {
            "This system is weakly diffusive. The predicted state should looke smoother than the inputs."
        }],
        Equation::Burgers => {
            let speed = num_traits::Float::hypot(p.alpha_x, p.alpha_y);
            vec![if speed / p.beta > 200.0 {
                "This system is advection dominated and does not behave similarly to heat equation. \
                 The predicted state should develop shocks."
            } else {
                "This system is diffusion dominated and does behave similarly to heat equation. \
                 The predicted state should look smoother than the inputs."
            }]
        }
        Equation::NavierStokes => {
            let viscosity = if p.nu >= 1e-6 {
                "This system has high viscosity and will not develop small scale structure."
            } else if p.nu >= 1e-8 {
                "This sytem has moderate viscosity and will have some small scale structure."
            } else {
                "This system has low viscosity and will have chaotic evolution with small scale structure."
            };
            let forcing = if p.amplitude >= 7e-4 {
                "This system has a strong forcing term and evolution will be heavily influenced by it."
            } else if p.amplitude >= 3e-4 {
                "This system has a moderate forcing term and evolution will be moderately influenced by it."
            } else {
                "This system has a weak forcing term and evolvution will be weakly influenced by it."
            };
            vec![viscosity, forcing]
        }
        Equation::ShallowWater => {
            vec!["This system simulates a radial dam break. Waves propagate outward in a circular pattern."]
        }
    }
}

/// Basic sentences, then boundary, coefficient and qualitative sections as
/// enabled, joined by single spaces.
pub fn render_description(params: &SystemParams, flags: DescriptionFlags) -> SystemDescription {
    let mut text = String::from(basic(params.equation));
    let mut push = |s: &str| {
        text.push(' ');
        text.push_str(s);
    };
    if flags.boundary {
        push(&boundary(params));
    }
    if flags.coefficients {
        if let Some(c) = coefficients(params) {
            push(&c);
        }
    }
    if flags.qualitative {
        for s in classify_qualitative(params) {
            push(s);
        }
    }
    SystemDescription {
        text,
        flags,
        params_digest: params.digest(),
    }
}
