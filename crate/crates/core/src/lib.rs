//! Numerical core for text-conditioned PDE surrogate modeling.
//!
//! Everything here is pure computation on in-memory data and builds
//! without `std`: a small reverse-mode autodiff tensor library, the
//! Heat/Burgers/Navier–Stokes trajectory generators, templated system
//! descriptions, embedding lookup and tokenization, the factorized-attention
//! surrogate with its cross-attention text block, and the training and
//! evaluation loops. File formats, threading and the CLI live in the
//! `textpde` companion crate.

#![no_std]
// `!(x <= limit)` is the NaN-rejecting comparison throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod embed;
pub mod error;
pub mod harness;
pub mod model;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
