//! Host-side companion to `textpde-core`: the `PDET`, `EMB1` and `CKPT`
//! file formats, parallel dataset generation, report output, and the
//! `textpde` command line.

pub mod cli;
pub mod describe;
mod error;
pub mod formats;
pub mod generate;
pub mod pool;
pub mod report;
pub mod runner;

pub use error::{Error, Result};
