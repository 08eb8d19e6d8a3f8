//! `PDET` trajectory files.
//!
//! ```text
//! "PDET" | version u32 | header_len u64 | header JSON | f32 payload
//! ```
//!
//! The payload is `[n_traj, frames, grid, grid]` in header order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use textpde_core::sim::{validate_trajectory, Domain, Equation, SystemParams, Trajectory, FRAME_COUNT};

use super::{create, open, put_f32s, put_json, Cursor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PDET";
pub const VERSION: u32 = 1;
const HEADER_LIMIT: u64 = 1 << 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub params: SystemParams,
    pub dt_out: f64,
    pub domain: Domain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub grid: usize,
    pub frames: usize,
    /// Trajectories per equation name.
    pub counts: BTreeMap<String, usize>,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl DatasetHeader {
    pub fn describe(trajs: &[Trajectory]) -> Result<Self> {
        let first = trajs
            .first()
            .ok_or_else(|| Error::Usage("cannot write an empty dataset".into()))?;
        let mut counts = BTreeMap::new();
        for t in trajs {
            if t.grid != first.grid || t.frames.len() != first.frames.len() {
                return Err(Error::Usage(
                    "trajectories in one file must share grid and frame count".into(),
                ));
            }
            *counts.entry(t.params.equation.name().to_string()).or_insert(0) += 1;
        }
        Ok(Self {
            version: VERSION,
            grid: first.grid,
            frames: first.frame_count(),
            counts,
            trajectories: trajs
                .iter()
                .map(|t| TrajectoryRecord {
                    params: t.params,
                    dt_out: t.dt_out,
                    domain: t.domain,
                })
                .collect(),
        })
    }
}

fn emit<W: Write>(w: &mut W, header: &DatasetHeader, trajs: &[Trajectory]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put_json(w, header)?;
    for t in trajs {
        put_f32s(w, &t.frames)?;
    }
    Ok(())
}

pub fn write_dataset_to<W: Write>(w: &mut W, trajs: &[Trajectory]) -> Result<()> {
    let header = DatasetHeader::describe(trajs)?;
    emit(w, &header, trajs).map_err(|e| Error::io("<stream>", e))
}

pub fn write_dataset(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let header = DatasetHeader::describe(trajs)?;
    create(path, |w| emit(w, &header, trajs))
}

/// Reads only the header.
pub fn read_header_from<R: Read>(r: R) -> Result<DatasetHeader> {
    let mut c = Cursor::new(r, "dataset");
    header(&mut c)
}

fn header<R: Read>(c: &mut Cursor<R>) -> Result<DatasetHeader> {
    c.magic(MAGIC)?;
    let at = c.offset();
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(c.fail(at, format!("unsupported version {version}")));
    }
    let at = c.offset();
    let h: DatasetHeader = c.json("header", HEADER_LIMIT)?;
    let bad = |d: String| Err(c.fail(at, d));
    if h.version != version {
        return bad(format!("header version {} disagrees with {version}", h.version));
    }
    if h.grid == 0 || h.frames != FRAME_COUNT {
        return bad(format!(
            "grid {} / frames {} invalid, expected {FRAME_COUNT} frames",
            h.grid, h.frames
        ));
    }
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for t in &h.trajectories {
        *tally.entry(t.params.equation.name().to_string()).or_insert(0) += 1;
    }
    if tally != h.counts {
        return bad(format!(
            "equation counts {:?} do not match the {} trajectory records",
            h.counts,
            h.trajectories.len()
        ));
    }
    Ok(h)
}

pub fn read_dataset_from<R: Read>(r: R) -> Result<Vec<Trajectory>> {
    let mut c = Cursor::new(r, "dataset");
    let h = header(&mut c)?;
    let per = h.frames * h.grid * h.grid;
    let mut out = Vec::with_capacity(h.trajectories.len());
    for (i, rec) in h.trajectories.iter().enumerate() {
        let at = c.offset();
        let mut frames = vec![0f32; per];
        c.f32s(&mut frames, &format!("payload of trajectory {i}"))?;
        let t = Trajectory {
            params: rec.params,
            grid: h.grid,
            domain: rec.domain,
            dt_out: rec.dt_out,
            frames,
        };
        validate_trajectory(&t).map_err(|e| c.fail(at, format!("trajectory {i}: {e}")))?;
        out.push(t);
    }
    c.finish()?;
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Trajectory>> {
    read_dataset_from(open(path)?)
}

/// Equation shared by every trajectory, if any.
pub fn single_equation(trajs: &[Trajectory]) -> Option<Equation> {
    let e = trajs.first()?.params.equation;
    trajs.iter().all(|t| t.params.equation == e).then_some(e)
}
