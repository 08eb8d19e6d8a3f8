//! `CKPT` parameter checkpoints.
//!
//! ```text
//! "CKPT" | version u32 | meta_len u64 | meta JSON | f32 parameters
//! ```
//!
//! Parameters follow declaration order; the metadata lists every tensor so
//! a layout change is caught before any float is read.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use textpde_core::model::{ArchConfig, SurrogateModel};

use super::{create, open, put_f32s, put_json, Cursor};
use crate::Result;

pub const MAGIC: &[u8; 4] = b"CKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchConfig,
    pub seed: u64,
    /// Number of parameter tensors.
    pub op_count: usize,
    pub tensors: Vec<TensorEntry>,
    /// Free-form provenance lines.
    #[serde(default)]
    pub lineage: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: SurrogateModel<f32>,
}

impl Checkpoint {
    pub fn new(model: SurrogateModel<f32>, seed: u64, lineage: Vec<String>) -> Self {
        let tensors: Vec<TensorEntry> = model
            .params()
            .iter()
            .map(|(_, name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        Self {
            meta: CheckpointMeta {
                arch: *model.config(),
                seed,
                op_count: tensors.len(),
                tensors,
                lineage,
            },
            model,
        }
    }
}

pub fn write_checkpoint_to<W: Write>(w: &mut W, ckpt: &Checkpoint) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put_json(w, &ckpt.meta)?;
    for (_, _, t) in ckpt.model.params().iter() {
        put_f32s(w, t.data())?;
    }
    Ok(())
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    create(path, |w| write_checkpoint_to(w, ckpt))
}

pub fn read_checkpoint_from<R: Read>(r: R) -> Result<Checkpoint> {
    let mut c = Cursor::new(r, "checkpoint");
    c.magic(MAGIC)?;
    let at = c.offset();
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(c.fail(at, format!("unsupported version {version}")));
    }
    let at = c.offset();
    let meta: CheckpointMeta = c.json("metadata", 1 << 24)?;
    let template = SurrogateModel::<f32>::new(meta.arch, 0).map_err(|e| c.fail(at, format!("architecture: {e}")))?;
    let expected: Vec<TensorEntry> = Checkpoint::new(template, 0, Vec::new()).meta.tensors;
    if meta.tensors != expected || meta.op_count != expected.len() {
        return Err(c.fail(at, "tensor list does not match the architecture"));
    }
    let total: usize = expected.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let mut flat = vec![0f32; total];
    c.f32s(&mut flat, "parameters")?;
    c.finish()?;
    let model = SurrogateModel::from_flat(meta.arch, &flat)?;
    Ok(Checkpoint { meta, model })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint_from(open(path)?)
}
