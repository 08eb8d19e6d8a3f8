//! `EMB1` embedding stores.
//!
//! ```text
//! "EMB1" | version u32 | dim u32 | count u64 | count × (hash[32] | dim × f32)
//! ```
//!
//! Records are written in ascending hash order.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use textpde_core::embed::{hex, EmbeddingStore};

use super::{create, open, put_f32s, Cursor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u32 = 1;

pub fn write_store_to<W: Write>(w: &mut W, store: &EmbeddingStore) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.dim() as u32).to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (hash, values) in store.iter() {
        w.write_all(hash)?;
        put_f32s(w, values)?;
    }
    Ok(())
}

pub fn write_store(path: &Path, store: &EmbeddingStore) -> Result<()> {
    create(path, |w| write_store_to(w, store))
}

pub fn read_store_from<R: Read>(r: R) -> Result<EmbeddingStore> {
    let mut c = Cursor::new(r, "embedding store");
    c.magic(MAGIC)?;
    let at = c.offset();
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(c.fail(at, format!("unsupported version {version}")));
    }
    let at = c.offset();
    let dim = c.u32("dim")? as usize;
    if dim == 0 || dim > 1 << 20 {
        return Err(c.fail(at, format!("implausible dim {dim}")));
    }
    let count = c.u64("count")?;
    let mut store = EmbeddingStore::new(dim);
    let mut seen = BTreeSet::new();
    let mut values = vec![0f32; dim];
    for i in 0..count {
        let at = c.offset();
        let mut hash = [0u8; 32];
        c.fill(&mut hash, &format!("hash of record {i}"))?;
        c.f32s(&mut values, &format!("vector of record {i}"))?;
        if !seen.insert(hash) {
            return Err(c.fail(at, format!("duplicate record for {}", hex(&hash))));
        }
        store
            .insert(hash, values.clone())
            .map_err(|e| c.fail(at, format!("record {i}: {e}")))?;
    }
    c.finish()?;
    Ok(store)
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    read_store_from(open(path)?).map_err(|e| match e {
        Error::Format { kind, offset, detail } => Error::Format {
            kind,
            offset,
            detail: format!("{detail} ({})", path.display()),
        },
        other => other,
    })
}
