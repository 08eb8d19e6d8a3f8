//! JSON-lines sentence export consumed by the offline embedding tooling.

use std::io::Write;

use serde::{Deserialize, Serialize};
use textpde_core::embed::hex;
use textpde_core::sim::Trajectory;
use textpde_core::text::{render_description, DescriptionFlags};

/// One line of `describe` output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescribeRecord {
    /// Hex SHA-256 of the system's canonical parameter bytes.
    pub params_digest: String,
    /// Flag label, e.g. `"BCQ"` or `"Equation"`.
    pub flags: String,
    pub text: String,
}

pub fn describe_records(trajs: &[Trajectory], flags: &[DescriptionFlags]) -> Vec<DescribeRecord> {
    let mut out = Vec::with_capacity(trajs.len() * flags.len());
    for t in trajs {
        for &f in flags {
            let d = render_description(&t.params, f);
            out.push(DescribeRecord {
                params_digest: hex(&d.params_digest),
                flags: f.label(),
                text: d.text,
            });
        }
    }
    out
}

pub fn write_jsonl<W: Write + ?Sized>(w: &mut W, records: &[DescribeRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
