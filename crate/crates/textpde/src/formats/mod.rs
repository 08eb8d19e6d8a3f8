//! Binary containers shared with the offline tooling. All integers and
//! floats are little-endian.

pub mod checkpoint;
pub mod dataset;
pub mod store;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Reader that tracks its byte offset for error reports.
pub(crate) struct Cursor<R> {
    inner: R,
    pos: u64,
    kind: &'static str,
}

impl<R: Read> Cursor<R> {
    pub(crate) fn new(inner: R, kind: &'static str) -> Self {
        Self { inner, pos: 0, kind }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos
    }

    pub(crate) fn fail(&self, offset: u64, detail: impl Into<String>) -> Error {
        Error::Format {
            kind: self.kind,
            offset,
            detail: detail.into(),
        }
    }

    pub(crate) fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(self.fail(
                        self.pos + got as u64,
                        format!("truncated {what}: needed {} more bytes", buf.len() - got),
                    ))
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(self.fail(self.pos + got as u64, format!("read failed: {e}"))),
            }
        }
        self.pos += buf.len() as u64;
        Ok(())
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut v = vec![0; n];
        self.fill(&mut v, what)?;
        Ok(v)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut m = [0; 4];
        self.fill(&mut m, "magic")?;
        if &m != expected {
            return Err(self.fail(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    m,
                    std::str::from_utf8(expected).unwrap_or("?")
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Reads `out.len()` floats.
    pub(crate) fn f32s(&mut self, out: &mut [f32], what: &str) -> Result<()> {
        let mut raw = vec![0u8; out.len() * 4];
        self.fill(&mut raw, what)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *o = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        Ok(())
    }

    /// Length-prefixed (u64) JSON document.
    pub(crate) fn json<T: serde::de::DeserializeOwned>(&mut self, what: &str, limit: u64) -> Result<T> {
        let at = self.pos;
        let len = self.u64(what)?;
        if len > limit {
            return Err(self.fail(at, format!("{what} length {len} exceeds {limit}")));
        }
        let raw = self.bytes(len as usize, what)?;
        serde_json::from_slice(&raw).map_err(|e| self.fail(at + 8, format!("{what}: {e}")))
    }

    /// Fails unless the stream is exhausted.
    pub(crate) fn finish(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(self.fail(self.pos, "trailing bytes after payload")),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(self.fail(self.pos, format!("read failed: {e}"))),
            }
        }
    }
}

pub(crate) fn put_json<W: Write, T: serde::Serialize>(w: &mut W, value: &T) -> io::Result<()> {
    let raw = serde_json::to_vec(value).map_err(io::Error::other)?;
    w.write_all(&(raw.len() as u64).to_le_bytes())?;
    w.write_all(&raw)
}

pub(crate) fn put_f32s<W: Write>(w: &mut W, values: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Writes through `f`, then flushes; errors carry the path.
pub(crate) fn create(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
