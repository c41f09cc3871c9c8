//! Checkpoint format, version 1, little-endian:
//!
//! ```text
//! magic   8 bytes  "WUGCKPT\0"
//! version u32
//! hlen    u64      length of the JSON config header
//! header  hlen bytes of UTF-8 JSON (ModelConfig)
//! count   u64      number of parameters
//! params  count × f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{MaskedLm, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WUGCKPT\0";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &MaskedLm, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&model.config)?;
    let mut buf = Vec::with_capacity(28 + header.len() + 8 * model.params().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<MaskedLm> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = cur.u64()? as usize;
    let config: ModelConfig = serde_json::from_slice(cur.take(hlen)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let count = cur.u64()? as usize;
    let raw = cur.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad count".into()))?)?;
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    MaskedLm::from_params(config, params).map_err(|e| Error::Checkpoint(e.to_string()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(model: &MaskedLm, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    crate::report::write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<MaskedLm> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
