//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic   8 bytes  "PRFLCKPT"
//! version u32      1
//! vocab   u32
//! context u32
//! embed   u32
//! hidden  u32
//! count   u64      must equal the parameter count implied by the shape
//! values  count × f64
//! ```

use std::path::Path;

use super::{PolicyParams, PolicyShape};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PRFLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &PolicyParams) -> Vec<u8> {
    let shape = params.shape();
    let mut out = Vec::with_capacity(40 + 8 * params.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [shape.vocab, shape.context, shape.embed, shape.hidden] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.values().len() as u64).to_le_bytes());
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PolicyParams> {
    let mut r = ByteReader::new(bytes);
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a policy checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file has version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let shape = PolicyShape {
        vocab: r.u32()? as usize,
        context: r.u32()? as usize,
        embed: r.u32()? as usize,
        hidden: r.u32()? as usize,
    };
    shape
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let expected = checked_param_count(&shape)
        .ok_or_else(|| Error::Checkpoint("shape overflows".into()))?;
    let count = r.u64()?;
    if count != expected as u64 {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match shape {shape:?} ({expected})"
        )));
    }
    let values = r.f64_vec(expected)?;
    r.finish()?;
    PolicyParams::from_values(shape, values).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn checked_param_count(s: &PolicyShape) -> Option<usize> {
    let emb = s.vocab.checked_mul(s.embed)?;
    let w1 = s.context.checked_mul(s.embed)?.checked_mul(s.hidden)?;
    let w2 = s.hidden.checked_mul(s.vocab)?;
    emb.checked_add(w1)?
        .checked_add(s.hidden)?
        .checked_add(w2)?
        .checked_add(s.vocab)
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Writes through a sibling temp file and renames, so readers never see a torn file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
            })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::Checkpoint("length overflows".into())
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )))
        }
    }
}
