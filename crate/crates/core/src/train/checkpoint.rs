//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic    8 bytes  "BAYESLYR"
//! version  u32      1
//! count    u32
//! count × { name_len u32, name utf-8, rank u32, extents u64 × rank, payload f64 × Π extents }
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"BAYESLYR";
pub const VERSION: u32 = 1;

pub fn encode(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("entry name is not utf-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Checkpoint(format!("`{name}` has an overflowing shape")))?;
        let payload = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("payload too large".into()))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, encode(entries))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode(&fs::read(path)?)
}

/// Copies `entries` into `model`. Every model parameter must be present
/// with a matching shape; entries the model does not have are returned.
pub fn restore(model: &mut dyn Layer, entries: &[(String, Tensor)]) -> Result<Vec<String>> {
    let mut missing = Vec::new();
    let mut error = None;
    model.visit_parameters(&mut |name, p| {
        match entries.iter().find(|(n, _)| n == name) {
            Some((_, t)) => {
                if let Err(e) = p.set(t.clone()) {
                    error.get_or_insert(Error::Checkpoint(format!("`{name}`: {e}")));
                }
            }
            None => missing.push(name.to_string()),
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!("missing parameters: {}", missing.join(", "))));
    }
    let known: Vec<String> = crate::layers::named_parameters(model).into_iter().map(|(n, _)| n).collect();
    Ok(entries
        .iter()
        .filter(|(n, _)| !known.contains(n))
        .map(|(n, _)| n.clone())
        .collect())
}
