//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "IDRRCKPT"
//! version  u32      1
//! count    u32      number of parameters
//! header   count × { name_len u32, name UTF-8, ndim u32, dims ndim × u64 }
//! payload  count × product(dims) × f64, in header order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::param::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IDRRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, p) in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, p) in params.iter() {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.clone(),
                line: 0,
                message: format!("truncated checkpoint at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &str) -> Result<Vec<(String, Tensor)>> {
    let bad = |message: String| Error::Parse {
        path: path.to_string(),
        line: 0,
        message,
    };
    let mut cur = Cursor {
        bytes,
        pos: 0,
        path: path.to_string(),
    };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| bad(format!("parameter name: {e}")))?
            .to_string();
        let ndim = cur.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        header.push((name, shape));
    }
    let mut out = Vec::with_capacity(count);
    for (name, shape) in header {
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(out)
}

pub fn write_checkpoint(params: &ParamStore, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(params))
        .map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let mut store = ParamStore::new();
        store.add("a.w", Tensor::matrix(2, 2, vec![1.0, -0.5, 0.25, 3.0]).unwrap());
        store.add("b", Tensor::scalar(f64::MIN_POSITIVE));
        let bytes = encode_checkpoint(&store);
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let back = decode_checkpoint(&bytes, "mem").unwrap();
        assert_eq!(back[0].0, "a.w");
        assert_eq!(back[0].1.shape(), &[2, 2]);
        assert_eq!(back[1].1.data(), &[f64::MIN_POSITIVE]);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros([3]));
        let bytes = encode_checkpoint(&store);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], "mem").is_err());
        assert!(decode_checkpoint(b"NOTACKPT", "mem").is_err());
    }
}
