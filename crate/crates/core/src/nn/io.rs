//! Binary weights container.
//!
//! ```text
//! magic      8 bytes  "SMAPFW01"
//! meta_len   u32      followed by meta_len bytes of UTF-8 JSON
//! count      u32      number of arrays
//! per array:
//!   name_len u32, name bytes (UTF-8)
//!   dtype    u8       4 = f32, 8 = f64
//!   ndim     u32, then ndim x u64 dims
//!   values   product(dims) little-endian scalars
//! ```
//! All integers are little-endian. Trailing bytes are rejected.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::ParamSet;
use super::{NnError, Tensor};
use crate::{DType, Scalar};

pub const MAGIC: &[u8; 8] = b"SMAPFW01";

/// Metadata plus named arrays, as stored on disk.
#[derive(Debug, Clone)]
pub struct WeightsFile<T: Scalar> {
    pub metadata: serde_json::Value,
    pub params: ParamSet<T>,
}

pub fn write_container<T: Scalar>(metadata: &serde_json::Value, params: &ParamSet<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.scalar_count() * T::DTYPE.width());
    out.extend_from_slice(MAGIC);
    let meta = serde_json::to_vec(metadata).expect("json value serializes");
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NnError::Corrupt(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parse a container, converting stored values to `T` if the dtype differs.
pub fn read_container<T: Scalar>(bytes: &[u8]) -> Result<WeightsFile<T>, NnError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(NnError::Corrupt("bad magic".into()));
    }
    let meta_len = c.u32("metadata length")? as usize;
    let metadata = serde_json::from_slice(c.take(meta_len, "metadata")?)
        .map_err(|e| NnError::Corrupt(format!("metadata: {e}")))?;
    let count = c.u32("array count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| NnError::Corrupt("array name is not UTF-8".into()))?
            .to_string();
        let tag = c.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| NnError::Corrupt(format!("{name}: unknown dtype tag {tag}")))?;
        let ndim = c.u32("ndim")? as usize;
        if ndim > 8 {
            return Err(NnError::Corrupt(format!("{name}: {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u64("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| NnError::Corrupt(format!("{name}: shape overflow")))?;
        let w = dtype.width();
        let raw = c.take(
            n.checked_mul(w).ok_or_else(|| NnError::Corrupt("size overflow".into()))?,
            "values",
        )?;
        let data: Vec<T> = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|b| T::lit(f32::read_le(b) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|b| T::lit(f64::read_le(b))).collect(),
        };
        if params.id(&name).is_some() {
            return Err(NnError::Corrupt(format!("duplicate array {name:?}")));
        }
        params.add(name, Tensor::new(shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(NnError::Corrupt(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(WeightsFile { metadata, params })
}

/// Write via a sibling temp file and rename, so readers never see a partial file.
pub fn save_weights<T: Scalar>(
    path: impl AsRef<Path>,
    metadata: &serde_json::Value,
    params: &ParamSet<T>,
) -> Result<(), NnError> {
    let path = path.as_ref();
    let bytes = write_container(metadata, params);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<WeightsFile<T>, NnError> {
    read_container(&fs::read(path)?)
}
