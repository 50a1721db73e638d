//! `MASS` checkpoint container: named little-endian `f32` tensors.
//!
//! Layout: magic `MASS`, `u32` version (1), `u32` tensor count, then per
//! tensor a `u16` name length, the name bytes, a `u8` dtype tag (0 = f32), a
//! `u8` rank, `rank` `u64` dims and the raw data.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MASS";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Named tensors, iterated in lexicographic name order.
pub type TensorMap = BTreeMap<String, Tensor<f32>>;

pub fn encode_checkpoint(tensors: &TensorMap) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        if !name.is_ascii() || name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::InvalidName(name.clone()));
        }
        if t.shape().len() > u8::MAX as usize {
            return Err(Error::ShapeMismatch(format!("{name}: rank {} too large", t.shape().len())));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TensorMap> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.array()?;
    if &magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let count = u32::from_le_bytes(r.array()?);
    let mut out = TensorMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .ok()
            .filter(|s| s.is_ascii())
            .ok_or_else(|| Error::InvalidName("<non-ascii>".into()))?
            .to_string();
        let [dtype] = r.array()?;
        if dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(dtype));
        }
        let [rank] = r.array()?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let d = u64::from_le_bytes(r.array()?);
            shape.push(usize::try_from(d).map_err(|_| Error::Truncated)?);
        }
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(Error::Truncated)?;
        let raw = r.take(n.checked_mul(4).ok_or(Error::Truncated)?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap()))).collect();
        if out.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
            return Err(Error::InvalidName(format!("duplicate {name}")));
        }
    }
    Ok(out)
}

pub fn save_checkpoint(tensors: &TensorMap, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(tensors)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TensorMap> {
    decode_checkpoint(&std::fs::read(path)?)
}
