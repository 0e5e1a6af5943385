//! Binary checkpoint format.
//!
//! ```text
//! "FFPN"            4 bytes magic
//! u32 version       = 1
//! u32 tensor count
//! per tensor:
//!   u16 name length, UTF-8 name
//!   u8  ndims, u32 dims[ndims]
//!   f32 data[prod(dims)]
//! u64 byte length of everything above
//! ```
//!
//! All integers and floats are little-endian. Floats are copied bit for bit.

use std::fs;
use std::path::Path;

use crate::error::NnError;

pub const MAGIC: &[u8; 4] = b"FFPN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, data: Vec<f32>) -> Self {
        NamedTensor {
            name: name.into(),
            dims,
            data,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NnError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| NnError::Checkpoint(format!("tensor name `{}` too long", t.name)))?;
            let ndims = u8::try_from(t.dims.len())
                .map_err(|_| NnError::Checkpoint(format!("tensor `{}` has too many dims", t.name)))?;
            let n: usize = t.dims.iter().map(|&d| d as usize).product();
            if n != t.data.len() {
                return Err(NnError::Checkpoint(format!(
                    "tensor `{}` has dims {:?} but {} values",
                    t.name,
                    t.dims,
                    t.data.len()
                )));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(ndims);
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let len = out.len() as u64;
        out.extend_from_slice(&len.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| NnError::Checkpoint(format!("non-UTF-8 tensor name at byte {}", r.pos)))?
                .to_string();
            let ndims = r.take(1)?[0] as usize;
            let dims = (0..ndims).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| NnError::Checkpoint(format!("tensor `{name}` too large")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| NnError::Checkpoint("overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        let body_len = r.pos as u64;
        let stored = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if stored != body_len {
            return Err(NnError::Checkpoint(format!(
                "length check failed: stored {stored}, actual {body_len}"
            )));
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?)
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NnError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
