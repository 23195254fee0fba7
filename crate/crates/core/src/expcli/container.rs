//! `NTA1` named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NTA1"                      magic + version
//! u32                         entry count
//! per entry:
//!   u16 name_len, name bytes  UTF-8, unique, non-empty
//!   u8  dtype                 0 = f32, 1 = i64, 2 = u8 (UTF-8 text)
//!   u8  ndim, ndim × u64      dims
//!   payload                   product(dims) little-endian values
//! ```
//!
//! Metadata is a JSON document stored as a text entry named `__meta__`.
//! Floating tensors are held as `f64` in memory and written as `f32`.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 3] = b"NTA";
pub const VERSION: u8 = b'1';
pub const META_ENTRY: &str = "__meta__";

const DTYPE_F32: u8 = 0;
const DTYPE_I64: u8 = 1;
const DTYPE_U8: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    F32(Tensor),
    I64 { shape: Vec<usize>, values: Vec<i64> },
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: IndexMap<String, Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(&mut self, name: &str, entry: Entry) -> Result<()> {
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::Format(format!("invalid entry name length {}", name.len())));
        }
        if self.entries.contains_key(name) {
            return Err(Error::Format(format!("duplicate entry '{name}'")));
        }
        self.entries.insert(name.to_string(), entry);
        Ok(())
    }

    pub fn insert_tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        self.insert(name, Entry::F32(t.clone()))
    }

    pub fn insert_i64(&mut self, name: &str, shape: Vec<usize>, values: Vec<i64>) -> Result<()> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::Format(format!("entry '{name}': shape does not match value count")));
        }
        self.insert(name, Entry::I64 { shape, values })
    }

    pub fn set_meta(&mut self, meta: &serde_json::Value) -> Result<()> {
        self.entries.shift_remove(META_ENTRY);
        self.insert(META_ENTRY, Entry::Text(serde_json::to_string(meta)?))
    }

    pub fn meta(&self) -> Result<Option<serde_json::Value>> {
        match self.entries.get(META_ENTRY) {
            Some(Entry::Text(s)) => Ok(Some(serde_json::from_str(s)?)),
            Some(_) => Err(Error::Format("metadata entry is not text".into())),
            None => Ok(None),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.entries.get(name) {
            Some(Entry::F32(t)) => Ok(t),
            Some(_) => Err(Error::Format(format!("entry '{name}' is not a float tensor"))),
            None => Err(Error::Format(format!("missing entry '{name}'"))),
        }
    }

    pub fn i64s(&self, name: &str) -> Result<(&[usize], &[i64])> {
        match self.entries.get(name) {
            Some(Entry::I64 { shape, values }) => Ok((shape, values)),
            Some(_) => Err(Error::Format(format!("entry '{name}' is not an i64 tensor"))),
            None => Err(Error::Format(format!("missing entry '{name}'"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (dtype, shape): (u8, Vec<usize>) = match entry {
                Entry::F32(t) => (DTYPE_F32, t.shape().to_vec()),
                Entry::I64 { shape, .. } => (DTYPE_I64, shape.clone()),
                Entry::Text(s) => (DTYPE_U8, vec![s.len()]),
            };
            if shape.len() > u8::MAX as usize {
                return Err(Error::Format(format!("entry '{name}' has too many dims")));
            }
            out.push(dtype);
            out.push(shape.len() as u8);
            for d in &shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            match entry {
                Entry::F32(t) => {
                    for &v in t.data() {
                        let f = v as f32;
                        if !f.is_finite() {
                            return Err(Error::Format(format!("entry '{name}': {v} overflows f32")));
                        }
                        out.extend_from_slice(&f.to_le_bytes());
                    }
                }
                Entry::I64 { values, .. } => {
                    for v in values {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::Text(s) => out.extend_from_slice(s.as_bytes()),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if &magic[..3] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        if magic[3] != VERSION {
            return Err(Error::Format(format!(
                "version mismatch: expected {}, found {}",
                VERSION as char, magic[3] as char
            )));
        }
        let count = r.u32()?;
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Format("dim too large".into()))?);
            }
            let count: usize = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format("entry size overflows".into()))?;
            let entry = match dtype {
                DTYPE_F32 => {
                    let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Format("entry size overflows".into()))?)?;
                    let values = raw
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                        .collect();
                    Entry::F32(Tensor::new(shape, values)?)
                }
                DTYPE_I64 => {
                    let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("entry size overflows".into()))?)?;
                    let values = raw
                        .chunks_exact(8)
                        .map(|b| i64::from_le_bytes(b.try_into().expect("8 bytes")))
                        .collect();
                    Entry::I64 { shape, values }
                }
                DTYPE_U8 if ndim == 1 => {
                    let raw = r.take(count)?;
                    Entry::Text(
                        String::from_utf8(raw.to_vec())
                            .map_err(|_| Error::Format(format!("entry '{name}' is not UTF-8")))?,
                    )
                }
                other => return Err(Error::Format(format!("unknown dtype code {other}"))),
            };
            c.insert(&name, entry)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Container::from_bytes(&fs::read(path)?)
    }
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
            .ok_or_else(|| Error::Format("truncated container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
