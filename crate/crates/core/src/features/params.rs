//! Flat named parameter storage and the `HVCW` binary weight format.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HVCW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    dims: Vec<usize>,
    offset: usize,
    len: usize,
}

/// Ordered named tensors backed by one contiguous `f64` buffer, so optimizer
/// state and gradients can be plain slices of the same length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<Entry>,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: &[usize], values: Vec<f64>) {
        let len: usize = dims.iter().product();
        assert_eq!(len, values.len(), "tensor values do not match dims");
        self.entries.push(Entry {
            name: name.into(),
            dims: dims.to_vec(),
            offset: self.data.len(),
            len,
        });
        self.data.extend(values);
    }

    fn entry(&self, name: &str) -> &Entry {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("no parameter tensor named {name}"))
    }

    pub fn get(&self, name: &str) -> &[f64] {
        let e = self.entry(name);
        &self.data[e.offset..e.offset + e.len]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        let e = self.entry(name).clone();
        &mut self.data[e.offset..e.offset + e.len]
    }

    /// Range of `name` inside [`ParamSet::data`].
    pub fn range(&self, name: &str) -> std::ops::Range<usize> {
        let e = self.entry(name);
        e.offset..e.offset + e.len
    }

    pub fn dims(&self, name: &str) -> &[usize] {
        &self.entry(name).dims
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Exports every tensor with `prefix` prepended to its name.
    pub fn to_named(&self, prefix: &str) -> Vec<NamedTensor> {
        self.entries
            .iter()
            .map(|e| NamedTensor {
                name: format!("{prefix}{}", e.name),
                dims: e.dims.clone(),
                data: self.data[e.offset..e.offset + e.len].iter().map(|&v| v as f32).collect(),
            })
            .collect()
    }

    /// Fills this set (whose layout is the expected topology) from tensors
    /// named `prefix + name`. Every expected tensor must be present with
    /// matching dims.
    pub fn load_named(&mut self, prefix: &str, tensors: &[NamedTensor]) -> Result<()> {
        for e in self.entries.clone() {
            let full = format!("{prefix}{}", e.name);
            let t = tensors.iter().find(|t| t.name == full).ok_or_else(|| {
                Error::WeightTopologyMismatch(format!("missing tensor {full}"))
            })?;
            if t.dims != e.dims {
                return Err(Error::WeightTopologyMismatch(format!(
                    "{full}: expected dims {:?}, file has {:?}",
                    e.dims, t.dims
                )));
            }
            for (d, s) in self.data[e.offset..e.offset + e.len].iter_mut().zip(&t.data) {
                *d = *s as f64;
            }
        }
        if !self.is_finite() {
            return Err(Error::WeightTopologyMismatch(format!(
                "non-finite values under {prefix}"
            )));
        }
        Ok(())
    }
}

/// One tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn find<'a>(tensors: &'a [NamedTensor], name: &str) -> Option<&'a NamedTensor> {
        tensors.iter().find(|t| t.name == name)
    }
}

pub fn encode_weights(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::WeightTopologyMismatch(format!(
                "weight file truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_weights(buf: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::WeightTopologyMismatch("bad magic, not a weight file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::WeightTopologyMismatch(format!(
            "unsupported weight format version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let nlen = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| Error::WeightTopologyMismatch("tensor name is not UTF-8".into()))?;
        let rank = r.take(1)?[0] as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, dims, data });
    }
    if r.pos != buf.len() {
        return Err(Error::WeightTopologyMismatch("trailing bytes after last tensor".into()));
    }
    Ok(tensors)
}

pub fn save_weights(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_weights(tensors)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&buf)
}
