use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BINLOCAR";
pub const FORMAT_VERSION: u32 = 1;

/// Typed, shaped payload of a container entry. Elements are row-major.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn tag(&self) -> u8 {
        match self {
            ArrayData::F64(_) => 0,
            ArrayData::U64(_) => 1,
            ArrayData::U8(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

/// Named arrays plus the cue-layout fingerprint and the run configuration
/// (JSON) that produced them. Little-endian throughout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArrayContainer {
    pub fingerprint: String,
    pub config_json: String,
    pub entries: Vec<ArrayEntry>,
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated container".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: u64, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n).read_to_end(&mut buf)?;
    if buf.len() as u64 != n {
        return Err(Error::Format(format!("truncated {what}")));
    }
    Ok(buf)
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u64(r)?;
    String::from_utf8(read_bytes(r, n, "string")?).map_err(|_| Error::Format("string is not UTF-8".into()))
}

impl ArrayContainer {
    pub fn new(fingerprint: impl Into<String>, config_json: impl Into<String>) -> Self {
        Self { fingerprint: fingerprint.into(), config_json: config_json.into(), entries: Vec::new() }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: ArrayData) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("entry {name}: shape {shape:?} does not hold {} elements", data.len())));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate entry {name}")));
        }
        self.entries.push(ArrayEntry { name: name.into(), shape: shape.to_vec(), data });
        Ok(())
    }

    pub fn push_f64(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        self.push(name, shape, ArrayData::F64(data))
    }

    pub fn get(&self, name: &str) -> Result<&ArrayEntry> {
        self.entries.iter().find(|e| e.name == name).ok_or_else(|| Error::Format(format!("missing entry {name}")))
    }

    /// `f64` entry with its shape checked against `shape`.
    pub fn f64s(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let e = self.get(name)?;
        match &e.data {
            ArrayData::F64(v) if e.shape == shape => Ok(v),
            ArrayData::F64(_) => Err(Error::Format(format!("entry {name} has shape {:?}, expected {shape:?}", e.shape))),
            _ => Err(Error::Format(format!("entry {name} is not f64"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.fingerprint)?;
        write_str(&mut w, &self.config_json)?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            write_str(&mut w, &e.name)?;
            w.write_all(&[e.data.tag()])?;
            w.write_all(&(e.shape.len() as u64).to_le_bytes())?;
            for &s in &e.shape {
                w.write_all(&(s as u64).to_le_bytes())?;
            }
            match &e.data {
                ArrayData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                ArrayData::U64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                ArrayData::U8(v) => w.write_all(v)?,
            }
        }
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Format("not a binloc container".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("not a binloc container".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v).map_err(|_| Error::Format("truncated header".into()))?;
        let version = u32::from_le_bytes(v);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("container version {version}, this build reads {FORMAT_VERSION}")));
        }
        let fingerprint = read_str(&mut r)?;
        let config_json = read_str(&mut r)?;
        let n = read_u64(&mut r)?;
        let mut out = Self { fingerprint, config_json, entries: Vec::new() };
        for _ in 0..n {
            let name = read_str(&mut r)?;
            let tag = read_bytes(&mut r, 1, "entry type")?[0];
            let ndim = read_u64(&mut r)?;
            if ndim > 16 {
                return Err(Error::Format(format!("entry {name} has {ndim} dimensions")));
            }
            let shape = (0..ndim).map(|_| read_u64(&mut r).map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1u64, |a, &s| a.checked_mul(s as u64))
                .ok_or_else(|| Error::Format(format!("entry {name} is too large")))?;
            let width = match tag {
                0 | 1 => 8,
                2 => 1,
                t => return Err(Error::Format(format!("entry {name} has unknown type {t}"))),
            };
            let size = count.checked_mul(width).filter(|&s| s <= r.len() as u64);
            let raw = read_bytes(&mut r, size.ok_or_else(|| Error::Format(format!("truncated entry {name}")))?, "entry")?;
            let data = match tag {
                0 => ArrayData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                1 => ArrayData::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
                _ => ArrayData::U8(raw),
            };
            out.push(&name, &shape, data).map_err(|e| Error::Format(e.to_string()))?;
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after the last entry".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Fails with [`Error::FingerprintMismatch`] unless the container was
    /// written for the `expected` cue layout.
    pub fn require_fingerprint(&self, expected: &str) -> Result<()> {
        if self.fingerprint != expected {
            return Err(Error::FingerprintMismatch { expected: expected.into(), found: self.fingerprint.clone() });
        }
        Ok(())
    }
}
