//! The `PQDA` binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PQDA"  u32 version  u32 entry_count
//! entry_count x { u16 name_len, name (utf-8), u8 dtype, u8 ndim, ndim x u64 dim, u64 offset }
//! payloads
//! ```
//!
//! `offset` is the absolute byte position of the entry's payload. dtype 0 is
//! an IEEE-754 double array, dtype 1 raw bytes (used for utf-8 text such as the
//! config hash).

use std::io::Write;
use std::path::Path;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"PQDA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    Bytes(Vec<u8>),
}

impl Payload {
    fn dtype(&self) -> u8 {
        match self {
            Payload::F64(_) => 0,
            Payload::Bytes(_) => 1,
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            Payload::F64(v) => 8 * v.len(),
            Payload::Bytes(b) => b.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Payload,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_f64(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> &mut Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape of {name}");
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: Payload::F64(data),
        });
        self
    }

    pub fn push_text(&mut self, name: &str, text: &str) -> &mut Self {
        self.entries.push(Entry {
            name: name.to_string(),
            shape: vec![text.len()],
            data: Payload::Bytes(text.as_bytes().to_vec()),
        });
        self
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header_len: usize = 12
            + self
                .entries
                .iter()
                .map(|e| 2 + e.name.len() + 2 + 8 * e.shape.len() + 8)
                .sum::<usize>();
        let mut out = Vec::with_capacity(header_len + self.entries.iter().map(|e| e.data.byte_len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut offset = header_len as u64;
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.data.dtype());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += e.data.byte_len() as u64;
        }
        debug_assert_eq!(out.len(), header_len);
        for e in &self.entries {
            match &e.data {
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::Bytes(b) => out.extend_from_slice(b),
            }
        }
        out
    }

    /// Parses a container; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| CliError::format(path, reason);
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(&bad)? != MAGIC {
            return Err(bad("not a PQDA container".into()));
        }
        let version = r.u32().map_err(&bad)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let count = r.u32().map_err(&bad)? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u16().map_err(&bad)? as usize;
            let name = std::str::from_utf8(r.take(name_len).map_err(&bad)?)
                .map_err(|_| bad("entry name is not utf-8".into()))?
                .to_string();
            let dtype = r.u8().map_err(&bad)?;
            let ndim = r.u8().map_err(&bad)? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(&bad)?;
            let offset = r.u64().map_err(&bad)? as usize;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad(format!("entry {name}: shape overflows")))?;
            let width = match dtype {
                0 => 8,
                1 => 1,
                d => return Err(bad(format!("entry {name}: unknown dtype {d}"))),
            };
            let end = n
                .checked_mul(width)
                .and_then(|len| offset.checked_add(len))
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| bad(format!("entry {name}: payload runs past end of file")))?;
            let raw = &bytes[offset..end];
            let data = if dtype == 0 {
                Payload::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                )
            } else {
                Payload::Bytes(raw.to_vec())
            };
            entries.push(Entry { name, shape, data });
        }
        Ok(Container { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Writes through a temporary file and a rename, so readers never see a
    /// partial container.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn f64s(&self, name: &str, path: &Path) -> Result<(&[usize], &[f64])> {
        match self.get(name) {
            Some(Entry {
                shape,
                data: Payload::F64(v),
                ..
            }) => Ok((shape, v)),
            Some(_) => Err(CliError::format(path, format!("entry {name} is not a double array"))),
            None => Err(CliError::format(path, format!("missing entry {name}"))),
        }
    }

    pub fn text(&self, name: &str, path: &Path) -> Result<&str> {
        match self.get(name) {
            Some(Entry {
                data: Payload::Bytes(b),
                ..
            }) => std::str::from_utf8(b).map_err(|_| CliError::format(path, format!("entry {name} is not utf-8"))),
            Some(_) => Err(CliError::format(path, format!("entry {name} is not text"))),
            None => Err(CliError::format(path, format!("missing entry {name}"))),
        }
    }

    /// A single double stored as a one-element array.
    pub fn scalar(&self, name: &str, path: &Path) -> Result<f64> {
        match self.f64s(name, path)? {
            (_, [v]) => Ok(*v),
            _ => Err(CliError::format(path, format!("entry {name} is not a scalar"))),
        }
    }
}

/// Writes `bytes` to `path` via a sibling temporary file, fsync and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let io = |e| CliError::io(&tmp, e);
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated header at byte {}", self.pos)),
        }
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
