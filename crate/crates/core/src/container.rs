//! Little-endian binary container shared by model files (`LRFM`) and controller checkpoints
//! (`LRCP`).
//!
//! ```text
//! magic [4] | version u32 = 1 | entry_count u32
//! entry*:   name_len u16 | name (UTF-8) | flags u8 | m u32 | n u32 | m·n f64 row-major
//! metadata_count u32
//! pair*:    key_len u16 | key | val_len u32 | val
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub flags: u8,
    pub matrix: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub entries: Vec<Entry>,
    pub metadata: BTreeMap<String, String>,
}

impl Container {
    pub fn new(magic: [u8; 4]) -> Self {
        Self { magic, entries: Vec::new(), metadata: BTreeMap::new() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(self.entries.len(), "entry count")?.to_le_bytes());
        for e in &self.entries {
            write_str16(&mut out, &e.name)?;
            out.push(e.flags);
            let (m, n) = e.matrix.shape();
            out.extend_from_slice(&u32_len(m, "row count")?.to_le_bytes());
            out.extend_from_slice(&u32_len(n, "column count")?.to_le_bytes());
            for v in e.matrix.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&u32_len(self.metadata.len(), "metadata count")?.to_le_bytes());
        for (k, v) in &self.metadata {
            write_str16(&mut out, k)?;
            out.extend_from_slice(&u32_len(v.len(), "metadata value")?.to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], expected_magic: [u8; 4]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != expected_magic {
            return Err(Error::format(0, format!("bad magic {magic:?}, expected {expected_magic:?}")));
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(at as u64, format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.str16()?;
            let flags = r.u8()?;
            let m = r.u32()? as usize;
            let n = r.u32()? as usize;
            let at = r.pos;
            let len = m
                .checked_mul(n)
                .filter(|len| len.checked_mul(8).map_or(false, |b| b <= r.remaining()))
                .ok_or_else(|| Error::format(at as u64, format!("truncated data for {m}x{n} entry `{name}`")))?;
            let raw = r.take(len * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            entries.push(Entry { name, flags, matrix: Matrix::from_vec(m, n, data) });
        }
        let meta_count = r.u32()? as usize;
        let mut metadata = BTreeMap::new();
        for _ in 0..meta_count {
            let key = r.str16()?;
            let at = r.pos;
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let value = String::from_utf8(raw.to_vec())
                .map_err(|_| Error::format(at as u64, "metadata value is not UTF-8"))?;
            metadata.insert(key, value);
        }
        if r.remaining() != 0 {
            return Err(Error::format(r.pos as u64, "trailing bytes"));
        }
        Ok(Self { magic, entries, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected_magic: [u8; 4]) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, expected_magic)
    }
}

fn u32_len(len: usize, what: &str) -> Result<u32> {
    u32::try_from(len).map_err(|_| Error::format(0, format!("{what} {len} does not fit in u32")))
}

fn write_str16(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::format(0, format!("name `{s}` is too long")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(Error::format(
                self.pos as u64,
                format!("unexpected end of file (needed {len} bytes, {} left)", self.remaining()),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
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

    fn str16(&mut self) -> Result<String> {
        let at = self.pos;
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(at as u64, "name is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new(*b"TEST");
        c.entries.push(Entry { name: "a".into(), flags: 1, matrix: Matrix::from_rows(&[&[1.0, -0.0], &[f64::MIN_POSITIVE, 3.5]]) });
        c.metadata.insert("k".into(), "v".into());
        c
    }

    #[test]
    fn layout_is_little_endian() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"TEST");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..14], &[1, 0]);
        assert_eq!(bytes[14], b'a');
        assert_eq!(bytes[15], 1);
        assert_eq!(&bytes[16..20], &[2, 0, 0, 0]);
        assert_eq!(&bytes[24..32], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 32 + 4 + 2 + 1 + 4 + 1);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [2, 10, 30, bytes.len() - 1] {
            match Container::from_bytes(&bytes[..cut], *b"TEST") {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("expected format error, got {other:?}"),
            }
        }
    }

    #[test]
    fn bad_version() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 2;
        assert!(matches!(Container::from_bytes(&bytes, *b"TEST"), Err(Error::Format { offset: 4, .. })));
    }
}
