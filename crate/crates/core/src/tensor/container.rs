//! Flat `.vimq` container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "VIMQ"
//! version      u16      = 1
//! count        u32
//! count x entry:
//!   name_len   u16, name (UTF-8)
//!   dtype      u8       (0 f32, 1 i8, 2 i32, 3 u4, 4 u8)
//!   rank       u8, dims u64 x rank
//!   offset     u64      byte offset into the payload
//!   nbytes     u64
//! payload_len  u64
//! payload      payload_len bytes
//! ```

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use super::{DType, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VIMQ";
pub const VERSION: u16 = 1;

/// Ordered list of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut c = Self::new();
        for (name, t) in entries {
            c.insert(name, t)?;
        }
        Ok(c)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.contains(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Missing(name.to_string()))
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(String, Tensor)> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_container(&mut buf, &self.entries)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let entries = read_container(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after payload", cursor.len())));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn write_container<W: Write>(mut w: W, entries: &[(String, Tensor)]) -> Result<()> {
    let mut seen = HashSet::new();
    for (name, _) in entries {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateName(name.clone()));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!("tensor name of {} bytes is too long", name.len())));
        }
    }

    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;

    let payloads: Vec<Vec<u8>> = entries.iter().map(|(_, t)| t.to_le_bytes()).collect();
    let mut offset = 0u64;
    for ((name, t), payload) in entries.iter().zip(&payloads) {
        if t.shape().len() > u8::MAX as usize {
            return Err(Error::Format(format!("rank {} too large", t.shape().len())));
        }
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.dtype().tag(), t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        w.write_all(&(payload.len() as u64).to_le_bytes())?;
        offset += payload.len() as u64;
    }
    w.write_all(&offset.to_le_bytes())?;
    for p in &payloads {
        w.write_all(p)?;
    }
    Ok(())
}

struct Header {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated container".into()),
        _ => Error::Io(e),
    })?;
    Ok(b)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<R, 8>(r)?))
}

pub fn read_container<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let magic = read_exact::<_, 4>(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, not a VIMQ container".into()));
    }
    let version = u16::from_le_bytes(read_exact::<_, 2>(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let count = u32::from_le_bytes(read_exact::<_, 4>(&mut r)?) as usize;

    let mut headers = Vec::with_capacity(count.min(1 << 16));
    let mut names = HashSet::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact::<_, 2>(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| Error::Format("truncated entry name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        if !names.insert(name.clone()) {
            return Err(Error::DuplicateName(name));
        }
        let [tag, rank] = read_exact::<_, 2>(&mut r)?;
        let dtype = DType::from_tag(tag)?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let d = read_u64(&mut r)?;
            shape.push(usize::try_from(d).map_err(|_| Error::Format("dimension overflows usize".into()))?);
        }
        let offset = read_u64(&mut r)?;
        let nbytes = read_u64(&mut r)?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("`{name}`: element count overflows")))?;
        if dtype.storage_bytes(numel) as u64 != nbytes {
            return Err(Error::Format(format!(
                "`{name}`: {nbytes} bytes do not match {dtype:?} shape {shape:?}"
            )));
        }
        headers.push(Header { name, dtype, shape, offset, nbytes });
    }

    let payload_len = read_u64(&mut r)?;
    let mut spans: Vec<(u64, u64)> = Vec::with_capacity(headers.len());
    for h in &headers {
        let end = h.offset.checked_add(h.nbytes).filter(|&e| e <= payload_len).ok_or_else(|| {
            Error::Format(format!("`{}` lies outside the {payload_len}-byte payload", h.name))
        })?;
        spans.push((h.offset, end));
    }
    spans.sort_unstable();
    if spans.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::Format("overlapping tensor payloads".into()));
    }

    let payload_len = usize::try_from(payload_len).map_err(|_| Error::Format("payload too large".into()))?;
    let mut payload = vec![0u8; payload_len];
    r.read_exact(&mut payload).map_err(|_| Error::Format("truncated payload".into()))?;

    headers
        .into_iter()
        .map(|h| {
            let start = h.offset as usize;
            let bytes = &payload[start..start + h.nbytes as usize];
            let t = Tensor::from_le_bytes(h.dtype, &h.shape, bytes)?;
            Ok((h.name, t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_round_trip() {
        let t = Tensor::f32(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = Container::from_entries(vec![("eye".into(), t.clone())]).unwrap();
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.require("eye").unwrap(), &t);
    }

    #[test]
    fn empty_container() {
        let bytes = Container::new().to_bytes().unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 4 + 8);
        assert!(Container::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = Tensor::i32(&[1], vec![7]).unwrap();
        let entries = vec![("a".to_string(), t.clone()), ("a".to_string(), t)];
        assert!(matches!(write_container(Vec::new(), &entries), Err(Error::DuplicateName(_))));
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let t = Tensor::f32(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let good = Container::from_entries(vec![("x".into(), t)]).unwrap().to_bytes().unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(Container::from_bytes(&bad_magic).is_err());

        assert!(Container::from_bytes(&good[..good.len() - 1]).is_err());

        let mut bad_tag = good.clone();
        // header: magic(4) version(2) count(4) name_len(2) name(1) -> dtype at 13
        bad_tag[13] = 9;
        assert!(Container::from_bytes(&bad_tag).is_err());
    }
}
