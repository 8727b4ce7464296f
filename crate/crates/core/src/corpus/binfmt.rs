//! Binary embedding files.
//!
//! Every file starts with an ASCII magic, a 32-bit little-endian dimension
//! (`m` bits for structural files, `d` floats otherwise) and a 64-bit
//! little-endian record count. Each record is an id, written as a 32-bit
//! little-endian byte length followed by UTF-8, and then its payload:
//!
//! | file       | magic     | payload                        |
//! |------------|-----------|--------------------------------|
//! | structural | `KHSTRU1` | `m / 8` bytes, LSB-first bits  |
//! | semantic   | `KHSEM1`  | `d` little-endian `f32` values |
//! | k-means    | `KHKM1`   | `d` little-endian `f32` values |
//!
//! An empty file list is written with dimension 0.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{SemanticEmbedding, StructuralEmbedding};
use crate::error::{Error, Result};

pub const STRUCTURAL_MAGIC: &[u8] = b"KHSTRU1";
pub const SEMANTIC_MAGIC: &[u8] = b"KHSEM1";
pub const KMEANS_MAGIC: &[u8] = b"KHKM1";

pub fn save_structural(
    embeddings: &[(String, StructuralEmbedding)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_structural(embeddings, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn write_structural<W: Write>(
    embeddings: &[(String, StructuralEmbedding)],
    mut w: W,
) -> Result<()> {
    let m = embeddings.first().map_or(0, |(_, e)| e.m());
    if let Some((id, e)) = embeddings.iter().find(|(_, e)| e.m() != m) {
        return Err(Error::validation(format!(
            "mixed bit lengths: {id:?} has m={} but the file uses m={m}",
            e.m()
        )));
    }
    write_header(&mut w, STRUCTURAL_MAGIC, m, embeddings.len())?;
    for (id, e) in embeddings {
        write_id(&mut w, id)?;
        w.write_all(&e.to_bytes())?;
    }
    Ok(())
}

pub fn load_structural(path: impl AsRef<Path>) -> Result<Vec<(String, StructuralEmbedding)>> {
    read_structural(&fs::read(path)?)
}

pub fn read_structural(bytes: &[u8]) -> Result<Vec<(String, StructuralEmbedding)>> {
    let mut r = ByteReader::new(bytes);
    let (m, count) = r.header(STRUCTURAL_MAGIC)?;
    if count > 0 && (m < 64 || !m.is_power_of_two()) {
        return Err(Error::format(format!("invalid bit length m={m}")));
    }
    let payload = (m / 8) as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let id = r.id()?;
        let e = StructuralEmbedding::from_bytes(m, r.take(payload)?)?;
        out.push((id, e));
    }
    r.finish()?;
    Ok(out)
}

pub fn save_semantic(
    embeddings: &[(String, SemanticEmbedding)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_semantic(embeddings, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn write_semantic<W: Write>(
    embeddings: &[(String, SemanticEmbedding)],
    mut w: W,
) -> Result<()> {
    let d = embeddings.first().map_or(0, |(_, e)| e.d());
    if let Some((id, e)) = embeddings.iter().find(|(_, e)| e.d() != d) {
        return Err(Error::validation(format!(
            "mixed dimensions: {id:?} has d={} but the file uses d={d}",
            e.d()
        )));
    }
    let d = u32::try_from(d).map_err(|_| Error::validation("dimension exceeds u32"))?;
    write_header(&mut w, SEMANTIC_MAGIC, d, embeddings.len())?;
    for (id, e) in embeddings {
        write_id(&mut w, id)?;
        write_f32s(&mut w, e.values())?;
    }
    Ok(())
}

pub fn load_semantic(path: impl AsRef<Path>) -> Result<Vec<(String, SemanticEmbedding)>> {
    read_semantic(&fs::read(path)?)
}

pub fn read_semantic(bytes: &[u8]) -> Result<Vec<(String, SemanticEmbedding)>> {
    read_float_records(bytes, SEMANTIC_MAGIC)?
        .into_iter()
        .map(|(id, values)| SemanticEmbedding::new(values).map(|e| (id, e)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(e.to_string()))
}

pub(crate) fn read_float_records(bytes: &[u8], magic: &[u8]) -> Result<Vec<(String, Vec<f32>)>> {
    let mut r = ByteReader::new(bytes);
    let (d, count) = r.header(magic)?;
    if count > 0 && d == 0 {
        return Err(Error::format("zero dimension with non-zero record count"));
    }
    let mut out = Vec::new();
    for _ in 0..count {
        let id = r.id()?;
        let raw = r.take(d as usize * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        out.push((id, values));
    }
    r.finish()?;
    Ok(out)
}

pub(crate) fn write_header<W: Write>(
    w: &mut W,
    magic: &[u8],
    dim: u32,
    count: usize,
) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(count as u64).to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_id<W: Write>(w: &mut W, id: &str) -> Result<()> {
    let len = u32::try_from(id.len()).map_err(|_| Error::validation("id longer than u32::MAX"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(id.as_bytes())?;
    Ok(())
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| {
                Error::format(format!(
                    "truncated file: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn header(&mut self, magic: &[u8]) -> Result<(u32, u64)> {
        let found = self.take(magic.len())?;
        if found != magic {
            return Err(Error::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok((self.u32()?, self.u64()?))
    }

    fn id(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format("record id is not UTF-8"))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after last record",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
