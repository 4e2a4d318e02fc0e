//! `EMB1` embedding files.
//!
//! Layout: magic `EMB1`, u32 record count, u32 dimension, then per record a
//! u16 key length, the UTF-8 key and `d` f32 values. Integers and floats are
//! little-endian.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MapleError, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";

pub fn essay_key(id: &str) -> String {
    format!("essay:{id}")
}

pub fn prompt_key(id: &str) -> String {
    format!("prompt:{id}")
}

pub fn rubric_key(trait_id: &str) -> String {
    format!("rubric:{trait_id}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    d: usize,
    records: Vec<(String, Vec<f32>)>,
    index: HashMap<String, usize>,
}

impl EmbeddingFile {
    pub fn new(d: usize) -> Self {
        EmbeddingFile { d, records: Vec::new(), index: HashMap::new() }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[(String, Vec<f32>)] {
        &self.records
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.index.get(key).map(|&i| self.records[i].1.as_slice())
    }

    /// Appends a record; keys must be unique and vectors `d` long.
    pub fn push(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let key = key.into();
        if vector.len() != self.d {
            return Err(MapleError::Data(format!("embedding {key}: expected {} values, found {}", self.d, vector.len())));
        }
        if key.len() > usize::from(u16::MAX) {
            return Err(MapleError::Data(format!("embedding key longer than 65535 bytes: {key:.40}...")));
        }
        if self.index.contains_key(&key) {
            return Err(MapleError::Data(format!("duplicate embedding key {key}")));
        }
        self.index.insert(key.clone(), self.records.len());
        self.records.push((key, vector));
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| MapleError::io(path, e))?;
        Self::read_from(BufReader::new(file)).map_err(|e| match e {
            MapleError::Data(msg) => MapleError::data(path, msg),
            other => other,
        })
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(MapleError::Data(format!("bad magic {magic:?}, expected EMB1")));
        }
        let count = read_u32(&mut r, "record count")? as usize;
        let d = read_u32(&mut r, "dimension")? as usize;
        let mut out = EmbeddingFile::new(d);
        let mut buf = vec![0u8; d * 4];
        for i in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len, "key length")?;
            let mut key = vec![0u8; usize::from(u16::from_le_bytes(len))];
            read_exact(&mut r, &mut key, "key")?;
            let key = String::from_utf8(key).map_err(|_| MapleError::Data(format!("record {i}: key is not UTF-8")))?;
            read_exact(&mut r, &mut buf, "vector")?;
            let v = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            out.push(key, v)?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| MapleError::Data(e.to_string()))? != 0 {
            return Err(MapleError::Data(format!("trailing bytes after {count} records")));
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        for (key, v) in &self.records {
            w.write_all(&(key.len() as u16).to_le_bytes())?;
            w.write_all(key.as_bytes())?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_to(w))
    }
}

pub(crate) fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(|e| MapleError::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| MapleError::io(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| MapleError::io(path, e))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| MapleError::Data(format!("truncated file while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}
