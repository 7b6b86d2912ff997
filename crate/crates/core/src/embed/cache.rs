//! Append-only embedding store keyed by SHA-256 of the sentence text.
//!
//! Layout (little-endian):
//!
//! ```text
//! "PLMEMB01" | u32 model_len | model bytes | u32 dim | u64 count | count x (32-byte key | dim x f32)
//! ```
//!
//! Each batch is appended, the header count rewritten, then the file synced.
//! A torn tail from an interrupted write is ignored on read and cut off before
//! the next append.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{EmbedError, EmbeddingVector, Result};

pub const CACHE_MAGIC: &[u8; 8] = b"PLMEMB01";

pub type Key = [u8; 32];

pub fn content_key(text: &str) -> Key {
    Sha256::digest(text.as_bytes()).into()
}

/// What a load found on disk.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CacheReadReport {
    pub records: usize,
    pub header_count: u64,
    /// Bytes past the last complete record.
    pub torn_bytes: u64,
}

#[derive(Debug)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    model_id: String,
    dim: Option<usize>,
    entries: HashMap<Key, Vec<f32>>,
    /// Insertion order, so rewrites are reproducible.
    order: Vec<Key>,
    /// Byte length of the valid prefix of the file, if it exists.
    valid_len: Option<u64>,
    report: CacheReadReport,
}

fn header_len(model_id: &str) -> u64 {
    8 + 4 + model_id.len() as u64 + 4 + 8
}

impl EmbeddingCache {
    pub fn in_memory(model_id: impl Into<String>) -> Self {
        EmbeddingCache {
            path: None,
            model_id: model_id.into(),
            dim: None,
            entries: HashMap::new(),
            order: Vec::new(),
            valid_len: None,
            report: CacheReadReport::default(),
        }
    }

    /// Opens `path`, or starts empty if it does not exist yet.
    pub fn open(path: impl AsRef<Path>, model_id: &str) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut cache = Self::in_memory(model_id);
        cache.path = Some(path.clone());
        if !path.exists() {
            return Ok(cache);
        }
        let file_len = std::fs::metadata(&path)?.len();
        let mut r = BufReader::new(File::open(&path)?);
        let mut magic = [0u8; 8];
        read_exact_or_corrupt(&mut r, &mut magic, "header")?;
        if &magic != CACHE_MAGIC {
            return Err(EmbedError::CacheCorrupt(format!(
                "{}: bad magic {:?}",
                path.display(),
                String::from_utf8_lossy(&magic)
            )));
        }
        let model_len = read_u32(&mut r)? as usize;
        if model_len > 4096 {
            return Err(EmbedError::CacheCorrupt(format!("model id length {model_len}")));
        }
        let mut model = vec![0u8; model_len];
        read_exact_or_corrupt(&mut r, &mut model, "model id")?;
        let found = String::from_utf8(model)
            .map_err(|_| EmbedError::CacheCorrupt("model id is not UTF-8".into()))?;
        if found != model_id {
            return Err(EmbedError::ModelMismatch {
                expected: model_id.to_string(),
                found,
            });
        }
        let dim = read_u32(&mut r)? as usize;
        if dim == 0 {
            return Err(EmbedError::CacheCorrupt("zero dimension".into()));
        }
        let header_count = read_u64(&mut r)?;
        let hlen = header_len(model_id);
        let rec_len = 32 + 4 * dim as u64;
        let body = file_len.saturating_sub(hlen);
        let complete = body / rec_len;
        let mut buf = vec![0u8; rec_len as usize];
        for _ in 0..complete {
            r.read_exact(&mut buf)?;
            let key: Key = buf[..32].try_into().unwrap();
            let values: Vec<f32> = buf[32..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cache.insert(key, values);
        }
        cache.dim = Some(dim);
        cache.valid_len = Some(hlen + complete * rec_len);
        cache.report = CacheReadReport {
            records: complete as usize,
            header_count,
            torn_bytes: body - complete * rec_len,
        };
        Ok(cache)
    }

    fn insert(&mut self, key: Key, values: Vec<f32>) -> bool {
        if self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, values);
        self.order.push(key);
        true
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn read_report(&self) -> &CacheReadReport {
        &self.report
    }

    pub fn contains(&self, text: &str) -> bool {
        self.entries.contains_key(&content_key(text))
    }

    pub fn get(&self, text: &str) -> Option<EmbeddingVector> {
        self.get_key(&content_key(text))
    }

    pub fn get_key(&self, key: &Key) -> Option<EmbeddingVector> {
        self.entries.get(key).map(|v| EmbeddingVector {
            model_id: self.model_id.clone(),
            values: v.clone(),
        })
    }

    /// Adds a batch; texts already present are skipped. Returns how many were new.
    pub fn put_batch(&mut self, batch: &[(&str, &EmbeddingVector)]) -> Result<usize> {
        let mut fresh: Vec<(Key, Vec<f32>)> = Vec::new();
        let mut dim = self.dim;
        for (text, emb) in batch {
            if emb.model_id != self.model_id {
                return Err(EmbedError::ModelMismatch {
                    expected: self.model_id.clone(),
                    found: emb.model_id.clone(),
                });
            }
            match dim {
                Some(d) if d != emb.dim() => {
                    return Err(EmbedError::DimMismatch {
                        expected: d,
                        got: emb.dim(),
                    })
                }
                _ => dim = Some(emb.dim()),
            }
            let key = content_key(text);
            if !self.entries.contains_key(&key) && !fresh.iter().any(|(k, _)| *k == key) {
                fresh.push((key, emb.values.clone()));
            }
        }
        if fresh.is_empty() {
            return Ok(0);
        }
        self.dim = dim;
        if self.path.is_some() {
            self.append(&fresh)?;
        }
        let n = fresh.len();
        for (k, v) in fresh {
            self.insert(k, v);
        }
        Ok(n)
    }

    fn append(&mut self, fresh: &[(Key, Vec<f32>)]) -> Result<()> {
        let path = self.path.clone().expect("append needs a path");
        let dim = self.dim.expect("dim set before append");
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut f = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        let hlen = header_len(&self.model_id);
        match self.valid_len {
            None => {
                f.set_len(0)?;
                let mut w = BufWriter::new(&mut f);
                write_header(&mut w, &self.model_id, dim, 0)?;
                w.flush()?;
                drop(w);
                self.valid_len = Some(hlen);
            }
            Some(len) => f.set_len(len)?,
        }
        let start = self.valid_len.unwrap();
        f.seek(SeekFrom::Start(start))?;
        let mut w = BufWriter::new(&mut f);
        for (k, v) in fresh {
            write_record(&mut w, k, v)?;
        }
        w.flush()?;
        drop(w);
        let count = (self.entries.len() + fresh.len()) as u64;
        f.seek(SeekFrom::Start(hlen - 8))?;
        f.write_all(&count.to_le_bytes())?;
        f.sync_all()?;
        self.valid_len = Some(start + fresh.len() as u64 * (32 + 4 * dim as u64));
        Ok(())
    }

    /// Writes the whole cache to `path` in insertion order.
    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let dim = self
            .dim
            .ok_or_else(|| EmbedError::CacheCorrupt("cannot write a cache with no dimension".into()))?;
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            write_header(&mut w, &self.model_id, dim, self.order.len() as u64)?;
            for k in &self.order {
                write_record(&mut w, k, &self.entries[k])?;
            }
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&Key, &[f32])> {
        self.order.iter().map(|k| (k, self.entries[k].as_slice()))
    }
}

fn write_header(w: &mut impl Write, model_id: &str, dim: usize, count: u64) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&(model_id.len() as u32).to_le_bytes())?;
    w.write_all(model_id.as_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    Ok(())
}

fn write_record(w: &mut impl Write, key: &Key, values: &[f32]) -> Result<()> {
    w.write_all(key)?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_or_corrupt(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => EmbedError::CacheCorrupt(format!("truncated {what}")),
        _ => EmbedError::Io(e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_corrupt(r, &mut b, "header")?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_corrupt(r, &mut b, "header")?;
    Ok(u64::from_le_bytes(b))
}
