use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, EmbeddingRecord, Kind};

const MAGIC: &[u8; 4] = b"EMB1";

/// Immutable-after-load collection of base embeddings with per-kind id
/// lookup. Record order is file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    rules: HashMap<String, usize>,
    clauses: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            records: Vec::new(),
            rules: HashMap::new(),
            clauses: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    /// Validates and appends a record.
    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<(), DataError> {
        if record.vector.len() != self.dim {
            return Err(DataError::DimMismatch {
                id: record.id,
                got: record.vector.len(),
                dim: self.dim,
            });
        }
        if record.vector.iter().any(|x| !x.is_finite()) {
            return Err(DataError::NonFinite { id: record.id });
        }
        let norm_sq: f64 = record.vector.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
        if norm_sq <= 0.0 {
            return Err(DataError::ZeroNormVector { id: record.id });
        }
        let index = match record.kind {
            Kind::Rule => &mut self.rules,
            Kind::Clause => &mut self.clauses,
        };
        if index.contains_key(&record.id) {
            return Err(DataError::DuplicateId {
                id: record.id,
                kind: record.kind,
            });
        }
        index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, kind: Kind, id: &str) -> Option<&EmbeddingRecord> {
        let index = match kind {
            Kind::Rule => &self.rules,
            Kind::Clause => &self.clauses,
        };
        index.get(id).map(|&i| &self.records[i])
    }

    pub fn vector(&self, kind: Kind, id: &str) -> Result<&[f32], DataError> {
        self.get(kind, id)
            .map(|r| r.vector.as_slice())
            .ok_or_else(|| DataError::UnknownId {
                id: id.to_string(),
                kind,
            })
    }
}

pub fn parse_embeddings(path: &Path) -> Result<EmbeddingStore, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_embeddings(BufReader::new(file)).map_err(|e| match e {
        DataError::Io { source, .. } => DataError::io(path, source),
        other => other,
    })
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], record: usize) -> Result<(), DataError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DataError::Truncated { record }
        } else {
            DataError::Io {
                path: String::from("<stream>"),
                source: e,
            }
        }
    })
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize, DataError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => {
                return Err(DataError::Io {
                    path: String::from("<stream>"),
                    source: e,
                })
            }
        }
    }
    Ok(filled)
}

/// Reads an `EMB1` stream, stopping at the first invariant violation.
pub fn read_embeddings<R: Read>(mut r: R) -> Result<EmbeddingStore, DataError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| DataError::BadMagic)?;
    if &magic != MAGIC {
        return Err(DataError::BadMagic);
    }
    let mut word = [0u8; 4];
    read_exact_or(&mut r, &mut word, 0)?;
    let dim = u32::from_le_bytes(word) as usize;
    read_exact_or(&mut r, &mut word, 0)?;
    let count = u32::from_le_bytes(word) as usize;

    let mut store = EmbeddingStore::new(dim);
    let mut floats = vec![0u8; dim * 4];
    for record in 0..count {
        let mut tag = [0u8; 1];
        read_exact_or(&mut r, &mut tag, record)?;
        let kind = Kind::from_tag(tag[0]).ok_or(DataError::BadKind { record, tag: tag[0] })?;
        let mut len = [0u8; 2];
        read_exact_or(&mut r, &mut len, record)?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or(&mut r, &mut id, record)?;
        let id = String::from_utf8(id).map_err(|_| DataError::InvalidId { record })?;
        let got = read_full(&mut r, &mut floats)?;
        if got < floats.len() {
            return Err(DataError::DimMismatch { id, got: got / 4, dim });
        }
        let vector = floats
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(EmbeddingRecord { id, kind, vector })?;
    }
    // bytes past the declared record count are rejected
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => Ok(store),
        Ok(_) => Err(DataError::TrailingBytes { count }),
        Err(e) => Err(DataError::Io {
            path: String::from("<stream>"),
            source: e,
        }),
    }
}

pub fn write_embeddings<W: Write>(out: W, store: &EmbeddingStore) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    out.write_all(MAGIC)?;
    out.write_all(&(store.dim() as u32).to_le_bytes())?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for rec in store.records() {
        out.write_all(&[rec.kind.tag()])?;
        let id = rec.id.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "embedding id longer than 65535 bytes")
        })?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(id)?;
        for x in &rec.vector {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()
}
