//! On-disk formats for embeddings, corpora and vocabularies, and validated ingestion.
//!
//! Embedding file (`EMBV1`), little-endian:
//!
//! ```text
//! magic    5 bytes "EMBV1"
//! n_rows   u64
//! dim      u64
//! dtype    u8      0 = f32
//! payload  f32[n_rows * dim], row-major
//! ```
//!
//! An optional sidecar `<file>.ids` lists one document id per line, aligning rows to corpus ids.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::interpret::{BowCorpus, BowDocument, InterpretError};

pub const EMBEDDING_MAGIC: &[u8; 5] = b"EMBV1";
const HEADER_LEN: usize = 5 + 8 + 8 + 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("E_BAD_MAGIC: {path}: expected {expected}")]
    BadMagic { path: String, expected: &'static str },
    #[error("E_EMB_SIZE: {path}: expected {expected} bytes, found {actual}")]
    EmbSize { path: String, expected: u64, actual: u64 },
    #[error("E_VOCAB_RANGE: document {doc:?} has word id {word_id} >= vocabulary size {vocab_size}")]
    VocabRange { doc: String, word_id: u32, vocab_size: usize },
    #[error("E_ALIGN: {0}")]
    Align(String),
    #[error("E_PARSE: {path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("E_IO: {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl IoError {
    /// Stable machine-readable code, the prefix of the message.
    pub fn code(&self) -> &'static str {
        match self {
            IoError::BadMagic { .. } => "E_BAD_MAGIC",
            IoError::EmbSize { .. } => "E_EMB_SIZE",
            IoError::VocabRange { .. } => "E_VOCAB_RANGE",
            IoError::Align(_) => "E_ALIGN",
            IoError::Parse { .. } => "E_PARSE",
            IoError::Io { .. } => "E_IO",
        }
    }
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn encode_embeddings(m: ArrayView2<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    buf.push(DTYPE_F32);
    for &v in m.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

/// Parses an `EMBV1` buffer; `name` labels errors.
pub fn decode_embeddings(bytes: &[u8], name: &str) -> Result<Array2<f64>> {
    if bytes.len() < 5 || &bytes[..5] != EMBEDDING_MAGIC {
        return Err(IoError::BadMagic { path: name.into(), expected: "EMBV1" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(IoError::EmbSize { path: name.into(), expected: HEADER_LEN as u64, actual: bytes.len() as u64 });
    }
    let n = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let d = u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes"));
    if bytes[21] != DTYPE_F32 {
        return Err(IoError::Parse { path: name.into(), line: 0, reason: format!("unsupported dtype {}", bytes[21]) });
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| IoError::Parse { path: name.into(), line: 0, reason: "header overflows".into() })?;
    if bytes.len() as u64 != expected {
        return Err(IoError::EmbSize { path: name.into(), expected, actual: bytes.len() as u64 });
    }
    let vals: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Array2::from_shape_vec((n as usize, d as usize), vals).expect("sized"))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Writes the matrix and, when given, the id sidecar.
pub fn save_embeddings(path: &Path, m: ArrayView2<f64>, ids: Option<&[String]>) -> Result<()> {
    if let Some(ids) = ids {
        if ids.len() != m.nrows() {
            return Err(IoError::Align(format!("{} ids for {} rows", ids.len(), m.nrows())));
        }
        atomic_write(&sidecar_path(path), lines(ids).as_bytes())?;
    }
    atomic_write(path, &encode_embeddings(m))
}

/// Reads the matrix and its sidecar ids if the sidecar exists.
pub fn load_embeddings(path: &Path) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let m = decode_embeddings(&bytes, &path.display().to_string())?;
    let side = sidecar_path(path);
    let ids = if side.exists() {
        let ids = read_lines(&side)?;
        if ids.len() != m.nrows() {
            return Err(IoError::Align(format!(
                "{}: {} ids for {} embedding rows",
                side.display(),
                ids.len(),
                m.nrows()
            )));
        }
        Some(ids)
    } else {
        None
    };
    Ok((m, ids))
}

fn lines(items: &[String]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(it);
        s.push('\n');
    }
    s
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(io_err(path))?;
    BufReader::new(f)
        .lines()
        .map(|l| l.map_err(io_err(path)))
        .collect()
}

/// Vocabulary file: one token per line, line number = word id.
pub fn load_vocab(path: &Path) -> Result<Vec<String>> {
    read_lines(path)
}

pub fn save_vocab(path: &Path, vocab: &[String]) -> Result<()> {
    atomic_write(path, lines(vocab).as_bytes())
}

/// One corpus line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub tokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

pub fn parse_corpus<R: Read>(reader: R, name: &str) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|source| IoError::Io { path: name.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| IoError::Parse { path: name.into(), line: i + 1, reason: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let f = File::open(path).map_err(io_err(path))?;
    parse_corpus(f, &path.display().to_string())
}

pub fn encode_corpus(records: &[CorpusRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("serialisable"));
        s.push('\n');
    }
    s
}

pub fn save_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    atomic_write(path, encode_corpus(records).as_bytes())
}

/// Embeddings, corpus and vocabulary after cross-validation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub embeddings: Array2<f64>,
    /// Sidecar ids when present; equal to the corpus ids.
    pub embedding_ids: Option<Vec<String>>,
    pub records: Vec<CorpusRecord>,
    pub vocab: Vec<String>,
    /// Bag-of-words view with document frequencies, background prior and IDF.
    pub corpus: BowCorpus,
    pub idf: Vec<f64>,
}

impl Dataset {
    /// Validates and assembles in-memory parts.
    pub fn new(
        embeddings: Array2<f64>,
        embedding_ids: Option<Vec<String>>,
        records: Vec<CorpusRecord>,
        vocab: Vec<String>,
    ) -> Result<Self> {
        if embeddings.nrows() != records.len() {
            return Err(IoError::Align(format!(
                "{} embedding rows but {} corpus documents",
                embeddings.nrows(),
                records.len()
            )));
        }
        if let Some(ids) = &embedding_ids {
            if let Some(i) = (0..ids.len()).find(|&i| ids[i] != records[i].id) {
                return Err(IoError::Align(format!(
                    "row {i}: embedding id {:?} but corpus id {:?}",
                    ids[i], records[i].id
                )));
            }
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(IoError::Parse { path: "embeddings".into(), line: 0, reason: "non-finite value".into() });
        }
        let docs: Vec<BowDocument> = records
            .iter()
            .map(|r| BowDocument::from_tokens(r.id.clone(), &r.tokens, r.group.clone()))
            .collect();
        let corpus = BowCorpus::new(vocab.len(), docs).map_err(|e| match e {
            InterpretError::VocabRange { doc, word_id, vocab_size } => IoError::VocabRange { doc, word_id, vocab_size },
            other => IoError::Parse { path: "corpus".into(), line: 0, reason: other.to_string() },
        })?;
        let idf = corpus.idf_weights();
        Ok(Self { embeddings, embedding_ids, records, vocab, corpus, idf })
    }

    pub fn ingest(embedding_path: &Path, corpus_path: &Path, vocab_path: &Path) -> Result<Self> {
        let (embeddings, ids) = load_embeddings(embedding_path)?;
        let records = load_corpus(corpus_path)?;
        let vocab = load_vocab(vocab_path)?;
        Self::new(embeddings, ids, records, vocab)
    }

    /// Writes the three input files back out.
    pub fn export(&self, embedding_path: &Path, corpus_path: &Path, vocab_path: &Path) -> Result<()> {
        save_embeddings(embedding_path, self.embeddings.view(), self.embedding_ids.as_deref())?;
        save_corpus(corpus_path, &self.records)?;
        save_vocab(vocab_path, &self.vocab)
    }

    /// Group label of every document; `None` when the corpus carries no groups.
    pub fn groups(&self) -> Vec<Option<String>> {
        self.records.iter().map(|r| r.group.clone()).collect()
    }
}
