//! Emission matrix file.
//!
//! ```text
//! magic       5 bytes  "EMIS1"
//! K           u64
//! V           u64
//! B           f32[K * V]  row-major
//! prior       f32[K]
//! active      u8[K]       0 or 1
//! ```
//!
//! Little-endian throughout. Rows are renormalised on load to undo f32 rounding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use super::{EmissionMatrix, InterpretError, Result};

pub const EMISSION_MAGIC: &[u8; 5] = b"EMIS1";

pub fn write_emissions<W: Write>(m: &EmissionMatrix, mut w: W) -> Result<()> {
    let (k, v) = m.b.dim();
    w.write_all(EMISSION_MAGIC)?;
    w.write_all(&(k as u64).to_le_bytes())?;
    w.write_all(&(v as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(4 * (k * v + k) + k);
    for &x in m.b.iter().chain(&m.feature_prior) {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    buf.extend(m.active_mask.iter().map(|&a| a as u8));
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => InterpretError::Format(format!("truncated {what}")),
        _ => InterpretError::Io(e),
    })
}

pub fn read_emissions<R: Read>(mut r: R) -> Result<EmissionMatrix> {
    let mut magic = [0u8; 5];
    read_exact(&mut r, &mut magic, "header")?;
    if &magic != EMISSION_MAGIC {
        return Err(InterpretError::BadMagic(format!("expected EMIS1, found {:?}", String::from_utf8_lossy(&magic))));
    }
    let mut word = [0u8; 8];
    read_exact(&mut r, &mut word, "header")?;
    let k = u64::from_le_bytes(word) as usize;
    read_exact(&mut r, &mut word, "header")?;
    let v = u64::from_le_bytes(word) as usize;
    let cells = k
        .checked_mul(v)
        .filter(|&c| c > 0 && c < (1 << 40))
        .ok_or_else(|| InterpretError::Format(format!("implausible shape {k} x {v}")))?;
    let mut floats = vec![0u8; 4 * (cells + k)];
    read_exact(&mut r, &mut floats, "matrix")?;
    let vals: Vec<f64> = floats
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut mask = vec![0u8; k];
    read_exact(&mut r, &mut mask, "active mask")?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(InterpretError::Format("trailing bytes".into()));
    }
    let mut b = Array2::from_shape_vec((k, v), vals[..cells].to_vec()).expect("sized");
    for (i, mut row) in b.rows_mut().into_iter().enumerate() {
        let s = row.sum();
        if !(s > 0.0) || row.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(InterpretError::Format(format!("row {i} is not a distribution")));
        }
        row /= s;
    }
    let active_mask = mask
        .iter()
        .map(|&m| match m {
            0 => Ok(false),
            1 => Ok(true),
            x => Err(InterpretError::Format(format!("mask byte {x}"))),
        })
        .collect::<Result<_>>()?;
    Ok(EmissionMatrix { b, feature_prior: vals[cells..].to_vec(), active_mask })
}

pub fn save_emissions(m: &EmissionMatrix, path: &Path) -> Result<()> {
    write_emissions(m, BufWriter::new(File::create(path)?))
}

pub fn load_emissions(path: &Path) -> Result<EmissionMatrix> {
    read_emissions(BufReader::new(File::open(path)?))
}

#[derive(Serialize)]
struct WordEntry<'a> {
    word_id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    word: Option<&'a str>,
    prob: f64,
}

#[derive(Serialize)]
struct FeatureEntry<'a> {
    feature: usize,
    prior: f64,
    active: bool,
    top_words: Vec<WordEntry<'a>>,
}

/// Top `n` words of every feature as pretty-printed JSON, with word strings
/// when a vocabulary is supplied.
pub fn emission_summary_json(m: &EmissionMatrix, vocab: Option<&[String]>, n: usize) -> String {
    let features: Vec<FeatureEntry> = (0..m.n_features())
        .map(|k| FeatureEntry {
            feature: k,
            prior: m.feature_prior[k],
            active: m.active_mask[k],
            top_words: m
                .top_words(k, n)
                .into_iter()
                .map(|(w, prob)| WordEntry {
                    word_id: w,
                    word: vocab.and_then(|v| v.get(w as usize)).map(String::as_str),
                    prob,
                })
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&features).expect("serialisable")
}
