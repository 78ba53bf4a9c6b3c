//! Binary checkpoint format.
//!
//! ```text
//! magic        6 bytes  "SAETM1"
//! d_in         u64
//! n_features   u64
//! activation   u8       0 = relu_l1, 1 = topk, 2 = batch_topk
//! k            u32      0 for relu_l1
//! beta         f32      0 unless relu_l1
//! steps        u64      optimiser steps taken
//! threshold    f32      BatchTopK inference threshold, NaN when absent
//! W_enc        f32[d_in * n_features]   row-major, d_in x n_features
//! b_enc        f32[n_features]
//! W_dec        f32[n_features * d_in]   row-major, n_features x d_in
//! b_dec        f32[d_in]
//! ```
//!
//! All integers and floats are little-endian. Parameters live in memory as
//! `f64` and are narrowed on write, so `save . load . save` is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Result, SaeError, SaeModel};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"SAETM1";

pub fn write_checkpoint<W: Write>(model: &SaeModel, mut w: W) -> Result<()> {
    let (code, k, beta) = match model.activation {
        Activation::ReluL1 { beta } => (0u8, 0u32, beta),
        Activation::TopK { k } => (1, k as u32, 0.0),
        Activation::BatchTopK { k } => (2, k as u32, 0.0),
    };
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(model.d_in() as u64).to_le_bytes())?;
    w.write_all(&(model.n_features() as u64).to_le_bytes())?;
    w.write_all(&[code])?;
    w.write_all(&k.to_le_bytes())?;
    w.write_all(&(beta as f32).to_le_bytes())?;
    w.write_all(&model.trained_steps.to_le_bytes())?;
    w.write_all(&(model.batch_threshold.unwrap_or(f64::NAN) as f32).to_le_bytes())?;
    for block in [
        model.w_enc.iter().copied().collect::<Vec<_>>(),
        model.b_enc.to_vec(),
        model.w_dec.iter().copied().collect(),
        model.b_dec.to_vec(),
    ] {
        let mut buf = Vec::with_capacity(block.len() * 4);
        for v in block {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => SaeError::Format("truncated header".into()),
        _ => SaeError::Io(e),
    })?;
    Ok(b)
}

fn read_block<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => SaeError::Format(format!("truncated {what} block")),
        _ => SaeError::Io(e),
    })?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<SaeModel> {
    let magic: [u8; 6] = read_array(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(SaeError::BadMagic(format!("expected SAETM1, found {:?}", String::from_utf8_lossy(&magic))));
    }
    let d_in = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let n_features = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let [code] = read_array::<1, _>(&mut r)?;
    let k = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let beta = f32::from_le_bytes(read_array(&mut r)?) as f64;
    let trained_steps = u64::from_le_bytes(read_array(&mut r)?);
    let threshold = f32::from_le_bytes(read_array(&mut r)?) as f64;
    if d_in == 0 || n_features == 0 {
        return Err(SaeError::Format("zero-sized dimensions".into()));
    }
    let size = d_in
        .checked_mul(n_features)
        .filter(|&s| s < (1 << 40))
        .ok_or_else(|| SaeError::Format("implausible dimensions".into()))?;
    let activation = match code {
        0 => Activation::ReluL1 { beta },
        1 => Activation::TopK { k },
        2 => Activation::BatchTopK { k },
        c => return Err(SaeError::Format(format!("unknown activation code {c}"))),
    };
    if activation.k().is_some_and(|k| k == 0 || k > n_features) {
        return Err(SaeError::Format(format!("k = {k} out of range for {n_features} features")));
    }
    let w_enc = Array2::from_shape_vec((d_in, n_features), read_block(&mut r, size, "W_enc")?).expect("sized");
    let b_enc = Array1::from(read_block(&mut r, n_features, "b_enc")?);
    let w_dec = Array2::from_shape_vec((n_features, d_in), read_block(&mut r, size, "W_dec")?).expect("sized");
    let b_dec = Array1::from(read_block(&mut r, d_in, "b_dec")?);
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(SaeError::Format("trailing bytes after b_dec".into()));
    }
    Ok(SaeModel {
        w_enc,
        b_enc,
        w_dec,
        b_dec,
        activation,
        trained_steps,
        batch_threshold: if threshold.is_nan() { None } else { Some(threshold) },
    })
}

pub fn save_checkpoint(model: &SaeModel, path: &Path) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<SaeModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
