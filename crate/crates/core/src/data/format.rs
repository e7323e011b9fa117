//! `TCFT` feature files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `TCFT` |
//! | 4     | version (u32) |
//! | 4 x 6 | samples, steps T, spatial L, channels C, classes K, frames per timestep (u32) |
//! | 8     | generator seed (u64) |
//! | 8     | generator spec hash (u64) |
//!
//! followed per sample by a `ceil(K/8)`-byte label bitmap (class `k` is bit
//! `k % 8` of byte `k / 8`) and `T·L·L·C` f32 values in row-major order.

use std::fs;
use std::path::Path;

use super::{FeatureDataset, FeatureDims, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TCFT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 48;

pub fn encode_features(dataset: &FeatureDataset) -> Vec<u8> {
    let label_bytes = dataset.classes.div_ceil(8);
    let mut out =
        Vec::with_capacity(HEADER_LEN + dataset.len() * (label_bytes + 4 * dataset.dims.len()));
    out.extend_from_slice(MAGIC);
    let d = dataset.dims;
    for v in [
        FORMAT_VERSION,
        dataset.len() as u32,
        d.steps as u32,
        d.spatial as u32,
        d.channels as u32,
        dataset.classes as u32,
        dataset.frames_per_timestep as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&dataset.seed.to_le_bytes());
    out.extend_from_slice(&dataset.spec_hash.to_le_bytes());
    for s in &dataset.samples {
        let mut bitmap = vec![0u8; label_bytes];
        for (k, &l) in s.labels.iter().enumerate() {
            if l == 1 {
                bitmap[k / 8] |= 1 << (k % 8);
            }
        }
        out.extend_from_slice(&bitmap);
        for v in s.features.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_features(path: &Path, dataset: &FeatureDataset) -> Result<()> {
    fs::write(path, encode_features(dataset)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        detail: detail.into(),
    }
}

pub(crate) fn decode_features(bytes: &[u8]) -> Result<FeatureDataset> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected TCFT"));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let n = u32_at(8) as usize;
    let dims = FeatureDims {
        steps: u32_at(12) as usize,
        spatial: u32_at(16) as usize,
        channels: u32_at(20) as usize,
    };
    let classes = u32_at(24) as usize;
    if dims.steps == 0 || dims.spatial == 0 || dims.channels == 0 || classes == 0 {
        return Err(format_err(12, "zero dimension in header"));
    }
    let mut dataset = FeatureDataset::new(dims, classes);
    dataset.frames_per_timestep = u32_at(28) as usize;
    dataset.seed = u64_at(32);
    dataset.spec_hash = u64_at(40);

    let label_bytes = classes.div_ceil(8);
    let feat_len = dims.len();
    let record = label_bytes + 4 * feat_len;
    let mut at = HEADER_LEN;
    for i in 0..n {
        if at + record > bytes.len() {
            return Err(format_err(
                bytes.len(),
                format!("truncated at sample {i} of {n}"),
            ));
        }
        let bitmap = &bytes[at..at + label_bytes];
        let labels = (0..classes)
            .map(|k| (bitmap[k / 8] >> (k % 8)) & 1)
            .collect();
        at += label_bytes;
        let values = bytes[at..at + 4 * feat_len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        at += 4 * feat_len;
        dataset.samples.push(Sample {
            features: Tensor::new(&dims.shape(), values)?,
            labels,
        });
    }
    if at != bytes.len() {
        return Err(format_err(at, "trailing bytes after last sample"));
    }
    Ok(dataset)
}
