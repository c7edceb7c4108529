//! Feature cache: magic `MSML`, `u16` version, `u32` bag count, then per bag
//! the slide id (`u16` length + UTF-8), a label byte (0 = FN, 1 = PC), `u32` nP
//! and three `nP × 512` row-major `f32` matrices in scale order 1, 1/2, 1/4.
//! All integers and floats are little-endian.

use std::path::Path;

use super::FeatureBag;
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::types::{FeatureMatrix, Label, FEATURE_DIM};

pub const CACHE_MAGIC: &[u8; 4] = b"MSML";
pub const CACHE_VERSION: u16 = 1;

pub fn encode_cache(bags: &[FeatureBag]) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(CACHE_MAGIC);
    w.u16(CACHE_VERSION);
    w.u32(u32::try_from(bags.len()).map_err(|_| Error::Size("too many bags".into()))?);
    for bag in bags {
        let id = bag.slide_id.as_bytes();
        w.u16(u16::try_from(id.len()).map_err(|_| Error::Size(format!("slide id `{}` too long", bag.slide_id)))?);
        w.bytes(id);
        w.u8(bag.label.to_byte());
        w.u32(bag.len() as u32);
        for m in bag.scales() {
            w.f32s(m.as_slice());
        }
    }
    Ok(w.into_inner())
}

/// Parses a whole cache; any defect fails the read without returning partial bags.
pub fn decode_cache(bytes: &[u8]) -> Result<Vec<FeatureBag>> {
    let mut r = ByteReader::new(bytes);
    r.magic(CACHE_MAGIC)?;
    r.version(CACHE_VERSION)?;
    let count = r.u32("bag count")? as usize;
    let mut bags = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let id = r.string("slide id")?;
        let at = r.offset();
        let label = Label::from_byte(r.u8("label")?).ok_or_else(|| Error::Format {
            offset: at,
            message: "label byte must be 0 or 1".into(),
        })?;
        let rows = r.u32("patch count")? as usize;
        let mut mats = Vec::with_capacity(3);
        for _ in 0..3 {
            let data = r.finite_f32s(rows * FEATURE_DIM, "feature matrix")?;
            mats.push(FeatureMatrix::new(FEATURE_DIM, data)?);
        }
        let mats: [FeatureMatrix; 3] = mats.try_into().unwrap();
        bags.push(FeatureBag::new(id, label, mats)?);
    }
    r.finish()?;
    Ok(bags)
}

pub fn write_cache(path: &Path, bags: &[FeatureBag]) -> Result<()> {
    let bytes = encode_cache(bags)?;
    std::fs::write(path, bytes).map_err(|e| Error::from(e).in_file(path))
}

pub fn read_cache(path: &Path) -> Result<Vec<FeatureBag>> {
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_cache(&bytes).map_err(|e| e.in_file(path))
}
