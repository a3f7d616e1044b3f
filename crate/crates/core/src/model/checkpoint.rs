//! `AAGM` checkpoints: `"AAGM"`, `u16` version, `u32`-prefixed config JSON,
//! `u32` parameter count, then per parameter a `u16`-prefixed name, `u8`
//! rank, `u32` dims and `f32` values. Little-endian throughout.

use std::fs;
use std::path::Path;

use super::{AagModel, ModelConfig};
use crate::data::bytes::{put_f32s, Reader};
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const AAGM_MAGIC: &[u8; 4] = b"AAGM";
pub const AAGM_VERSION: u16 = 1;

pub fn encode_checkpoint<T: Scalar>(model: &AagModel<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(AAGM_MAGIC);
    out.extend_from_slice(&AAGM_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.config)?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for p in model.store.iter() {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Data(format!("parameter name too long: {}", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let vals: Vec<f32> = p.value.data().iter().map(|v| v.as_f64() as f32).collect();
        put_f32s(&mut out, &vals);
    }
    Ok(out)
}

/// Rebuilds the architecture from the stored config, then loads values,
/// checking every name and shape against the rebuilt registry.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<AagModel<T>> {
    let mut rd = Reader::new(bytes);
    if rd.take(4, "magic")? != AAGM_MAGIC {
        return Err(Error::format(0, "not an AAGM checkpoint"));
    }
    let version = rd.u16("version")?;
    if version != AAGM_VERSION {
        return Err(Error::format(4, format!("unsupported AAGM version {version}")));
    }
    let cfg_len = rd.u32("config length")? as usize;
    let cfg_off = rd.offset();
    let config: ModelConfig = serde_json::from_slice(rd.take(cfg_len, "config")?)
        .map_err(|e| Error::format(cfg_off, format!("config JSON: {e}")))?;
    let mut model = AagModel::<T>::new(config)?;
    let n = rd.u32("parameter count")? as usize;
    if n != model.store.len() {
        return Err(Error::format(
            rd.offset(),
            format!(
                "checkpoint has {n} parameters, architecture has {}",
                model.store.len()
            ),
        ));
    }
    for id in model.store.ids().collect::<Vec<_>>() {
        let start = rd.offset();
        let len = rd.u16("name length")? as usize;
        let name = String::from_utf8_lossy(rd.take(len, "name")?).into_owned();
        let rank = rd.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| rd.u32("dim").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let p = model.store.get_mut(id);
        if name != p.name || shape != p.value.shape() {
            return Err(Error::format(
                start,
                format!(
                    "parameter {name} {shape:?} does not match {} {:?}",
                    p.name,
                    p.value.shape()
                ),
            ));
        }
        let count = shape.iter().product();
        let vals = rd.f32s(count, "parameter values")?;
        p.value = Tensor::new(shape, vals.iter().map(|&v| T::of(v as f64)).collect())?;
    }
    if rd.remaining() != 0 {
        return Err(Error::format(rd.offset(), "trailing bytes after parameters"));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &AagModel<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<AagModel<T>> {
    decode_checkpoint(&fs::read(path)?)
}
