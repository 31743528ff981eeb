//! The `QFCK` checkpoint file.
//!
//! Little-endian throughout:
//!
//! ```text
//! "QFCK"  u32 version
//! u32 len + UTF-8 shape block (TOML: model shape, model config, optimizer)
//! u32 tensor count
//! per tensor: u16 len + UTF-8 name  u8 rank  rank × u32 dims  f64 payload
//! u32 CRC32 of every preceding byte
//! ```
//!
//! Parameters are stored under their store names, momentum buffers under
//! `velocity/<name>`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::binio::{checked_u16, checked_u32, checked_u8, Reader, Writer};
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, ModelConfig, ModelShape};
use crate::trainer::OptimizerState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const VELOCITY_PREFIX: &str = "velocity/";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeBlock {
    shape: ModelShape,
    model: ModelConfig,
    optimizer: OptimizerBlock,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerBlock {
    step: u64,
    momentum: f64,
    weight_decay: f64,
}

fn tensor<W: Write>(w: &mut Writer<W>, name: &str, a: &Array) -> Result<()> {
    w.u16(checked_u16(name.len(), "tensor name")?)?;
    w.bytes(name.as_bytes())?;
    w.u8(checked_u8(a.shape().len(), "tensor rank")?)?;
    for &d in a.shape() {
        w.u32(checked_u32(d, "tensor dimension")?)?;
    }
    for &v in a.data() {
        w.f64(v)?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(out: W, model: &FusionModel, state: &OptimizerState) -> Result<()> {
    let block = ShapeBlock {
        shape: model.layout.shape.clone(),
        model: model.layout.config.clone(),
        optimizer: OptimizerBlock {
            step: state.step,
            momentum: state.momentum,
            weight_decay: state.weight_decay,
        },
    };
    let text = toml::to_string(&block).map_err(|e| Error::Format(e.to_string()))?;
    let mut w = Writer::new(Vec::new());
    w.bytes(CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    w.text(&text)?;
    w.u32(checked_u32(2 * model.store.len(), "tensor count")?)?;
    for (_, p) in model.store.iter() {
        tensor(&mut w, &p.name, &p.value)?;
    }
    for ((_, p), v) in model.store.iter().zip(&state.velocity) {
        tensor(&mut w, &format!("{VELOCITY_PREFIX}{}", p.name), v)?;
    }
    let mut bytes = w.into_inner();
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    let mut out = out;
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(FusionModel, OptimizerState)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a QFCK checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported QFCK version {version}")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Crc { stored, computed });
    }

    let mut r = Reader::new(&body[8..]);
    let block: ShapeBlock =
        toml::from_str(&r.text()?).map_err(|e| Error::Format(format!("checkpoint shape block: {e}")))?;
    let mut model = FusionModel::new(block.shape, block.model, 0)?;
    let mut state = OptimizerState::new(&model.store, block.optimizer.momentum, block.optimizer.weight_decay);
    state.step = block.optimizer.step;

    let n = r.u32()? as usize;
    let mut seen = vec![false; 2 * model.store.len()];
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.vec(len)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let value = Array::new(shape, data)?;

        let (base, velocity) = match name.strip_prefix(VELOCITY_PREFIX) {
            Some(b) => (b, true),
            None => (name.as_str(), false),
        };
        let id = model
            .store
            .id(base)
            .ok_or_else(|| Error::Format(format!("unknown tensor {name}")))?;
        let slot = id.index() + if velocity { model.store.len() } else { 0 };
        if std::mem::replace(&mut seen[slot], true) {
            return Err(Error::Format(format!("duplicate tensor {name}")));
        }
        if velocity {
            if !value.same_shape(&state.velocity[id.index()]) {
                return Err(Error::Format(format!("tensor {name} has the wrong shape")));
            }
            state.velocity[id.index()] = value;
        } else {
            model.store.set(id, value).map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    r.finish()?;
    if let Some(i) = seen.iter().position(|&s| !s) {
        let p = model.store.get(crate::autodiff::ParamId(i % model.store.len()));
        return Err(Error::Format(format!("checkpoint is missing tensor {}", p.name)));
    }
    Ok((model, state))
}

/// Write through a temporary file and rename, so an interrupted save never
/// replaces a good checkpoint with a partial one.
pub fn save(path: &Path, model: &FusionModel, state: &OptimizerState) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let f = std::fs::File::create(&tmp)?;
        write_checkpoint(std::io::BufWriter::new(f), model, state)?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(FusionModel, OptimizerState)> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::tiny_model;

    fn bytes_of(model: &FusionModel, state: &OptimizerState) -> Vec<u8> {
        let mut b = Vec::new();
        write_checkpoint(&mut b, model, state).unwrap();
        b
    }

    #[test]
    fn round_trip_is_exact() {
        let model = tiny_model(3, 4).unwrap();
        let mut state = OptimizerState::new(&model.store, 0.9, 5e-4);
        state.step = 17;
        state.velocity[2].data_mut()[0] = -0.25;
        let b = bytes_of(&model, &state);
        let (m2, s2) = read_checkpoint(&b[..]).unwrap();
        assert_eq!(s2, state);
        assert_eq!(m2.layout, model.layout);
        assert_eq!(bytes_of(&m2, &s2), b);
    }

    #[test]
    fn every_flipped_byte_is_caught() {
        let model = tiny_model(2, 1).unwrap();
        let state = OptimizerState::new(&model.store, 0.9, 5e-4);
        let b = bytes_of(&model, &state);
        for i in (0..b.len()).step_by(7) {
            let mut bad = b.clone();
            bad[i] ^= 0x10;
            assert!(read_checkpoint(&bad[..]).is_err(), "flip at byte {i} went unnoticed");
        }
        let mut bad = b.clone();
        let mid = b.len() / 2;
        bad[mid] ^= 1;
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Crc { .. })));
    }

    #[test]
    fn rejects_magic_version_and_truncation() {
        let model = tiny_model(2, 1).unwrap();
        let state = OptimizerState::new(&model.store, 0.9, 5e-4);
        let b = bytes_of(&model, &state);
        let mut bad = b.clone();
        bad[1] = b'X';
        assert!(read_checkpoint(&bad[..]).unwrap_err().to_string().contains("magic"));
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(read_checkpoint(&bad[..]).unwrap_err().to_string().contains("version"));
        assert!(read_checkpoint(&b[..b.len() - 1]).is_err());
    }
}
