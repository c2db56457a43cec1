//! `DYNM` model container.
//!
//! Layout (little-endian): magic `DYNM`, u16 version, u16 flags, u32 config
//! length, canonical JSON config, u32 tensor count, then per tensor u32 name
//! length, UTF-8 name, u32 rank, u32 extents and f64 values.

use std::path::Path;

use super::config::ModelConfig;
use super::network::Dcmnet;
use crate::binio::{atomic_write, read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &str = "DYNM";
pub const CHECKPOINT_VERSION: u16 = 1;

fn len32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} length {n} exceeds u32")))
}

pub fn encode_checkpoint(model: &Dcmnet) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&model.config)?;
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC.as_bytes());
    w.u16(CHECKPOINT_VERSION);
    w.u16(0);
    w.u32(len32(json.len(), "config")?);
    w.bytes(&json);
    w.u32(len32(model.store.len(), "tensor table")?);
    for (name, t) in model.store.iter() {
        w.u32(len32(name.len(), "name")?);
        w.bytes(name.as_bytes());
        w.u32(len32(t.rank(), "rank")?);
        for &e in t.shape() {
            w.u32(len32(e, "extent")?);
        }
        for &v in t.data() {
            w.f64(v);
        }
    }
    Ok(w.0)
}

/// Rebuilds the architecture from the stored config, then overwrites every
/// parameter. The tensor table must name each parameter exactly once.
pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Dcmnet> {
    let mut r = Reader::new(path, bytes);
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let json_len = r.u32("config length")? as usize;
    let json = r.take(json_len, "config")?;
    let config: ModelConfig = serde_json::from_slice(json)
        .map_err(|e| Error::Checkpoint(format!("{}: invalid config: {e}", path.display())))?;
    let mut model = Dcmnet::new(config, 0)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;

    let count = r.u32("tensor count")? as usize;
    if count != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {count} tensors stored, architecture has {}",
            path.display(),
            model.store.len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let name_len = r.u32("tensor name")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| {
                Error::Checkpoint(format!("{}: tensor name is not UTF-8", path.display()))
            })?
            .to_owned();
        let rank = r.u32("tensor rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("tensor extents").map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if r.remaining() < n * 8 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                section: "tensor values",
            });
        }
        let data = (0..n)
            .map(|_| r.f64("tensor values"))
            .collect::<Result<Vec<_>>>()?;
        let id = model.store.id(&name).ok_or_else(|| {
            Error::Checkpoint(format!("{}: unknown parameter {name}", path.display()))
        })?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::Checkpoint(format!(
                "{}: parameter {name} stored twice",
                path.display()
            )));
        }
        let value = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("{}: {name}: {e}", path.display())))?;
        model
            .store
            .assign(&name, &value)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    }
    r.finish()?;
    Ok(model)
}

pub fn save_checkpoint(model: &Dcmnet, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Dcmnet> {
    let path = path.as_ref();
    decode_checkpoint(path, &read_file(path)?)
}
