//! `DYNF` scene container.
//!
//! Layout (little-endian): magic `DYNF`, u16 version, u16 flags, u32 H, W,
//! bands, lidar channels, classes; then f32 HSI (band, row, col), f32 LiDAR,
//! u16 labels and u8 split codes, both row-major.

use std::path::Path;

use super::cube::{SceneCube, Split};
use crate::binio::{atomic_write, read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DATASET_MAGIC: &str = "DYNF";
pub const DATASET_VERSION: u16 = 1;

fn dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Data(format!("{what} {v} does not fit in u32")))
}

pub fn encode_dataset(cube: &SceneCube) -> Result<Vec<u8>> {
    cube.validate()?;
    let mut w = Writer::default();
    w.bytes(DATASET_MAGIC.as_bytes());
    w.u16(DATASET_VERSION);
    w.u16(0);
    w.u32(dim(cube.height(), "height")?);
    w.u32(dim(cube.width(), "width")?);
    w.u32(dim(cube.bands(), "bands")?);
    w.u32(dim(cube.lidar_channels(), "lidar channels")?);
    w.u32(dim(cube.classes, "classes")?);
    for &v in cube.hsi.data().iter().chain(cube.lidar.data()) {
        w.f32(v as f32);
    }
    for &l in &cube.labels {
        w.u16(l);
    }
    for &s in &cube.split {
        w.u8(s as u8);
    }
    Ok(w.0)
}

pub fn decode_dataset(path: &Path, bytes: &[u8]) -> Result<SceneCube> {
    let mut r = Reader::new(path, bytes);
    r.header(DATASET_MAGIC, DATASET_VERSION)?;
    let h = r.u32("header")? as usize;
    let w = r.u32("header")? as usize;
    let bands = r.u32("header")? as usize;
    let lidar_channels = r.u32("header")? as usize;
    let classes = r.u32("header")? as usize;
    if h == 0 || w == 0 || bands == 0 || lidar_channels == 0 {
        return Err(Error::Data(format!(
            "{}: zero extent in header",
            path.display()
        )));
    }
    let n = h * w;
    // Reject absurd headers before allocating.
    let need = n * (4 * (bands + lidar_channels) + 2 + 1);
    if r.remaining() < need {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            section: "payload",
        });
    }
    let mut read_f32 = |count: usize, section| -> Result<Vec<f64>> {
        (0..count).map(|_| r.f32(section).map(f64::from)).collect()
    };
    let hsi = read_f32(bands * n, "hsi payload")?;
    let lidar = read_f32(lidar_channels * n, "lidar payload")?;
    let labels = (0..n)
        .map(|_| r.u16("labels"))
        .collect::<Result<Vec<_>>>()?;
    let split = (0..n)
        .map(|_| {
            let b = r.u8("split mask")?;
            Split::from_byte(b)
                .ok_or_else(|| Error::Data(format!("{}: invalid split code {b}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    SceneCube::new(
        Tensor::from_parts(vec![bands, h, w], hsi),
        Tensor::from_parts(vec![lidar_channels, h, w], lidar),
        labels,
        split,
        classes,
    )
}

/// Values are stored as f32; cubes whose samples are already f32-representable
/// round-trip exactly.
pub fn save_dataset(cube: &SceneCube, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode_dataset(cube)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<SceneCube> {
    let path = path.as_ref();
    decode_dataset(path, &read_file(path)?)
}
