//! Little-endian container helpers shared by the dataset and checkpoint files.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file beside `path`, then renames it into
/// place, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Default)]
pub struct Writer(pub Vec<u8>);

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
}

pub struct Reader<'a> {
    path: PathBuf,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(path: &Path, buf: &'a [u8]) -> Self {
        Self {
            path: path.to_path_buf(),
            buf,
            pos: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                path: self.path.clone(),
                section,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, section: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, section)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self, section: &'static str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    pub fn u16(&mut self, section: &'static str) -> Result<u16> {
        self.array(section).map(u16::from_le_bytes)
    }

    pub fn u32(&mut self, section: &'static str) -> Result<u32> {
        self.array(section).map(u32::from_le_bytes)
    }

    pub fn f32(&mut self, section: &'static str) -> Result<f32> {
        self.array(section).map(f32::from_le_bytes)
    }

    pub fn f64(&mut self, section: &'static str) -> Result<f64> {
        self.array(section).map(f64::from_le_bytes)
    }

    /// Checks the 4-byte magic and the u16 version that follows it.
    pub fn header(&mut self, magic: &'static str, version: u16) -> Result<u16> {
        let found = self.take(4, "magic").map_err(|_| Error::BadMagic {
            path: self.path.clone(),
            expected: magic,
        })?;
        if found != magic.as_bytes() {
            return Err(Error::BadMagic {
                path: self.path.clone(),
                expected: magic,
            });
        }
        let v = self.u16("version")?;
        if v != version {
            return Err(Error::UnsupportedVersion {
                path: self.path.clone(),
                found: v,
                expected: version,
            });
        }
        self.u16("flags")
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Data(format!(
                "{}: {} trailing bytes after payload",
                self.path.display(),
                self.remaining()
            )));
        }
        Ok(())
    }
}
