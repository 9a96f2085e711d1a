//! On-disk formats: images, measurements, region masks, checksums.
//!
//! Image file (little-endian):
//!
//! ```text
//! magic       8 bytes  "BCDIMG\0\0"
//! version     u32      1
//! nx, ny      u32, u32
//! value type  u32      1 = f64
//! payload     nx·ny f64, row-major
//! checksum    u64      CRC-64/XZ of the payload bytes
//! ```
//!
//! Measurement file:
//!
//! ```text
//! magic       8 bytes  "BCDMEAS\0"
//! version     u32      1
//! n_angles    u32
//! n_bins      u32
//! payload     counts as n u64, then mean background as n f64
//! checksum    u64      CRC-64/XZ of the payload bytes
//! ```
//!
//! Region masks live in a directory holding one 0/1 image per mask
//! (`fov.img`, `background.img`, `cold.img`, `lesion.img`, `hot_<i>.img`)
//! plus `regions.toml` with the true hot ratio.

use std::fs;
use std::path::{Path, PathBuf};

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::RegionSet;
use crate::phantom::Measurement;

pub const IMAGE_MAGIC: [u8; 8] = *b"BCDIMG\0\0";
pub const IMAGE_VERSION: u32 = 1;
pub const VALUE_TYPE_F64: u32 = 1;
pub const MEASUREMENT_MAGIC: [u8; 8] = *b"BCDMEAS\0";
pub const MEASUREMENT_VERSION: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn checksum(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

/// Cursor over a byte buffer that reports truncation as a format error.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn format_error(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.format_error(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(self.format_error("bad magic bytes"));
        }
        Ok(())
    }

    pub(crate) fn expect_version(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(Error::Version {
                path: self.path.to_path_buf(),
                found,
                expected,
            });
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.format_error("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.format_error("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.format_error(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }

    fn verify(&self, payload: &[u8], stored: u64) -> Result<()> {
        let computed = checksum(payload);
        if computed != stored {
            return Err(Error::Checksum {
                path: self.path.to_path_buf(),
                stored,
                computed,
            });
        }
        Ok(())
    }
}

pub fn image_to_bytes(x: &Image) -> Vec<u8> {
    let mut payload = Vec::with_capacity(x.len() * 8);
    for v in x.as_slice() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut out = Vec::with_capacity(payload.len() + 32);
    out.extend_from_slice(&IMAGE_MAGIC);
    out.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
    out.extend_from_slice(&(x.nx() as u32).to_le_bytes());
    out.extend_from_slice(&(x.ny() as u32).to_le_bytes());
    out.extend_from_slice(&VALUE_TYPE_F64.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum(&payload).to_le_bytes());
    out
}

pub fn image_from_bytes(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut r = Reader::new(bytes, path);
    r.expect_magic(&IMAGE_MAGIC)?;
    r.expect_version(IMAGE_VERSION)?;
    let nx = r.u32()? as usize;
    let ny = r.u32()? as usize;
    let vt = r.u32()?;
    if vt != VALUE_TYPE_F64 {
        return Err(r.format_error(format!("unsupported value type {vt}")));
    }
    let start = r.position();
    let values = r.f64s(nx * ny)?;
    let end = r.position();
    let stored = r.u64()?;
    r.expect_end()?;
    r.verify(&bytes[start..end], stored)?;
    Image::new(nx, ny, values)
}

pub fn write_image(x: &Image, path: &Path) -> Result<()> {
    write_bytes(path, &image_to_bytes(x))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    image_from_bytes(&bytes, path)
}

pub fn measurement_to_bytes(m: &Measurement) -> Vec<u8> {
    let (na, nb) = m.shape();
    let mut payload = Vec::with_capacity(m.len() * 16);
    for v in &m.y {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    for v in &m.r_bar {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut out = Vec::with_capacity(payload.len() + 28);
    out.extend_from_slice(&MEASUREMENT_MAGIC);
    out.extend_from_slice(&MEASUREMENT_VERSION.to_le_bytes());
    out.extend_from_slice(&(na as u32).to_le_bytes());
    out.extend_from_slice(&(nb as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum(&payload).to_le_bytes());
    out
}

pub fn measurement_from_bytes(bytes: &[u8], path: &Path) -> Result<Measurement> {
    let mut r = Reader::new(bytes, path);
    r.expect_magic(&MEASUREMENT_MAGIC)?;
    r.expect_version(MEASUREMENT_VERSION)?;
    let na = r.u32()? as usize;
    let nb = r.u32()? as usize;
    let start = r.position();
    let y = r.u64s(na * nb)?;
    let r_bar = r.f64s(na * nb)?;
    let end = r.position();
    let stored = r.u64()?;
    r.expect_end()?;
    r.verify(&bytes[start..end], stored)?;
    Measurement::new(na, nb, y, r_bar)
}

pub fn write_measurement(m: &Measurement, path: &Path) -> Result<()> {
    write_bytes(path, &measurement_to_bytes(m))
}

pub fn read_measurement(path: &Path) -> Result<Measurement> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    measurement_from_bytes(&bytes, path)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
struct RegionsMeta {
    true_ratio: Option<f64>,
    n_hot: usize,
}

fn mask_image(mask: &[usize], nx: usize, ny: usize) -> Image {
    let mut img = Image::zeros(nx, ny);
    for &j in mask {
        img.as_mut_slice()[j] = 1.0;
    }
    img
}

fn image_mask(img: &Image) -> Vec<usize> {
    img.as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.5)
        .map(|(j, _)| j)
        .collect()
}

/// Writes every mask of the region set and returns the files written.
pub fn write_regions(regions: &RegionSet, nx: usize, ny: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut put = |name: String, mask: &[usize]| -> Result<()> {
        let p = dir.join(name);
        write_image(&mask_image(mask, nx, ny), &p)?;
        files.push(p);
        Ok(())
    };
    put("fov.img".into(), &regions.fov)?;
    put("background.img".into(), &regions.background)?;
    if !regions.cold.is_empty() {
        put("cold.img".into(), &regions.cold)?;
    }
    if !regions.lesion.is_empty() {
        put("lesion.img".into(), &regions.lesion)?;
    }
    for (i, m) in regions.hot.iter().enumerate() {
        put(format!("hot_{i}.img"), m)?;
    }
    let meta = RegionsMeta {
        true_ratio: regions.true_ratio,
        n_hot: regions.hot.len(),
    };
    let p = dir.join("regions.toml");
    write_text(&p, &toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?)?;
    files.push(p);
    Ok(files)
}

/// Reads a mask directory. Masks whose file is absent come back empty; the
/// field of view is required.
pub fn read_regions(dir: &Path) -> Result<RegionSet> {
    let load = |name: &str| -> Result<Option<Vec<usize>>> {
        let p = dir.join(name);
        if p.exists() {
            Ok(Some(image_mask(&read_image(&p)?)))
        } else {
            Ok(None)
        }
    };
    let fov = load("fov.img")?
        .ok_or_else(|| Error::invalid(format!("{} has no fov.img", dir.display())))?;
    let meta_path = dir.join("regions.toml");
    let meta: Option<RegionsMeta> = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        Some(toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", meta_path.display())))?)
    } else {
        None
    };
    let n_hot = meta.as_ref().map_or(0, |m| m.n_hot);
    let hot = (0..n_hot)
        .map(|i| load(&format!("hot_{i}.img")).map(Option::unwrap_or_default))
        .collect::<Result<Vec<_>>>()?;
    Ok(RegionSet {
        fov,
        background: load("background.img")?.unwrap_or_default(),
        cold: load("cold.img")?.unwrap_or_default(),
        hot,
        lesion: load("lesion.img")?.unwrap_or_default(),
        true_ratio: meta.and_then(|m| m.true_ratio),
    })
}

/// Formats an optional number for CSV output (empty when absent).
pub(crate) fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}
