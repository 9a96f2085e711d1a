//! Multi-stage model and its binary file format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "BCDCIDM\0"
//! version    u32      1
//! stages     u32      T
//! filters    u32      K
//! taps       u32      R  (size², size odd)
//! payload    per stage: encode K×R f64, decode K×R f64, thresholds K f64
//! checksum   u64      CRC-64/XZ of the payload bytes
//! ```

use std::path::Path;

use super::CidStageParams;
use crate::error::{Error, Result};
use crate::io::{checksum, Reader};

pub const MODEL_MAGIC: [u8; 8] = *b"BCDCIDM\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingMetadata {
    pub seeds: Vec<u64>,
    /// One loss curve per stage.
    pub loss_curves: Vec<Vec<f64>>,
}

/// Ordered denoiser stages; stage `n` (0-based) is used at outer iteration `n`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CidModel {
    pub stages: Vec<CidStageParams>,
    pub metadata: TrainingMetadata,
}

impl CidModel {
    pub fn new(stages: Vec<CidStageParams>) -> Self {
        Self {
            stages,
            metadata: TrainingMetadata::default(),
        }
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let first = self
            .stages
            .first()
            .ok_or_else(|| Error::invalid("model has no stages"))?;
        let (k, size) = (first.n_filters(), first.size());
        let mut payload = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            s.validate()?;
            if s.n_filters() != k || s.size() != size {
                return Err(Error::invalid(format!(
                    "stage {i} has {}x{}² filters, stage 0 has {k}x{size}²",
                    s.n_filters(),
                    s.size()
                )));
            }
            for v in s.encode.iter().chain(&s.decode).chain(&s.thresholds) {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(payload.len() + 32);
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        for v in [self.stages.len(), k, size * size] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&payload);
        out.extend_from_slice(&checksum(&payload).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(&MODEL_MAGIC)?;
        r.expect_version(MODEL_VERSION)?;
        let t = r.u32()? as usize;
        let k = r.u32()? as usize;
        let taps = r.u32()? as usize;
        let size = (taps as f64).sqrt().round() as usize;
        if size * size != taps || size % 2 == 0 || t == 0 || k == 0 {
            return Err(r.format_error(format!("bad header T={t} K={k} R={taps}")));
        }
        let per_stage = 2 * k * taps + k;
        let payload_start = r.position();
        let mut stages = Vec::with_capacity(t);
        for _ in 0..t {
            let vals = r.f64s(per_stage)?;
            let encode = vals[..k * taps].to_vec();
            let decode = vals[k * taps..2 * k * taps].to_vec();
            let thresholds = vals[2 * k * taps..].to_vec();
            stages.push((encode, decode, thresholds));
        }
        let payload = &bytes[payload_start..r.position()];
        let stored = r.u64()?;
        r.expect_end()?;
        let computed = checksum(payload);
        if stored != computed {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
                stored,
                computed,
            });
        }
        let stages = stages
            .into_iter()
            .map(|(e, d, a)| CidStageParams::new(k, size, e, d, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(stages))
    }
}

pub fn save_model(m: &CidModel, path: &Path) -> Result<()> {
    let bytes = m.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a model. Training metadata is not part of the file and comes back
/// empty.
pub fn load_model(path: &Path) -> Result<CidModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    CidModel::from_bytes(&bytes, path)
}
