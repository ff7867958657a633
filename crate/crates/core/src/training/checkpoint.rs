//! Versioned binary checkpoint container.
//!
//! Layout (little-endian): magic `MSGAF`, format version u32, 32-byte
//! config hash, run metadata (seed, best epoch, validation loss, target
//! scale, percentile), normalizer statistics, then per-tensor records of
//! `name_len + name + rank + dims + f64 values`. Round-trips are bitwise.

use std::fs;
use std::path::Path;

use crate::encoding::Normalizer;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::Matrix;

const MAGIC: &[u8; 5] = b"MSGAF";
const FORMAT_VERSION: u32 = 1;

/// Everything needed to restore a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub seed: u64,
    pub best_epoch: u32,
    pub val_loss: f64,
    pub target_scale: f64,
    pub percentile: u8,
    pub normalizer: Normalizer,
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.best_epoch.to_le_bytes());
        out.extend_from_slice(&self.val_loss.to_le_bytes());
        out.extend_from_slice(&self.target_scale.to_le_bytes());
        out.push(self.percentile);
        out.extend_from_slice(&(self.normalizer.mean.len() as u32).to_le_bytes());
        for v in &self.normalizer.mean {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.normalizer.std {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, m) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(5)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let seed = r.u64()?;
        let best_epoch = r.u32()?;
        let val_loss = r.f64()?;
        let target_scale = r.f64()?;
        let percentile = r.take(1)?[0];
        let n_cols = r.u32()? as usize;
        let mean = (0..n_cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let std = (0..n_cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|e| Error::Checkpoint(format!("tensor name: {e}")))?;
            let rank = r.u32()?;
            if rank != 2 {
                return Err(Error::Checkpoint(format!("tensor {name}: rank {rank}")));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(r.f64()?);
            }
            let m = Matrix::from_vec(rows, cols, data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            tensors.push((name, m));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config_hash,
            seed,
            best_epoch,
            val_loss,
            target_scale,
            percentile,
            normalizer: Normalizer { mean, std },
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Restores model parameters, verifying the tensor name set and shapes
    /// against the given architecture.
    pub fn restore_params(&self, config: &ModelConfig) -> Result<ModelParams> {
        let mut params = ModelParams::init(config, 0)?;
        params.load_tensors(&self.tensors)?;
        Ok(params)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
