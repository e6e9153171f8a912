//! Checkpoint persistence.
//!
//! Wire format: magic `LRCN`, u32 version, length-prefixed UTF-8 config
//! text, u32 tensor count, then per-tensor records (u32 name length,
//! name bytes, u32 rank, dims as u64 little-endian, payload as
//! little-endian 8-byte reals), and a trailing CRC-32 of all prior
//! bytes. Training state scalars travel as `state.*` tensor records;
//! the RNG counter is bit-packed into one payload word.

use crate::autodiff::Tensor;
use crate::config::RunConfig;
use crate::scalar::Scalar;
use std::path::{Path, PathBuf};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"LRCN";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic bytes; not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch; file is corrupted")]
    ChecksumMismatch,
    #[error("file truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("config embedded in checkpoint is invalid: {0}")]
    BadConfig(#[from] crate::config::ConfigError),
    #[error("checkpoint parameters do not match the configuration: {0}")]
    ParamMismatch(String),
}

/// Serialized training state: configuration snapshot, counters, RNG
/// state, and every named tensor (parameters and optimizer moments).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: u64,
    pub adam_step: u64,
    pub rng_state: u64,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

const CRC_TABLE: [u32; 256] = build_crc_table();

const fn build_crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0xEDB8_8320
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc = (crc >> 8) ^ CRC_TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    !crc
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config_text = self.config.to_text();
        out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(config_text.as_bytes());

        let state_records = [
            ("state.epoch".to_string(), Tensor::scalar(self.epoch as f64)),
            (
                "state.adam_step".to_string(),
                Tensor::scalar(self.adam_step as f64),
            ),
            (
                "state.rng_state".to_string(),
                Tensor::scalar(f64::from_bits(self.rng_state)),
            ),
        ];
        let total = state_records.len() + self.tensors.len();
        out.extend_from_slice(&(total as u32).to_le_bytes());
        for (name, tensor) in state_records.iter().chain(self.tensors.iter()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
            for &dim in tensor.shape() {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        std::fs::write(path, out).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if bytes.len() < MAGIC.len() + 8 {
            return Err(CheckpointError::Truncated);
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        if crc32(body) != stored {
            return Err(CheckpointError::ChecksumMismatch);
        }

        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let config_len = r.u32()? as usize;
        let config_text = std::str::from_utf8(r.take(config_len)?)
            .map_err(|e| CheckpointError::Malformed(format!("config text: {e}")))?;
        let config = RunConfig::from_text(config_text)?;

        let count = r.u32()? as usize;
        let mut epoch = 0u64;
        let mut adam_step = 0u64;
        let mut rng_state = 0u64;
        let mut tensors = Vec::with_capacity(count.saturating_sub(3));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| CheckpointError::Malformed(format!("tensor name: {e}")))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            let mut len = 1usize;
            for _ in 0..rank {
                let dim = r.u64()? as usize;
                len = len
                    .checked_mul(dim)
                    .ok_or_else(|| CheckpointError::Malformed("dimension overflow".into()))?;
                shape.push(dim);
            }
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_bits(r.u64()?));
            }
            let tensor = Tensor::new(shape, data);
            match name.as_str() {
                "state.epoch" => epoch = tensor.item() as u64,
                "state.adam_step" => adam_step = tensor.item() as u64,
                "state.rng_state" => rng_state = tensor.item().to_bits(),
                _ => tensors.push((name, tensor)),
            }
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(Self {
            config,
            epoch,
            adam_step,
            rng_state,
            tensors,
        })
    }

    /// The `param.*` tensors converted to the working precision, in
    /// checkpoint order.
    pub fn params<S: Scalar>(&self) -> Vec<(String, Tensor<S>)> {
        self.tensors
            .iter()
            .filter(|(name, _)| name.starts_with("param."))
            .map(|(name, t)| {
                (
                    name["param.".len()..].to_string(),
                    Tensor::from_f64s(t.shape().to_vec(), t.data()),
                )
            })
            .collect()
    }

    /// Named tensor lookup (optimizer moments, etc.).
    pub fn tensor(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = SplitMix64::new(3);
        let tensors = vec![
            (
                "param.a.w".to_string(),
                Tensor::new(vec![2, 3], (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()),
            ),
            (
                "adam.m.a.w".to_string(),
                Tensor::new(vec![2, 3], (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()),
            ),
        ];
        Checkpoint {
            config: RunConfig::default(),
            epoch: 17,
            adam_step: 204,
            rng_state: 0xDEAD_BEEF_CAFE_F00D,
            tensors,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = sample_checkpoint();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        ckpt.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        assert_eq!(loaded.epoch, ckpt.epoch);
        assert_eq!(loaded.adam_step, ckpt.adam_step);
        assert_eq!(loaded.rng_state, ckpt.rng_state);
        assert_eq!(loaded.config, ckpt.config);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        sample_checkpoint().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        sample_checkpoint().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::ChecksumMismatch)
        ));
    }

    #[test]
    fn truncated_file_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        sample_checkpoint().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..10]).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(
            err,
            CheckpointError::Truncated | CheckpointError::ChecksumMismatch
        ));
    }

    #[test]
    fn crc_matches_known_vector() {
        // Standard IEEE CRC-32 check value.
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }
}
