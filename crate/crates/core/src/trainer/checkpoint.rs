//! Binary checkpoint: `"MSAS"`, a little-endian `u32` version and `u64` header
//! length, a JSON header, zero padding to a 64-byte boundary, then every
//! tensor as little-endian `f32`, each starting on a 64-byte boundary.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MSAS";
pub const CHECKPOINT_VERSION: u32 = 1;
const ALIGN: usize = 64;
const PREAMBLE: usize = 4 + 4 + 8;

/// SHA-256 (hex) of the canonical JSON form of `config` (object keys sorted).
pub fn config_hash<C: Serialize + ?Sized>(config: &C) -> Result<String> {
    let canonical = serde_json::to_vec(&serde_json::to_value(config)?)?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    config: serde_json::Value,
    config_hash: String,
    metrics: serde_json::Value,
    epoch: usize,
    vocab: Vec<String>,
}

/// Model weights with the configuration and vocabulary that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub metrics: serde_json::Value,
    pub epoch: usize,
    pub vocab: Vec<String>,
}

fn pad_to(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

impl Checkpoint {
    /// Builds a checkpoint, hashing `config`.
    pub fn new<C: Serialize + ?Sized>(
        params: ParamStore,
        config: &C,
        metrics: serde_json::Value,
        epoch: usize,
        vocab: Vec<String>,
    ) -> Result<Self> {
        Ok(Checkpoint {
            params,
            config: serde_json::to_value(config)?,
            config_hash: config_hash(config)?,
            metrics,
            epoch,
            vocab,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0usize;
        for (_, name, t) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                dtype: "f32".into(),
                shape: t.shape().to_vec(),
                offset: offset as u64,
                trainable: t.requires_grad,
            });
            offset = pad_to(offset + 4 * t.numel());
        }
        let header = serde_json::to_vec(&Header {
            tensors,
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            metrics: self.metrics.clone(),
            epoch: self.epoch,
            vocab: self.vocab.clone(),
        })?;
        let payload_start = pad_to(PREAMBLE + header.len());
        let mut out = Vec::with_capacity(payload_start + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.resize(payload_start, 0);
        for (_, _, t) in self.params.iter() {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.resize(payload_start + pad_to(out.len() - payload_start), 0);
        }
        Ok(out)
    }

    /// Parses a checkpoint and checks that its stored hash matches its config.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE || &bytes[..4] != MAGIC {
            return Err(corrupt("missing MSAS magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().map_err(|_| corrupt("truncated version"))?);
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().map_err(|_| corrupt("truncated header length"))?);
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(PREAMBLE))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt("header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])?;
        let payload = bytes.get(pad_to(header_end)..).unwrap_or(&[]);

        let mut seen = HashSet::new();
        let mut params = ParamStore::new();
        for e in &header.tensors {
            if e.dtype != "f32" {
                return Err(corrupt(format!("tensor {}: unsupported dtype {}", e.name, e.dtype)));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(corrupt(format!("duplicate tensor {}", e.name)));
            }
            let numel: usize = e.shape.iter().product();
            let start = usize::try_from(e.offset).map_err(|_| corrupt("offset overflow"))?;
            if start % ALIGN != 0 {
                return Err(corrupt(format!("tensor {} is not 64-byte aligned", e.name)));
            }
            let raw = start
                .checked_add(4 * numel)
                .and_then(|end| payload.get(start..end))
                .ok_or_else(|| corrupt(format!("tensor {} extends past the payload", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let id = params.add(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
            params.set_trainable(id, e.trainable);
        }
        let found = config_hash(&header.config)?;
        if found != header.config_hash {
            return Err(Error::ConfigHashMismatch {
                expected: header.config_hash,
                found,
            });
        }
        Ok(Checkpoint {
            params,
            config: header.config,
            config_hash: header.config_hash,
            metrics: header.metrics,
            epoch: header.epoch,
            vocab: header.vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(d) => Error::Checkpoint(format!("{}: {d}", path.display())),
            other => other,
        })
    }

    /// Fails unless the checkpoint was produced by a config hashing to `expected`.
    pub fn verify_hash(&self, expected: &str) -> Result<()> {
        if self.config_hash == expected {
            Ok(())
        } else {
            Err(Error::ConfigHashMismatch {
                expected: expected.to_string(),
                found: self.config_hash.clone(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Checkpoint {
        let mut p = ParamStore::new();
        p.add("a", Tensor::new(vec![2, 3], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, -7.25]).unwrap());
        let b = p.add("b", Tensor::from_vec(vec![0.1; 17]));
        p.set_trainable(b, false);
        p.add("c", Tensor::scalar(f32::MAX));
        Checkpoint::new(p, &json!({"lr": 6e-5, "name": "x"}), json!({"dev_qwk": 0.5}), 3, vec!["[PAD]".into()]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        for ((_, n1, t1), (_, n2, t2)) in c.params.iter().zip(back.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert_eq!(t1.requires_grad, t2.requires_grad);
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t1), bits(t2));
        }
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn layout_is_aligned() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"MSAS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let start = pad_to(16 + hlen);
        let header: Header = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        for e in &header.tensors {
            assert_eq!((start + e.offset as usize) % 64, 0);
        }
        let b = &header.tensors[1];
        let first = &bytes[start + b.offset as usize..][..4];
        assert_eq!(f32::from_le_bytes(first.try_into().unwrap()), 0.1);
    }

    #[test]
    fn tampered_config_is_rejected() {
        let mut c = sample();
        c.config = json!({"lr": 1e-3, "name": "x"});
        let err = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap_err();
        assert!(matches!(err, Error::ConfigHashMismatch { .. }));
        let c = sample();
        assert!(c.verify_hash(&c.config_hash).is_ok());
        assert!(matches!(c.verify_hash("00"), Err(Error::ConfigHashMismatch { .. })));
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 64]).is_err());
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(Checkpoint::from_bytes(&v2).is_err());
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = config_hash(&json!({"x": 1, "y": [1.5, 2]})).unwrap();
        let b = config_hash(&serde_json::from_str::<serde_json::Value>(r#"{"y":[1.5,2],"x":1}"#).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert_ne!(a, config_hash(&json!({"x": 2, "y": [1.5, 2]})).unwrap());
    }
}
