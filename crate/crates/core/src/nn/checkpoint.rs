//! Parameter checkpoint container: magic, JSON header, little-endian `f32`
//! payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    /// Network family: `progress`, `q` or `bc`.
    pub kind: String,
    pub dims: serde_json::Value,
    pub seed: u64,
    pub step: u64,
    pub param_count: usize,
}

impl CheckpointHeader {
    pub fn new(
        kind: &str,
        dims: serde_json::Value,
        seed: u64,
        step: u64,
        param_count: usize,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            dims,
            seed,
            step,
            param_count,
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Malformed(format!(
                "checkpoint holds a `{}` network, expected `{kind}`",
                self.kind
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.header).expect("header serialization cannot fail");
        let mut out = Vec::with_capacity(8 + json.len() + 4 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Malformed("not a checkpoint file".into()));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + len)
            .ok_or_else(|| Error::Malformed("truncated checkpoint header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)
            .map_err(|e| Error::Malformed(format!("checkpoint header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: header.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let payload = &bytes[8 + len..];
        if payload.len() != 4 * header.param_count {
            return Err(Error::Malformed(format!(
                "checkpoint payload has {} bytes, header expects {}",
                payload.len(),
                4 * header.param_count
            )));
        }
        let params = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.encode()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
