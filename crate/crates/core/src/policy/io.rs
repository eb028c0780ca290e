//! Versioned little-endian parameter files.
//!
//! Layout: `b"CWDP"`, `u32` format version, four `u32` architecture fields
//! (vocab, embed, hidden, window), `u64` parameter count, then the raw `f64`s.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{Architecture, PolicyParameters};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CWDP";
pub const FORMAT_VERSION: u32 = 1;

impl PolicyParameters {
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = self.architecture();
        let mut out = Vec::with_capacity(32 + 8 * self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for field in [a.vocab_size, a.embed_dim, a.hidden_dim, a.window] {
            out.extend_from_slice(&(field as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in self.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            path: "<policy>".into(),
            detail,
        };
        if bytes.len() < 32 || &bytes[..4] != MAGIC {
            return Err(bad("missing CWDP header".into()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let arch = Architecture {
            vocab_size: u32_at(8) as usize,
            embed_dim: u32_at(12) as usize,
            hidden_dim: u32_at(16) as usize,
            window: u32_at(20) as usize,
        };
        arch.validate().map_err(|e| bad(e.to_string()))?;
        let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
        if count != arch.param_count() {
            return Err(bad(format!(
                "count {count} does not match architecture ({})",
                arch.param_count()
            )));
        }
        let body = &bytes[32..];
        if body.len() != 8 * count {
            return Err(bad(format!(
                "expected {} payload bytes, found {}",
                8 * count,
                body.len()
            )));
        }
        let theta = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        PolicyParameters::from_vec(arch, theta).map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { detail, .. } => Error::Format {
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }

    /// Hex SHA-256 of the serialised form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
