//! `IRPM1` model container: magic, implementation tag, JSON hyperparameters
//! and an opaque little-endian payload.

use std::path::Path;

use crate::error::{IrpError, Result};

const MAGIC: &[u8; 5] = b"IRPM1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlob {
    pub tag: String,
    pub hyper: serde_json::Value,
    pub payload: Vec<u8>,
}

impl ModelBlob {
    pub fn new(tag: &str, hyper: serde_json::Value, payload: Vec<u8>) -> Self {
        ModelBlob {
            tag: tag.to_string(),
            hyper,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let hyper = serde_json::to_vec(&self.hyper).expect("json value serializes");
        let mut out = Vec::with_capacity(16 + self.tag.len() + hyper.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(self.tag.len() as u8);
        out.extend_from_slice(self.tag.as_bytes());
        out.extend_from_slice(&(hyper.len() as u32).to_le_bytes());
        out.extend_from_slice(&hyper);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let bad = || IrpError::format("truncated or malformed model file");
        if b.len() < 6 || &b[..5] != MAGIC {
            return Err(IrpError::format("not an IRPM1 model file"));
        }
        let mut at = 5;
        let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
            let s = b.get(*at..*at + n).ok_or_else(bad)?;
            *at += n;
            Ok(s)
        };
        let tl = take(&mut at, 1)?[0] as usize;
        let tag = String::from_utf8(take(&mut at, tl)?.to_vec()).map_err(|_| bad())?;
        let hl = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let hyper = serde_json::from_slice(take(&mut at, hl)?).map_err(|e| IrpError::format(e.to_string()))?;
        let pl = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
        let payload = take(&mut at, pl)?.to_vec();
        if at != b.len() {
            return Err(IrpError::format("trailing bytes in model file"));
        }
        Ok(ModelBlob { tag, hyper, payload })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| IrpError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b = std::fs::read(path).map_err(|e| IrpError::io(path, e))?;
        Self::from_bytes(&b)
    }

    /// Fails unless the blob carries the expected implementation tag.
    pub fn expect_tag(&self, tag: &str) -> Result<()> {
        if self.tag != tag {
            return Err(IrpError::format(format!(
                "model is '{}', expected '{tag}'",
                self.tag
            )));
        }
        Ok(())
    }
}

pub(crate) fn f64s_to_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub(crate) fn bytes_to_f64s(b: &[u8]) -> Result<Vec<f64>> {
    if b.len() % 8 != 0 {
        return Err(IrpError::format("payload is not a whole number of f64"));
    }
    Ok(b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
