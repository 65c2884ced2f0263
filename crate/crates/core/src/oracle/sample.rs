use std::path::PathBuf;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content-addressed image: a SHA-256 plus optional location or inline bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, rename = "b64", with = "b64_opt", skip_serializing_if = "Option::is_none")]
    pub bytes: Option<Vec<u8>>,
}

impl ImageRef {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        ImageRef {
            sha256: sha256_hex(&bytes),
            path: None,
            bytes: Some(bytes),
        }
    }

    /// Fails when inline bytes do not hash to `sha256`.
    pub fn verify(&self) -> Result<()> {
        if let Some(bytes) = &self.bytes {
            let actual = sha256_hex(bytes);
            if !actual.eq_ignore_ascii_case(&self.sha256) {
                return Err(Error::invalid(format!(
                    "image content hashes to {actual}, record declares {}",
                    self.sha256
                )));
            }
        }
        Ok(())
    }

    /// Image content from inline bytes or the referenced file, hash-checked.
    pub fn load(&self) -> Result<Vec<u8>> {
        let bytes = match (&self.bytes, &self.path) {
            (Some(b), _) => b.clone(),
            (None, Some(p)) => std::fs::read(p).map_err(|e| Error::io(p, e))?,
            (None, None) => {
                return Err(Error::invalid(format!(
                    "image {} has neither inline bytes nor a path",
                    self.sha256
                )))
            }
        };
        let actual = sha256_hex(&bytes);
        if !actual.eq_ignore_ascii_case(&self.sha256) {
            return Err(Error::invalid(format!(
                "image content hashes to {actual}, record declares {}",
                self.sha256
            )));
        }
        Ok(bytes)
    }
}

/// One image-question-answer tuple.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: ImageRef,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Ground truth for evaluation only; attacks never read it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub membership: Option<bool>,
}

impl Sample {
    pub fn answer(&self) -> Result<&str> {
        self.answer
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("sample {} has no answer", self.id)))
    }
}

mod b64_opt {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match bytes {
            Some(b) => s.serialize_str(&B64.encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let text: Option<String> = Option::deserialize(d)?;
        text.map(|t| B64.decode(t.as_bytes()).map_err(serde::de::Error::custom))
            .transpose()
    }
}

pub fn encode_b64(bytes: &[u8]) -> String {
    B64.encode(bytes)
}
