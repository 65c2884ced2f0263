use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::sample::encode_b64;
use super::{OracleBackend, OracleRequest};
use crate::error::{Error, Result};
use crate::transport::{HttpEndpoint, HttpTransport};

fn default_max_tokens() -> u32 {
    512
}

/// Registration record of an HTTP-backed oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteRegistration {
    pub id: String,
    pub endpoint: HttpEndpoint,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Training-set ids, when the operator controls the model (shadow use).
    #[serde(default)]
    pub member_ids: Option<Vec<String>>,
}

/// Oracle reached over HTTP.
///
/// Request: `{"image_b64", "prompt", "temperature", "max_tokens"}`;
/// response: `{"text"}`. The temperature is forwarded unchanged.
pub struct RemoteOracle {
    id: String,
    transport: HttpTransport,
    max_tokens: u32,
    members: Option<HashSet<String>>,
}

impl RemoteOracle {
    pub fn new(registration: RemoteRegistration) -> Result<Self> {
        Ok(RemoteOracle {
            transport: HttpTransport::new(registration.endpoint)?,
            id: registration.id,
            max_tokens: registration.max_tokens,
            members: registration.member_ids.map(|ids| ids.into_iter().collect()),
        })
    }
}

impl OracleBackend for RemoteOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, request: &OracleRequest<'_>) -> Result<String> {
        let image = request.sample.image.load().map_err(|e| {
            Error::invalid(format!("sample {}: image content unavailable: {e}", request.sample.id))
        })?;
        let body = json!({
            "image_b64": encode_b64(&image),
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_tokens": self.max_tokens,
        });
        let key = request.key.hex();
        let response = self.transport.post_json(&body, &key)?;
        match response.get("text").and_then(|t| t.as_str()) {
            Some(text) => Ok(text.to_string()),
            None => Err(Error::Transport {
                key,
                attempts: 1,
                message: "response lacks a string `text` field".into(),
            }),
        }
    }

    fn declared_members(&self) -> Option<&HashSet<String>> {
        self.members.as_ref()
    }
}
