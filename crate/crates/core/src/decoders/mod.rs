//! Decoder backends behind one batch contract.
//!
//! A backend maps each [`DecodeRequest`] to exactly one [`DecodeResponse`]
//! with the same id. Backends are deterministic: the same request yields the
//! same output for the lifetime of the backend.

mod extractive;
mod oracle;
mod remote;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use extractive::{ExtractiveBackend, Gazetteer};
pub use oracle::OracleBackend;
pub use remote::{Endpoint, RemoteBackend, RemoteConfig, RetryPolicy};

pub const DEFAULT_MAX_OUTPUT_TOKENS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeRequest {
    pub request_id: String,
    pub input_text: String,
    pub max_output_tokens: usize,
}

impl DecodeRequest {
    pub fn new(request_id: impl Into<String>, input_text: impl Into<String>) -> Self {
        DecodeRequest {
            request_id: request_id.into(),
            input_text: input_text.into(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeResponse {
    pub request_id: String,
    pub output_text: String,
}

/// Request line of the wire protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub input: String,
    pub max_tokens: usize,
}

/// Response line of the wire protocol. A service reports a per-request
/// failure with `error` in place of `output`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&DecodeRequest> for WireRequest {
    fn from(r: &DecodeRequest) -> Self {
        WireRequest {
            id: r.request_id.clone(),
            input: r.input_text.clone(),
            max_tokens: r.max_output_tokens,
        }
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// Decodes a batch. Implementations may return responses in any order.
    fn decode(&self, requests: &[DecodeRequest]) -> Result<Vec<DecodeResponse>>;
}

/// Runs `backend` over `requests` and returns responses in request order.
/// Rejects duplicate request ids and any backend answer that does not cover
/// the request ids exactly.
pub fn decode_batch(backend: &dyn Backend, requests: &[DecodeRequest]) -> Result<Vec<DecodeResponse>> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let mut ids = HashSet::with_capacity(requests.len());
    for r in requests {
        if !ids.insert(r.request_id.as_str()) {
            return Err(Error::Decode(format!("duplicate request id '{}'", r.request_id)));
        }
    }
    let responses = backend.decode(requests)?;
    let mut by_id: HashMap<String, String> = HashMap::with_capacity(responses.len());
    for resp in responses {
        if !ids.contains(resp.request_id.as_str()) {
            return Err(Error::Decode(format!(
                "{} answered unknown request id '{}'",
                backend.name(),
                resp.request_id
            )));
        }
        if by_id.insert(resp.request_id.clone(), resp.output_text).is_some() {
            return Err(Error::Decode(format!(
                "{} answered request '{}' twice",
                backend.name(),
                resp.request_id
            )));
        }
    }
    requests
        .iter()
        .map(|r| {
            by_id
                .remove(&r.request_id)
                .map(|output_text| DecodeResponse {
                    request_id: r.request_id.clone(),
                    output_text,
                })
                .ok_or_else(|| {
                    Error::Decode(format!(
                        "{} returned no response for '{}'",
                        backend.name(),
                        r.request_id
                    ))
                })
        })
        .collect()
}
