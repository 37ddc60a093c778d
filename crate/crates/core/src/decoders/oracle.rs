use std::collections::HashMap;

use crate::corpus::NONE_VALUE;
use crate::error::Result;
use crate::prompting::PromptExample;

use super::{Backend, DecodeRequest, DecodeResponse};

/// Answers every request with the gold target of the example it was built
/// from. Used for pipeline round-trip checks.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    gold: HashMap<String, String>,
}

impl OracleBackend {
    pub fn new(gold: HashMap<String, String>) -> Self {
        OracleBackend { gold }
    }

    /// Keys requests by [`PromptExample::key`].
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a PromptExample>) -> Self {
        OracleBackend {
            gold: examples
                .into_iter()
                .map(|e| (e.key().to_string(), e.target_text.clone()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }
}

impl Backend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn decode(&self, requests: &[DecodeRequest]) -> Result<Vec<DecodeResponse>> {
        Ok(requests
            .iter()
            .map(|r| {
                let output_text = match self.gold.get(&r.request_id) {
                    Some(v) => v.clone(),
                    None => {
                        log::warn!("oracle has no gold value for '{}'", r.request_id);
                        NONE_VALUE.to_string()
                    }
                };
                DecodeResponse {
                    request_id: r.request_id.clone(),
                    output_text,
                }
            })
            .collect())
    }
}
