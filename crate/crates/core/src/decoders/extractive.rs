use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{Dialogue, DONTCARE_VALUE, NONE_VALUE};
use crate::error::{Error, Result};
use crate::prompting::{ExampleKey, SegmentTokens};
use crate::schema::{Schema, SlotKey};

use super::{Backend, DecodeRequest, DecodeResponse};

/// Values observed per slot. Build it from the training split only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    values: BTreeMap<SlotKey, BTreeSet<String>>,
}

impl Gazetteer {
    pub fn from_dialogues(dialogues: &[Dialogue]) -> Self {
        let mut values: BTreeMap<SlotKey, BTreeSet<String>> = BTreeMap::new();
        for turn in dialogues.iter().flat_map(|d| d.user_turns()) {
            let Some(state) = &turn.gold_state else { continue };
            for (key, value) in state.iter() {
                for alt in value.alternatives() {
                    if alt != DONTCARE_VALUE {
                        values.entry(key.clone()).or_default().insert(alt.clone());
                    }
                }
            }
        }
        Gazetteer { values }
    }

    pub fn insert(&mut self, key: SlotKey, value: impl Into<String>) {
        self.values.entry(key).or_default().insert(value.into());
    }

    pub fn values(&self, key: &SlotKey) -> impl Iterator<Item = &str> {
        self.values.get(key).into_iter().flatten().map(String::as_str)
    }
}

/// String-matching baseline for independent decoding.
///
/// Categorical slots take the latest mention of any possible value in the
/// context; non-categorical slots take the latest mention of a gazetteer
/// value. Matching is case-insensitive on word boundaries. A later utterance
/// wins, then a later position, then a longer value. No mention yields "none".
#[derive(Debug, Clone)]
pub struct ExtractiveBackend {
    schema: Schema,
    gazetteer: Gazetteer,
    tokens: SegmentTokens,
}

impl ExtractiveBackend {
    pub fn new(schema: Schema) -> Self {
        ExtractiveBackend {
            schema,
            gazetteer: Gazetteer::default(),
            tokens: SegmentTokens::default(),
        }
    }

    pub fn with_gazetteer(mut self, gazetteer: Gazetteer) -> Self {
        self.gazetteer = gazetteer;
        self
    }

    pub fn with_tokens(mut self, tokens: SegmentTokens) -> Self {
        self.tokens = tokens;
        self
    }

    /// Utterance texts of the context, i.e. the input before the prompt suffix.
    fn utterances<'a>(&self, input: &'a str) -> Vec<String> {
        let mut utterances = Vec::new();
        let mut current: Vec<&'a str> = Vec::new();
        let mut in_utterance = false;
        for word in input.split(' ') {
            if word == self.tokens.user || word == self.tokens.system {
                if in_utterance {
                    utterances.push(current.join(" "));
                }
                current.clear();
                in_utterance = true;
            } else if word == self.tokens.domain {
                break;
            } else {
                current.push(word);
            }
        }
        if in_utterance {
            utterances.push(current.join(" "));
        }
        utterances
    }

    pub fn extract(&self, key: &SlotKey, input: &str) -> Result<String> {
        let slot = self
            .schema
            .slot_for(key)
            .ok_or_else(|| Error::Decode(format!("extractive backend: unknown slot {key}")))?;
        let candidates: Vec<&str> = if slot.is_categorical {
            slot.possible_values.iter().map(String::as_str).collect()
        } else {
            self.gazetteer.values(key).collect()
        };
        let utterances: Vec<String> = self.utterances(input).iter().map(|u| u.to_lowercase()).collect();
        let mut best: Option<((usize, usize, usize), &str)> = None;
        for candidate in candidates {
            let needle = candidate.to_lowercase();
            if needle.trim().is_empty() {
                continue;
            }
            for (u, text) in utterances.iter().enumerate() {
                if let Some(start) = last_word_match(text, &needle) {
                    let rank = (u, start, needle.len());
                    if best.is_none_or(|(b, _)| rank > b) {
                        best = Some((rank, candidate));
                    }
                }
            }
        }
        Ok(best.map_or(NONE_VALUE, |(_, v)| v).to_string())
    }
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// Byte offset of the last occurrence of `needle` in `haystack` that is not
/// glued to surrounding alphanumerics.
fn last_word_match(haystack: &str, needle: &str) -> Option<usize> {
    haystack
        .match_indices(needle)
        .filter(|(start, m)| {
            let before = haystack[..*start].chars().next_back();
            let after = haystack[start + m.len()..].chars().next();
            !is_word_char(before) && !is_word_char(after)
        })
        .map(|(start, _)| start)
        .last()
}

impl Backend for ExtractiveBackend {
    fn name(&self) -> &str {
        "extractive"
    }

    fn decode(&self, requests: &[DecodeRequest]) -> Result<Vec<DecodeResponse>> {
        requests
            .iter()
            .map(|r| {
                let key: ExampleKey = r.request_id.parse()?;
                let pair = key.pair.ok_or_else(|| {
                    Error::Decode(format!(
                        "extractive backend supports independent mode only (request '{}')",
                        r.request_id
                    ))
                })?;
                Ok(DecodeResponse {
                    request_id: r.request_id.clone(),
                    output_text: self.extract(&pair, &r.input_text)?,
                })
            })
            .collect()
    }
}
