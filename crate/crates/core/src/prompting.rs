//! Encoder inputs and decoder targets for independent and sequential decoding.
//!
//! Independent examples append a `[domain] .. [slot] ..` prompt to the
//! dialogue context and target a single value (or "none"). Sequential
//! examples use the bare context and target every active triplet as
//! `[domain] d [slot] s [value] v`, concatenated in schema order.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{is_none_token, ContextWindow, Dialogue, DialogueState, Speaker, NONE_VALUE};
use crate::error::{Error, Result};
use crate::schema::{DescriptionConfig, DomainDef, Schema, SlotDef, SlotKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentTokens {
    pub user: String,
    pub system: String,
    pub domain: String,
    pub slot: String,
    pub value: String,
}

impl Default for SegmentTokens {
    fn default() -> Self {
        SegmentTokens {
            user: "[user]".into(),
            system: "[system]".into(),
            domain: "[domain]".into(),
            slot: "[slot]".into(),
            value: "[value]".into(),
        }
    }
}

impl SegmentTokens {
    pub fn validate(&self) -> Result<()> {
        let all = self.all();
        for (i, tok) in all.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "segment token '{tok}' must be non-empty without whitespace"
                )));
            }
            if all[..i].contains(tok) {
                return Err(Error::Config(format!("segment token '{tok}' is repeated")));
            }
        }
        Ok(())
    }

    fn all(&self) -> [&str; 5] {
        [&self.user, &self.system, &self.domain, &self.slot, &self.value]
    }

    fn speaker(&self, speaker: Speaker) -> &str {
        match speaker {
            Speaker::User => &self.user,
            Speaker::System => &self.system,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Independent,
    Sequential,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Independent => "independent",
            Mode::Sequential => "sequential",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independent" => Ok(Mode::Independent),
            "sequential" => Ok(Mode::Sequential),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// One line of an examples file. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExample {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub domain: Option<String>,
    pub slot: Option<String>,
    pub mode: Mode,
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "target")]
    pub target_text: String,
}

impl PromptExample {
    pub fn key(&self) -> ExampleKey {
        ExampleKey {
            dialogue_id: self.dialogue_id.clone(),
            turn_index: self.turn_index,
            pair: match (&self.domain, &self.slot) {
                (Some(d), Some(s)) => Some(SlotKey::new(d, s)),
                _ => None,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.mode {
            Mode::Independent => self.domain.is_some() && self.slot.is_some(),
            Mode::Sequential => self.domain.is_none() && self.slot.is_none(),
        };
        if !ok {
            return Err(Error::Config(format!(
                "{} example {} has inconsistent domain/slot fields",
                self.mode,
                self.key()
            )));
        }
        Ok(())
    }
}

/// Identifies an example, and the decode request made from it.
/// Rendered as `dialogue|turn` or `dialogue|turn|domain|slot`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExampleKey {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub pair: Option<SlotKey>,
}

impl fmt::Display for ExampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.dialogue_id, self.turn_index)?;
        if let Some(pair) = &self.pair {
            write!(f, "|{}|{}", pair.domain, pair.slot)?;
        }
        Ok(())
    }
}

impl FromStr for ExampleKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Decode(format!("malformed example key '{s}'"));
        let parts: Vec<&str> = s.split('|').collect();
        let (id, turn, pair) = match parts.as_slice() {
            [id, turn] => (*id, *turn, None),
            [id, turn, domain, slot] => (*id, *turn, Some(SlotKey::new(*domain, *slot))),
            _ => return Err(bad()),
        };
        Ok(ExampleKey {
            dialogue_id: id.to_string(),
            turn_index: turn.parse().map_err(|_| bad())?,
            pair,
        })
    }
}

/// `<name>` or `<name> <description>`.
pub fn domain_prompt(domain: &DomainDef, config: &DescriptionConfig) -> String {
    match (&domain.description, config.use_domain_desc) {
        (Some(desc), true) => format!("{} {}", domain.name, desc),
        _ => domain.name.clone(),
    }
}

/// `<name>`, then the description when enabled and available, then the
/// categorical value set in schema order when enabled.
pub fn slot_prompt(slot: &SlotDef, config: &DescriptionConfig) -> String {
    let mut parts: Vec<&str> = vec![&slot.name];
    if config.use_slot_desc {
        if let Some(desc) = &slot.description {
            parts.push(desc);
        }
    }
    if config.use_value_list && slot.is_categorical {
        parts.extend(slot.possible_values.iter().map(String::as_str));
    }
    parts.join(" ")
}

/// `[user] U_1 [system] A_1 ... [user] U_t`.
pub fn serialize_context(ctx: &ContextWindow, tokens: &SegmentTokens) -> String {
    let mut out = String::new();
    for (i, (speaker, text)) in ctx.utterances.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(tokens.speaker(*speaker));
        out.push(' ');
        out.push_str(text);
    }
    out
}

pub fn serialize_independent(
    ctx: &ContextWindow,
    domain: &DomainDef,
    slot: &SlotDef,
    gold: &DialogueState,
    tokens: &SegmentTokens,
    config: &DescriptionConfig,
) -> PromptExample {
    let input_text = format!(
        "{} {} {} {} {}",
        serialize_context(ctx, tokens),
        tokens.domain,
        domain_prompt(domain, config),
        tokens.slot,
        slot_prompt(slot, config)
    );
    let key = SlotKey::new(&domain.name, &slot.name);
    PromptExample {
        dialogue_id: ctx.dialogue_id.clone(),
        turn_index: ctx.turn_index,
        domain: Some(domain.name.clone()),
        slot: Some(slot.name.clone()),
        mode: Mode::Independent,
        input_text,
        target_text: gold.value(&key).unwrap_or(NONE_VALUE).to_string(),
    }
}

/// Triplet string for `state` in schema order, or "none" when empty.
pub fn sequential_target(state: &DialogueState, schema: &Schema, tokens: &SegmentTokens) -> String {
    let triplets: Vec<String> = schema
        .pairs()
        .filter_map(|(d, s)| {
            let key = SlotKey::new(&d.name, &s.name);
            state.value(&key).map(|v| {
                format!(
                    "{} {} {} {} {} {}",
                    tokens.domain, d.name, tokens.slot, s.name, tokens.value, v
                )
            })
        })
        .collect();
    if triplets.is_empty() {
        NONE_VALUE.to_string()
    } else {
        triplets.join(" ")
    }
}

pub fn serialize_sequential(
    ctx: &ContextWindow,
    schema: &Schema,
    gold: &DialogueState,
    tokens: &SegmentTokens,
) -> PromptExample {
    PromptExample {
        dialogue_id: ctx.dialogue_id.clone(),
        turn_index: ctx.turn_index,
        domain: None,
        slot: None,
        mode: Mode::Sequential,
        input_text: serialize_context(ctx, tokens),
        target_text: sequential_target(gold, schema, tokens),
    }
}

/// Result of reading a sequential-decoding output.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedSequence {
    pub state: DialogueState,
    pub malformed_segments: usize,
}

/// Best-effort inverse of [`sequential_target`]. Never fails: segments that
/// do not form a `domain slot value` triplet over a known pair are counted
/// and skipped. Later duplicates overwrite earlier ones, and a triplet whose
/// value is "none" clears the pair.
pub fn parse_sequential(output: &str, schema: &Schema, tokens: &SegmentTokens) -> ParsedSequence {
    let mut parsed = ParsedSequence::default();
    if output.trim().is_empty() || is_none_token(output) {
        return parsed;
    }

    // Single-space splitting keeps runs of spaces inside values intact.
    let words: Vec<&str> = output.split(' ').collect();
    let mut segments: Vec<(Vec<&str>, bool)> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut started = false;
    for word in words {
        if word == tokens.domain {
            if started || current.iter().any(|w| !w.trim().is_empty()) {
                segments.push((std::mem::take(&mut current), started));
            }
            current.clear();
            started = true;
        } else {
            current.push(word);
        }
    }
    if started || current.iter().any(|w| !w.trim().is_empty()) {
        segments.push((current, started));
    }

    for (segment, has_domain_marker) in segments {
        if !has_domain_marker {
            parsed.malformed_segments += 1;
            continue;
        }
        match split_triplet(&segment, tokens) {
            Some((domain, slot, value)) => {
                let key = SlotKey::new(domain, slot);
                if !schema.contains(&key) || value.trim().is_empty() {
                    parsed.malformed_segments += 1;
                } else if is_none_token(&value) {
                    parsed.state.remove(&key);
                } else {
                    parsed
                        .state
                        .insert_value(key, value)
                        .expect("value checked non-reserved");
                }
            }
            None => parsed.malformed_segments += 1,
        }
    }
    parsed
}

fn split_triplet(words: &[&str], tokens: &SegmentTokens) -> Option<(String, String, String)> {
    let slot_at = words.iter().position(|w| *w == tokens.slot)?;
    let value_at = slot_at + 1 + words[slot_at + 1..].iter().position(|w| *w == tokens.value)?;
    let rest = &words[value_at + 1..];
    if rest.iter().any(|w| *w == tokens.slot || *w == tokens.value) {
        return None;
    }
    if rest.is_empty() {
        return None;
    }
    let domain = words[..slot_at].join(" ").trim().to_string();
    let slot = words[slot_at + 1..value_at].join(" ").trim().to_string();
    let value = rest.join(" ");
    if domain.is_empty() || slot.is_empty() {
        return None;
    }
    Some((domain, slot, value))
}

/// Examples in deterministic `(dialogue, turn, domain, slot)` order.
pub fn expand_examples<'a>(
    dialogues: &'a [Dialogue],
    schema: &'a Schema,
    mode: Mode,
    tokens: &'a SegmentTokens,
    config: &'a DescriptionConfig,
) -> impl Iterator<Item = PromptExample> + 'a {
    dialogues.iter().flat_map(move |dialogue| {
        (1..=dialogue.num_user_turns()).flat_map(move |t| {
            let ctx = dialogue.build_context(t).expect("turn in range");
            let gold = dialogue.gold_state_at(t).expect("turn in range");
            let examples: Vec<PromptExample> = match mode {
                Mode::Independent => schema
                    .pairs()
                    .map(|(d, s)| serialize_independent(&ctx, d, s, gold, tokens, config))
                    .collect(),
                Mode::Sequential => vec![serialize_sequential(&ctx, schema, gold, tokens)],
            };
            examples
        })
    })
}

/// Utterances that contain a segment token, as `(dialogue_id, turn position)`.
pub fn segment_token_collisions(dialogues: &[Dialogue], tokens: &SegmentTokens) -> Vec<(String, usize)> {
    let markers = tokens.all();
    dialogues
        .iter()
        .flat_map(|d| {
            d.turns
                .iter()
                .enumerate()
                .filter(|(_, t)| markers.iter().any(|m| t.text.contains(m)))
                .map(|(i, _)| (d.dialogue_id.clone(), i))
        })
        .collect()
}

/// Number of categorical gold targets outside `possible_values ∪ {none, dontcare}`.
/// Each violation is logged.
pub fn categorical_target_violations(examples: &[PromptExample], schema: &Schema) -> usize {
    let mut violations = 0;
    for ex in examples.iter().filter(|e| e.mode == Mode::Independent) {
        let (Some(domain), Some(slot)) = (&ex.domain, &ex.slot) else {
            continue;
        };
        let Some(def) = schema.slot(domain, slot) else {
            continue;
        };
        if !def.is_categorical || def.possible_values.is_empty() {
            continue;
        }
        let target = ex.target_text.as_str();
        let allowed = target == NONE_VALUE
            || target == crate::corpus::DONTCARE_VALUE
            || def.possible_values.iter().any(|v| v == target);
        if !allowed {
            log::warn!(
                "{}: categorical target '{}' not in the value set of {}-{}",
                ex.key(),
                target,
                domain,
                slot
            );
            violations += 1;
        }
    }
    violations
}

/// Writes one JSON object per line and returns the SHA-256 of the bytes written.
pub fn write_examples<'a>(
    path: impl AsRef<Path>,
    examples: impl IntoIterator<Item = &'a PromptExample>,
) -> Result<(usize, String)> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let mut hasher = Sha256::new();
    let mut count = 0;
    for example in examples {
        let mut line = serde_json::to_vec(example).expect("example serializes");
        line.push(b'\n');
        hasher.update(&line);
        writer.write_all(&line).map_err(|e| Error::io(path, e))?;
        count += 1;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    let digest = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((count, digest))
}

pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<PromptExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let example: PromptExample = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        example.validate().map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(example);
    }
    Ok(out)
}
