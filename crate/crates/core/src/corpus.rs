//! Dialogue corpora: SGD-format parsing, M2M import, contexts and gold states.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::schema::{hex_digest, strip_domain_prefix, Provenance, Schema, SlotKey};

/// Target text for an absent pair.
pub const NONE_VALUE: &str = "none";
/// Explicit user indifference; a stored value, unlike absence.
pub const DONTCARE_VALUE: &str = "dontcare";

pub(crate) fn is_none_token(text: &str) -> bool {
    text.trim().eq_ignore_ascii_case(NONE_VALUE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Speaker {
    User,
    System,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::User => "USER",
            Speaker::System => "SYSTEM",
        })
    }
}

/// A gold value with every annotated alternative; the first one is used as
/// the training target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotValue(Vec<String>);

impl SlotValue {
    pub fn single(value: impl Into<String>) -> Self {
        SlotValue(vec![value.into()])
    }

    /// `None` when `alternatives` is empty.
    pub fn with_alternatives(alternatives: Vec<String>) -> Option<Self> {
        (!alternatives.is_empty()).then_some(SlotValue(alternatives))
    }

    pub fn primary(&self) -> &str {
        &self.0[0]
    }

    pub fn alternatives(&self) -> &[String] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StateEntry {
    domain: String,
    slot: String,
    value: SlotValue,
}

/// Mapping `(domain, slot) -> value`. Absence encodes "none"; the literal
/// value "none" is never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<StateEntry>", try_from = "Vec<StateEntry>")]
pub struct DialogueState {
    entries: BTreeMap<SlotKey, SlotValue>,
}

impl From<DialogueState> for Vec<StateEntry> {
    fn from(state: DialogueState) -> Self {
        state
            .entries
            .into_iter()
            .map(|(k, value)| StateEntry {
                domain: k.domain,
                slot: k.slot,
                value,
            })
            .collect()
    }
}

impl TryFrom<Vec<StateEntry>> for DialogueState {
    type Error = String;

    fn try_from(entries: Vec<StateEntry>) -> std::result::Result<Self, String> {
        let mut state = DialogueState::new();
        for e in entries {
            state
                .insert(SlotKey::new(e.domain, e.slot), e.value)
                .map_err(|e| e.to_string())?;
        }
        Ok(state)
    }
}

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a value, rejecting the reserved "none" and empty strings.
    pub fn insert(&mut self, key: SlotKey, value: SlotValue) -> Result<()> {
        if let Some(bad) = value
            .alternatives()
            .iter()
            .find(|v| v.trim().is_empty() || is_none_token(v))
        {
            return Err(Error::Corpus {
                dialogue_id: String::new(),
                message: format!("reserved or empty value '{bad}' for {key}"),
            });
        }
        self.entries.insert(key, value);
        Ok(())
    }

    pub fn insert_value(&mut self, key: SlotKey, value: impl Into<String>) -> Result<()> {
        self.insert(key, SlotValue::single(value))
    }

    pub fn get(&self, key: &SlotKey) -> Option<&SlotValue> {
        self.entries.get(key)
    }

    pub fn value(&self, key: &SlotKey) -> Option<&str> {
        self.entries.get(key).map(SlotValue::primary)
    }

    pub fn contains(&self, key: &SlotKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn remove(&mut self, key: &SlotKey) -> Option<SlotValue> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &SlotKey> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SlotKey, &SlotValue)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Triplets rendered as `(domain, slot, value)` in key order.
    pub fn triplets(&self) -> String {
        if self.is_empty() {
            return "()".into();
        }
        self.entries
            .iter()
            .map(|(k, v)| format!("({}, {}, {})", k.domain, k.slot, v.primary()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl FromIterator<(SlotKey, String)> for DialogueState {
    /// Panics on reserved values; intended for fixtures and tests.
    fn from_iter<I: IntoIterator<Item = (SlotKey, String)>>(iter: I) -> Self {
        let mut state = DialogueState::new();
        for (k, v) in iter {
            state.insert_value(k, v).expect("valid state value");
        }
        state
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    /// Present iff `speaker` is the user.
    pub gold_state: Option<DialogueState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContextWindow {
    pub dialogue_id: String,
    /// 1-based user-turn index.
    pub turn_index: usize,
    pub utterances: Vec<(Speaker, String)>,
}

impl Dialogue {
    /// Checks alternation, non-empty text and state placement.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Corpus {
            dialogue_id: self.dialogue_id.clone(),
            message,
        };
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Speaker::User } else { Speaker::System };
            if turn.speaker != expected {
                return Err(fail(format!(
                    "turn {i} is spoken by {} but {expected} was expected",
                    turn.speaker
                )));
            }
            if turn.text.trim().is_empty() {
                return Err(fail(format!("turn {i} has empty text")));
            }
            if (turn.speaker == Speaker::User) != turn.gold_state.is_some() {
                return Err(fail(format!("turn {i} has a misplaced gold state")));
            }
        }
        Ok(())
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.speaker == Speaker::User)
    }

    pub fn num_user_turns(&self) -> usize {
        self.user_turns().count()
    }

    fn check_range(&self, t: usize) -> Result<()> {
        let user_turns = self.num_user_turns();
        if t == 0 || t > user_turns {
            return Err(Error::TurnOutOfRange {
                dialogue_id: self.dialogue_id.clone(),
                index: t,
                user_turns,
            });
        }
        Ok(())
    }

    /// `U_1, A_1, ..., A_{t-1}, U_t`: everything up to the `t`-th user
    /// utterance, without the system reply that follows it.
    pub fn build_context(&self, t: usize) -> Result<ContextWindow> {
        self.check_range(t)?;
        let utterances = self.turns[..2 * t - 1]
            .iter()
            .map(|turn| (turn.speaker, turn.text.clone()))
            .collect();
        Ok(ContextWindow {
            dialogue_id: self.dialogue_id.clone(),
            turn_index: t,
            utterances,
        })
    }

    /// Cumulative annotated state at user turn `t`.
    pub fn gold_state_at(&self, t: usize) -> Result<&DialogueState> {
        self.check_range(t)?;
        Ok(self.turns[2 * (t - 1)]
            .gold_state
            .as_ref()
            .expect("validated user turn carries a state"))
    }

    /// SGD-format JSON for debugging dumps. Parsing the dump yields the same
    /// dialogue.
    pub fn to_sgd_json(&self) -> Value {
        let turns: Vec<Value> = self
            .turns
            .iter()
            .enumerate()
            .map(|(i, turn)| {
                let mut frames: BTreeMap<&str, serde_json::Map<String, Value>> = BTreeMap::new();
                if let Some(state) = &turn.gold_state {
                    for (key, value) in state.iter() {
                        frames
                            .entry(key.domain.as_str())
                            .or_default()
                            .insert(format!("{}-{}", key.domain, key.slot), json!(value.alternatives()));
                    }
                }
                let frames: Vec<Value> = frames
                    .into_iter()
                    .map(|(service, slots)| json!({"service": service, "state": {"slot_values": slots}}))
                    .collect();
                json!({
                    "turn_id": i.to_string(),
                    "speaker": turn.speaker.to_string(),
                    "utterance": turn.text,
                    "frames": frames,
                })
            })
            .collect();
        json!({"dialogue_id": self.dialogue_id, "turns": turns})
    }
}

/// Dialogues plus the annotation-noise warnings collected while parsing.
#[derive(Debug, Clone, Default)]
pub struct ParsedCorpus {
    pub dialogues: Vec<Dialogue>,
    pub warnings: Vec<String>,
}

// SGD dialogue layout.
#[derive(Deserialize)]
struct RawDialogue {
    dialogue_id: String,
    #[serde(default)]
    turns: Vec<RawTurn>,
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: String,
    utterance: String,
    #[serde(default)]
    frames: Vec<RawFrame>,
}

#[derive(Deserialize)]
struct RawFrame {
    service: String,
    #[serde(default)]
    state: Option<RawState>,
}

#[derive(Deserialize)]
struct RawState {
    #[serde(default)]
    slot_values: BTreeMap<String, Vec<String>>,
}

/// JSON files under `path` (or `path` itself), sorted, skipping schema and
/// dialogue-act files that sit next to the dialogues in released datasets.
fn corpus_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let p = e.path().unwrap_or(path).to_path_buf();
            Error::io(p, e.into())
        })?;
        let name = entry.file_name().to_string_lossy();
        if entry.file_type().is_file()
            && name.ends_with(".json")
            && !name.starts_with("schema")
            && !name.starts_with("dialog_acts")
        {
            files.push(entry.path().to_path_buf());
        }
    }
    Ok(files)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Reads SGD-format dialogues from a file or a directory tree of files.
///
/// Frames for domains outside `schema` are dropped silently (they belong to
/// excluded domains); unknown slots inside a known domain are dropped with a
/// warning. Texts and values are kept verbatim.
pub fn parse_dialogues(path: impl AsRef<Path>, schema: &Schema) -> Result<ParsedCorpus> {
    let mut corpus = ParsedCorpus::default();
    for file in corpus_files(path.as_ref())? {
        let raw: Vec<RawDialogue> = read_json(&file)?;
        for dialogue in raw {
            corpus
                .dialogues
                .push(convert_sgd(dialogue, schema, &mut corpus.warnings)?);
        }
    }
    Ok(corpus)
}

/// Same as [`parse_dialogues`] over an in-memory JSON document.
pub fn parse_dialogues_str(text: &str, schema: &Schema) -> Result<ParsedCorpus> {
    let raw: Vec<RawDialogue> = serde_json::from_str(text).map_err(|e| Error::json("<dialogues>", e))?;
    let mut corpus = ParsedCorpus::default();
    for dialogue in raw {
        corpus
            .dialogues
            .push(convert_sgd(dialogue, schema, &mut corpus.warnings)?);
    }
    Ok(corpus)
}

fn convert_sgd(raw: RawDialogue, schema: &Schema, warnings: &mut Vec<String>) -> Result<Dialogue> {
    let dialogue_id = raw.dialogue_id;
    let mut turns = Vec::with_capacity(raw.turns.len());
    for (i, turn) in raw.turns.into_iter().enumerate() {
        let speaker = match turn.speaker.to_ascii_uppercase().as_str() {
            "USER" => Speaker::User,
            "SYSTEM" => Speaker::System,
            other => {
                return Err(Error::Corpus {
                    dialogue_id,
                    message: format!("turn {i} has unknown speaker '{other}'"),
                })
            }
        };
        let gold_state = match speaker {
            Speaker::User => Some(frames_to_state(&dialogue_id, turn.frames, schema, warnings)?),
            Speaker::System => None,
        };
        turns.push(Turn {
            speaker,
            text: turn.utterance,
            gold_state,
        });
    }
    let dialogue = Dialogue { dialogue_id, turns };
    dialogue.validate()?;
    Ok(dialogue)
}

fn frames_to_state(
    dialogue_id: &str,
    frames: Vec<RawFrame>,
    schema: &Schema,
    warnings: &mut Vec<String>,
) -> Result<DialogueState> {
    let mut state = DialogueState::new();
    for frame in frames {
        let Some(domain) = schema.domain(&frame.service) else {
            continue;
        };
        let Some(raw_state) = frame.state else {
            continue;
        };
        for (qualified, values) in raw_state.slot_values {
            let slot = strip_domain_prefix(&domain.name, &qualified);
            if domain.slot(slot).is_none() {
                let msg = format!("{dialogue_id}: dropping unknown slot '{qualified}'");
                log::warn!("{msg}");
                warnings.push(msg);
                continue;
            }
            let values: Vec<String> = values.into_iter().filter(|v| !v.is_empty()).collect();
            let Some(value) = SlotValue::with_alternatives(values) else {
                continue;
            };
            state
                .insert(SlotKey::new(&domain.name, slot), value)
                .map_err(|e| Error::Corpus {
                    dialogue_id: dialogue_id.to_string(),
                    message: e.to_string(),
                })?;
        }
    }
    Ok(state)
}

// M2M (simulated dialogue) native layout.
#[derive(Deserialize)]
struct M2mDialogue {
    dialogue_id: String,
    turns: Vec<M2mTurn>,
}

#[derive(Deserialize)]
struct M2mTurn {
    #[serde(default)]
    system_utterance: Option<M2mUtterance>,
    user_utterance: M2mUtterance,
    #[serde(default)]
    dialogue_state: Vec<M2mSlotValue>,
}

#[derive(Deserialize)]
struct M2mUtterance {
    text: String,
}

#[derive(Deserialize)]
struct M2mSlotValue {
    slot: String,
    value: String,
}

fn m2m_domain_for(path: &Path) -> Option<&'static str> {
    path.components().rev().find_map(
        |c| match c.as_os_str().to_string_lossy().to_ascii_lowercase().as_str() {
            "sim-m" => Some("movie"),
            "sim-r" => Some("restaurant"),
            _ => None,
        },
    )
}

/// Converts M2M's native format into the SGD model. Each native turn holds
/// the system utterance that precedes a user utterance plus the cumulative
/// state after it. The domain is `domain` when given, otherwise inferred from
/// a `sim-M`/`sim-R` directory component.
pub fn import_m2m(path: impl AsRef<Path>, schema: &Schema, domain: Option<&str>) -> Result<ParsedCorpus> {
    let mut corpus = ParsedCorpus::default();
    for file in corpus_files(path.as_ref())? {
        let domain = match domain.or_else(|| m2m_domain_for(&file)) {
            Some(d) => d,
            None => {
                return Err(Error::Config(format!(
                    "cannot infer M2M domain for {} (expected a sim-M or sim-R directory)",
                    file.display()
                )))
            }
        };
        if schema.domain(domain).is_none() {
            return Err(Error::Schema(format!("M2M domain '{domain}' missing from schema")));
        }
        let raw: Vec<M2mDialogue> = read_json(&file)?;
        for dialogue in raw {
            corpus
                .dialogues
                .push(convert_m2m(dialogue, domain, schema, &mut corpus.warnings)?);
        }
    }
    Ok(corpus)
}

fn convert_m2m(raw: M2mDialogue, domain: &str, schema: &Schema, warnings: &mut Vec<String>) -> Result<Dialogue> {
    let mut turns: Vec<Turn> = Vec::with_capacity(raw.turns.len() * 2);
    for turn in raw.turns {
        if let Some(system) = turn.system_utterance.filter(|u| !u.text.trim().is_empty()) {
            if turns.is_empty() {
                warnings.push(format!(
                    "{}: dropping system utterance before the first user turn",
                    raw.dialogue_id
                ));
            } else {
                turns.push(Turn {
                    speaker: Speaker::System,
                    text: system.text,
                    gold_state: None,
                });
            }
        }
        let mut state = DialogueState::new();
        for sv in turn.dialogue_state {
            let key = SlotKey::new(domain, &sv.slot);
            if !schema.contains(&key) {
                let msg = format!("{}: dropping unknown slot '{}'", raw.dialogue_id, key);
                log::warn!("{msg}");
                warnings.push(msg);
                continue;
            }
            state.insert_value(key, sv.value).map_err(|e| Error::Corpus {
                dialogue_id: raw.dialogue_id.clone(),
                message: e.to_string(),
            })?;
        }
        turns.push(Turn {
            speaker: Speaker::User,
            text: turn.user_utterance.text,
            gold_state: Some(state),
        });
    }
    let dialogue = Dialogue {
        dialogue_id: raw.dialogue_id,
        turns,
    };
    dialogue.validate()?;
    Ok(dialogue)
}

/// Loads a corpus in the layout implied by `provenance`.
pub fn load_corpus(path: impl AsRef<Path>, schema: &Schema) -> Result<ParsedCorpus> {
    match schema.provenance {
        Provenance::M2m => import_m2m(path, schema, None),
        _ => parse_dialogues(path, schema),
    }
}

/// SHA-256 over the canonical JSON form of the dialogues.
pub fn corpus_hash(dialogues: &[Dialogue]) -> String {
    hex_digest(&serde_json::to_vec(dialogues).expect("dialogues serialize"))
}

/// What the "turns" column of a corpus summary counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnUnit {
    /// Every user and system utterance.
    Utterance,
    /// One user utterance with the system reply preceding it.
    Exchange,
}

impl TurnUnit {
    pub fn for_provenance(provenance: Provenance) -> Self {
        match provenance {
            Provenance::M2m => TurnUnit::Exchange,
            _ => TurnUnit::Utterance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub dialogues: usize,
    pub utterances: usize,
    pub user_turns: usize,
    pub turn_unit: TurnUnit,
    pub total_turns: usize,
    pub avg_turns_per_dialogue: f64,
    pub avg_tokens_per_turn: f64,
    pub tokenizer: &'static str,
}

/// Dialogue count, turn totals and averages. Tokens are whitespace-split.
pub fn corpus_stats(dialogues: &[Dialogue], unit: TurnUnit) -> CorpusStats {
    let utterances: usize = dialogues.iter().map(|d| d.turns.len()).sum();
    let user_turns: usize = dialogues.iter().map(Dialogue::num_user_turns).sum();
    let tokens: usize = dialogues
        .iter()
        .flat_map(|d| &d.turns)
        .map(|t| t.text.split_whitespace().count())
        .sum();
    let total_turns = match unit {
        TurnUnit::Utterance => utterances,
        TurnUnit::Exchange => user_turns,
    };
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    CorpusStats {
        dialogues: dialogues.len(),
        utterances,
        user_turns,
        turn_unit: unit,
        total_turns,
        avg_turns_per_dialogue: ratio(total_turns, dialogues.len()),
        avg_tokens_per_turn: ratio(tokens, utterances),
        tokenizer: "whitespace",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_schema_str;

    fn schema() -> Schema {
        parse_schema_str(
            r#"[
              {"service_name": "train", "slots": [
                {"name": "train-day", "is_categorical": true, "possible_values": ["thursday", "friday"]},
                {"name": "train-destination"}]},
              {"service_name": "hotel", "slots": [{"name": "hotel-ref"}]}
            ]"#,
            Provenance::Custom,
        )
        .unwrap()
    }

    const TWO_TURNS: &str = r#"[{"dialogue_id": "d1", "turns": [
        {"speaker": "USER", "utterance": "I need a train  to London on thursday",
         "frames": [{"service": "train", "state": {"slot_values": {
             "train-day": ["thursday"], "train-destination": ["london", "London"]}}},
           {"service": "police", "state": {"slot_values": {"police-name": ["x"]}}}]},
        {"speaker": "SYSTEM", "utterance": "Where from?", "frames": []},
        {"speaker": "USER", "utterance": "From Cambridge.",
         "frames": [{"service": "train", "state": {"slot_values": {
             "train-day": ["thursday"], "train-bogus": ["1"]}}}]}
    ]}]"#;

    #[test]
    fn parses_states_and_drops_noise() {
        let corpus = parse_dialogues_str(TWO_TURNS, &schema()).unwrap();
        let d = &corpus.dialogues[0];
        assert_eq!(d.num_user_turns(), 2);
        let s1 = d.gold_state_at(1).unwrap();
        assert_eq!(s1.len(), 2);
        let dest = s1.get(&SlotKey::new("train", "destination")).unwrap();
        assert_eq!(dest.primary(), "london");
        assert_eq!(dest.alternatives().len(), 2);
        assert_eq!(d.gold_state_at(2).unwrap().len(), 1);
        assert_eq!(corpus.warnings.len(), 1);
        assert!(corpus.warnings[0].contains("train-bogus"));
    }

    #[test]
    fn text_is_not_normalized() {
        let corpus = parse_dialogues_str(TWO_TURNS, &schema()).unwrap();
        assert_eq!(
            corpus.dialogues[0].turns[0].text,
            "I need a train  to London on thursday"
        );
    }

    #[test]
    fn non_alternating_is_an_error_with_id() {
        let text = r#"[{"dialogue_id": "bad-7", "turns": [
            {"speaker": "USER", "utterance": "hi", "frames": []},
            {"speaker": "USER", "utterance": "hello", "frames": []}]}]"#;
        let err = parse_dialogues_str(text, &schema()).unwrap_err();
        assert!(err.to_string().contains("bad-7"));
    }

    #[test]
    fn literal_none_value_rejected() {
        let text = r#"[{"dialogue_id": "n", "turns": [
            {"speaker": "USER", "utterance": "hi", "frames": [
              {"service": "hotel", "state": {"slot_values": {"hotel-ref": ["none"]}}}]}]}]"#;
        assert!(parse_dialogues_str(text, &schema()).is_err());
    }

    #[test]
    fn single_turn_dialogue() {
        let text = r#"[{"dialogue_id": "s", "turns": [
            {"speaker": "USER", "utterance": "hello there", "frames": []}]}]"#;
        let corpus = parse_dialogues_str(text, &schema()).unwrap();
        let d = &corpus.dialogues[0];
        assert_eq!(d.turns.len(), 1);
        assert!(d.gold_state_at(1).unwrap().is_empty());
    }

    #[test]
    fn context_bounds() {
        let corpus = parse_dialogues_str(TWO_TURNS, &schema()).unwrap();
        let d = &corpus.dialogues[0];
        assert_eq!(d.build_context(1).unwrap().utterances.len(), 1);
        let c2 = d.build_context(2).unwrap();
        assert_eq!(c2.utterances.len(), 3);
        assert_eq!(c2.utterances.last().unwrap().0, Speaker::User);
        assert!(matches!(d.build_context(0), Err(Error::TurnOutOfRange { .. })));
        assert!(d.build_context(3).is_err());
        assert!(d.gold_state_at(3).is_err());
    }

    #[test]
    fn debug_dump_round_trips() {
        let corpus = parse_dialogues_str(TWO_TURNS, &schema()).unwrap();
        let dumped = serde_json::to_string(&vec![corpus.dialogues[0].to_sgd_json()]).unwrap();
        let again = parse_dialogues_str(&dumped, &schema()).unwrap();
        assert_eq!(again.dialogues, corpus.dialogues);
    }

    #[test]
    fn stats_on_empty_corpus() {
        let stats = corpus_stats(&[], TurnUnit::Utterance);
        assert_eq!(stats.dialogues, 0);
        assert_eq!(stats.avg_turns_per_dialogue, 0.0);
        assert_eq!(stats.avg_tokens_per_turn, 0.0);
    }

    #[test]
    fn stats_counts() {
        let corpus = parse_dialogues_str(TWO_TURNS, &schema()).unwrap();
        let stats = corpus_stats(&corpus.dialogues, TurnUnit::Utterance);
        assert_eq!(stats.total_turns, 3);
        assert_eq!(stats.user_turns, 2);
        // 8 + 2 + 2 whitespace tokens over 3 utterances
        assert!((stats.avg_tokens_per_turn - 4.0).abs() < 1e-12);
        let by_exchange = corpus_stats(&corpus.dialogues, TurnUnit::Exchange);
        assert_eq!(by_exchange.total_turns, 2);
    }

    #[test]
    fn m2m_import() {
        let schema = parse_schema_str(
            r#"[{"service_name": "movie", "slots": [{"name": "movie"}, {"name": "date"}]}]"#,
            Provenance::M2m,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("sim-M");
        fs::create_dir(&sub).unwrap();
        fs::write(
            sub.join("train.json"),
            r#"[{"dialogue_id": "m1", "turns": [
                {"user_utterance": {"text": "two tickets for Zootopia"},
                 "dialogue_state": [{"slot": "movie", "value": "Zootopia"}]},
                {"system_utterance": {"text": "what date ?"},
                 "user_utterance": {"text": "tomorrow"},
                 "dialogue_state": [{"slot": "movie", "value": "Zootopia"},
                                    {"slot": "date", "value": "tomorrow"}]}]}]"#,
        )
        .unwrap();
        let corpus = load_corpus(dir.path(), &schema).unwrap();
        let d = &corpus.dialogues[0];
        assert_eq!(d.turns.len(), 3);
        assert_eq!(d.gold_state_at(2).unwrap().len(), 2);
        let stats = corpus_stats(&corpus.dialogues, TurnUnit::for_provenance(Provenance::M2m));
        assert_eq!(stats.total_turns, 2);
    }
}
