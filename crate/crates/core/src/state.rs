//! Turning decoder outputs into per-turn dialogue states.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_none_token, DialogueState, NONE_VALUE};
use crate::error::{Error, Result};
use crate::prompting::{parse_sequential, ExampleKey, SegmentTokens};
use crate::schema::{Schema, SlotKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TurnPrediction {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub state: DialogueState,
    /// Sequential mode only; zero otherwise.
    pub malformed_segments: usize,
}

impl TurnPrediction {
    pub fn turn_id(&self) -> String {
        format!("{}|{}", self.dialogue_id, self.turn_index)
    }
}

/// Groups values by turn, preserving first-appearance order of turns.
struct TurnGroups {
    order: Vec<(String, usize)>,
    states: HashMap<(String, usize), PendingTurn>,
}

#[derive(Default)]
struct PendingTurn {
    state: DialogueState,
    seen: BTreeSet<SlotKey>,
    malformed: usize,
    answered: bool,
}

impl TurnGroups {
    fn new() -> Self {
        TurnGroups {
            order: Vec::new(),
            states: HashMap::new(),
        }
    }

    fn entry(&mut self, dialogue_id: &str, turn: usize) -> &mut PendingTurn {
        let id = (dialogue_id.to_string(), turn);
        if !self.states.contains_key(&id) {
            self.order.push(id.clone());
        }
        self.states.entry(id).or_default()
    }

    fn finish(mut self) -> Vec<TurnPrediction> {
        self.order
            .into_iter()
            .map(|id| {
                let pending = self.states.remove(&id).expect("grouped turn");
                TurnPrediction {
                    dialogue_id: id.0,
                    turn_index: id.1,
                    state: pending.state,
                    malformed_segments: pending.malformed,
                }
            })
            .collect()
    }
}

/// Builds one state per turn from per-pair outputs. Outputs equal to "none"
/// (trimmed, any case) are dropped; everything else is stored verbatim.
/// Every turn must have an output for every schema pair.
pub fn assemble_independent(responses: &[(ExampleKey, String)], schema: &Schema) -> Result<Vec<TurnPrediction>> {
    let mut groups = TurnGroups::new();
    for (key, output) in responses {
        let pair = key
            .pair
            .as_ref()
            .ok_or_else(|| Error::Assembly(format!("response {key} has no (domain, slot)")))?;
        if !schema.contains(pair) {
            return Err(Error::Assembly(format!(
                "response {key} names a pair outside the schema"
            )));
        }
        let pending = groups.entry(&key.dialogue_id, key.turn_index);
        if !pending.seen.insert(pair.clone()) {
            return Err(Error::Assembly(format!("duplicate response for {key}")));
        }
        if !is_none_token(output) {
            pending
                .state
                .insert_value(pair.clone(), output.clone())
                .map_err(|e| Error::Assembly(e.to_string()))?;
        }
    }
    let expected = schema.num_pairs();
    let mut gaps = Vec::new();
    for id in &groups.order {
        let seen = &groups.states[id].seen;
        if seen.len() != expected {
            gaps.extend(
                schema
                    .keys()
                    .filter(|k| !seen.contains(k))
                    .map(|k| format!("{}|{}|{}|{}", id.0, id.1, k.domain, k.slot)),
            );
        }
    }
    if !gaps.is_empty() {
        let shown: Vec<_> = gaps.iter().take(20).cloned().collect();
        return Err(Error::Assembly(format!(
            "{} missing (turn, domain, slot) responses: {}{}",
            gaps.len(),
            shown.join(", "),
            if gaps.len() > shown.len() { ", ..." } else { "" }
        )));
    }
    Ok(groups.finish())
}

/// Parses one triplet-sequence output per turn.
pub fn assemble_sequential(
    responses: &[(ExampleKey, String)],
    schema: &Schema,
    tokens: &SegmentTokens,
) -> Result<Vec<TurnPrediction>> {
    let mut groups = TurnGroups::new();
    for (key, output) in responses {
        let parsed = parse_sequential(output, schema, tokens);
        let pending = groups.entry(&key.dialogue_id, key.turn_index);
        if pending.answered {
            return Err(Error::Assembly(format!("duplicate response for turn {key}")));
        }
        pending.answered = true;
        pending.state = parsed.state;
        pending.malformed = parsed.malformed_segments;
    }
    Ok(groups.finish())
}

/// One line of a predictions file. Rows without a pair only mark a turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub domain: Option<String>,
    pub slot: Option<String>,
    pub value: String,
}

/// Writes every schema pair for every turn, with "none" for absent pairs.
pub fn write_predictions(path: impl AsRef<Path>, predictions: &[TurnPrediction], schema: &Schema) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for p in predictions {
        for key in schema.keys() {
            let row = PredictionRow {
                dialogue_id: p.dialogue_id.clone(),
                turn_index: p.turn_index,
                value: p.state.value(&key).unwrap_or(NONE_VALUE).to_string(),
                domain: Some(key.domain),
                slot: Some(key.slot),
            };
            serde_json::to_writer(&mut writer, &row).expect("row serializes");
            writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads a predictions file; "none" rows may be present or omitted.
pub fn read_predictions(path: impl AsRef<Path>, schema: &Schema) -> Result<Vec<TurnPrediction>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut groups = TurnGroups::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = |message: String| Error::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let row: PredictionRow = serde_json::from_str(&line).map_err(|e| record(e.to_string()))?;
        let state = &mut groups.entry(&row.dialogue_id, row.turn_index).state;
        let (Some(domain), Some(slot)) = (row.domain, row.slot) else {
            continue;
        };
        let key = SlotKey::new(domain, slot);
        if !schema.contains(&key) {
            return Err(record(format!("pair {key} is not in the schema")));
        }
        if !is_none_token(&row.value) {
            state.insert_value(key, row.value).map_err(|e| record(e.to_string()))?;
        }
    }
    Ok(groups.finish())
}
