//! Naive reference scorer written from the metric definitions. It shares
//! no code with the library's evaluator.

use dstkit::corpus::{Dialogue, DialogueState, SlotValue};
use dstkit::schema::{Schema, SlotKey};
use dstkit::state::TurnPrediction;

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

pub fn oracle_value_ok(pred: &str, gold: &SlotValue, categorical: bool, fuzzy: bool) -> bool {
    let p = pred.trim().to_lowercase();
    gold.alternatives().iter().any(|g| {
        let g = g.trim().to_lowercase();
        if p == g {
            return true;
        }
        if !fuzzy || categorical {
            return false;
        }
        let longest = p.chars().count().max(g.chars().count());
        longest > 0 && 1.0 - levenshtein(&p, &g) as f64 / longest as f64 >= 0.95
    })
}

/// Whether a turn is correct over the pairs selected by `keep`.
pub fn oracle_turn_ok(
    pred: &DialogueState,
    gold: &DialogueState,
    schema: &Schema,
    fuzzy: bool,
    keep: &dyn Fn(&str, bool) -> bool,
) -> bool {
    schema
        .pairs()
        .filter(|(d, s)| keep(&d.name, s.is_categorical))
        .all(|(d, s)| {
            let key = SlotKey::new(&d.name, &s.name);
            match (pred.get(&key), gold.get(&key)) {
                (None, None) => true,
                (Some(p), Some(g)) => oracle_value_ok(p.primary(), g, s.is_categorical, fuzzy),
                _ => false,
            }
        })
}

pub fn gold_of<'a>(gold: &'a [Dialogue], p: &TurnPrediction) -> &'a DialogueState {
    gold.iter()
        .find(|d| d.dialogue_id == p.dialogue_id)
        .unwrap()
        .gold_state_at(p.turn_index)
        .unwrap()
}

pub fn oracle_rate(
    gold: &[Dialogue],
    preds: &[TurnPrediction],
    schema: &Schema,
    fuzzy: bool,
    keep: &dyn Fn(&str, bool) -> bool,
) -> f64 {
    let ok = preds
        .iter()
        .filter(|p| oracle_turn_ok(&p.state, gold_of(gold, p), schema, fuzzy, keep))
        .count();
    ok as f64 / preds.len() as f64
}
