//! Joint goal accuracy, slot-type and domain breakdowns, error categories and
//! run comparison.
//!
//! A turn is correct when every `(domain, slot)` pair of the schema agrees
//! between prediction and gold: both absent, or both present with matching
//! values. Breakdowns apply the same rule to a subset of pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, DialogueState};
use crate::error::{Error, Result};
use crate::schema::{Schema, SlotDef, SlotKey};
use crate::state::TurnPrediction;

/// Edit-similarity threshold for fuzzy non-categorical matching.
pub const FUZZY_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    Fuzzy,
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(MatchMode::Exact),
            "fuzzy" => Ok(MatchMode::Fuzzy),
            other => Err(Error::Config(format!("unknown match mode '{other}'"))),
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::Exact => "exact",
            MatchMode::Fuzzy => "fuzzy",
        })
    }
}

/// Unit over which accuracy is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One unit per user turn, over the whole state.
    PerTurn,
    /// One unit per (turn, domain) where the domain is active in gold or
    /// prediction.
    PerFrame,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "per_turn" | "turn" => Ok(Aggregation::PerTurn),
            "per_frame" | "frame" => Ok(Aggregation::PerFrame),
            other => Err(Error::Config(format!("unknown aggregation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub match_mode: MatchMode,
    pub aggregation: Aggregation,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            match_mode: MatchMode::Exact,
            aggregation: Aggregation::PerTurn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCategory {
    MissedSlot,
    SpuriousSlot,
    WrongValue,
    Mixed,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 4] = [
        ErrorCategory::MissedSlot,
        ErrorCategory::SpuriousSlot,
        ErrorCategory::WrongValue,
        ErrorCategory::Mixed,
    ];

    /// Category of an erroneous turn from the kinds of disagreement it shows.
    pub fn classify(missed: bool, spurious: bool, wrong: bool) -> Option<Self> {
        match (missed, spurious, wrong) {
            (false, false, false) => None,
            (true, false, false) => Some(ErrorCategory::MissedSlot),
            (false, true, false) => Some(ErrorCategory::SpuriousSlot),
            (false, false, true) => Some(ErrorCategory::WrongValue),
            _ => Some(ErrorCategory::Mixed),
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorCategory::MissedSlot => "MISSED_SLOT",
            ErrorCategory::SpuriousSlot => "SPURIOUS_SLOT",
            ErrorCategory::WrongValue => "WRONG_VALUE",
            ErrorCategory::Mixed => "MIXED",
        })
    }
}

fn fold(text: &str) -> String {
    text.trim().to_lowercase()
}

/// Whether `predicted` matches any gold alternative. Exact matching ignores
/// case and surrounding whitespace; fuzzy matching applies to
/// non-categorical slots only.
pub fn value_match(predicted: &str, gold_alternatives: &[String], slot: &SlotDef, mode: MatchMode) -> bool {
    let predicted = fold(predicted);
    gold_alternatives.iter().any(|alt| {
        let alt = fold(alt);
        if alt == predicted {
            return true;
        }
        mode == MatchMode::Fuzzy
            && !slot.is_categorical
            && strsim::normalized_levenshtein(&predicted, &alt) >= FUZZY_THRESHOLD
    })
}

/// Per-turn scoring detail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnOutcome {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub correct: bool,
    pub cat_correct: bool,
    pub noncat_correct: bool,
    pub domain_correct: BTreeMap<String, bool>,
    pub missed: Vec<SlotKey>,
    pub spurious: Vec<SlotKey>,
    pub wrong_value: Vec<SlotKey>,
    pub category: Option<ErrorCategory>,
    pub predicted: DialogueState,
    pub gold: DialogueState,
}

impl TurnOutcome {
    pub fn turn_id(&self) -> String {
        format!("{}|{}", self.dialogue_id, self.turn_index)
    }

    /// Domains active in gold or prediction.
    fn active_domains(&self) -> BTreeSet<&str> {
        self.gold
            .keys()
            .chain(self.predicted.keys())
            .map(|k| k.domain.as_str())
            .collect()
    }
}

/// Compares one predicted state with its gold state over every schema pair.
pub fn score_turn(
    dialogue_id: &str,
    turn_index: usize,
    predicted: &DialogueState,
    gold: &DialogueState,
    schema: &Schema,
    mode: MatchMode,
) -> TurnOutcome {
    let mut missed = Vec::new();
    let mut spurious = Vec::new();
    let mut wrong_value = Vec::new();
    let mut cat_correct = true;
    let mut noncat_correct = true;
    let mut domain_correct: BTreeMap<String, bool> = schema.domains.iter().map(|d| (d.name.clone(), true)).collect();
    for (domain, slot) in schema.pairs() {
        let key = SlotKey::new(&domain.name, &slot.name);
        let agrees = match (predicted.get(&key), gold.get(&key)) {
            (None, None) => true,
            (Some(_), None) => {
                spurious.push(key);
                false
            }
            (None, Some(_)) => {
                missed.push(key);
                false
            }
            (Some(p), Some(g)) => {
                let ok = value_match(p.primary(), g.alternatives(), slot, mode);
                if !ok {
                    wrong_value.push(key);
                }
                ok
            }
        };
        if !agrees {
            if slot.is_categorical {
                cat_correct = false;
            } else {
                noncat_correct = false;
            }
            domain_correct.insert(domain.name.clone(), false);
        }
    }
    let category = ErrorCategory::classify(!missed.is_empty(), !spurious.is_empty(), !wrong_value.is_empty());
    TurnOutcome {
        dialogue_id: dialogue_id.to_string(),
        turn_index,
        correct: category.is_none(),
        cat_correct,
        noncat_correct,
        domain_correct,
        missed,
        spurious,
        wrong_value,
        category,
        predicted: predicted.clone(),
        gold: gold.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryStats {
    pub count: usize,
    /// Share of all erroneous turns.
    pub fraction: f64,
    /// Up to [`EXAMPLES_PER_CATEGORY`] turn ids.
    pub examples: Vec<String>,
}

pub const EXAMPLES_PER_CATEGORY: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub jga: f64,
    pub cat_jga: f64,
    pub noncat_jga: f64,
    pub per_domain_jga: BTreeMap<String, f64>,
    pub turns_evaluated: usize,
    /// Units averaged over; equals `turns_evaluated` for per-turn aggregation.
    pub units_evaluated: usize,
    pub error_counts: BTreeMap<ErrorCategory, usize>,
    pub errors: BTreeMap<ErrorCategory, CategoryStats>,
    pub options: EvalOptions,
    pub turns: Vec<TurnOutcome>,
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Gold states keyed by `(dialogue_id, turn_index)`.
pub fn gold_index(dialogues: &[Dialogue]) -> HashMap<(String, usize), &DialogueState> {
    dialogues
        .iter()
        .flat_map(|d| {
            (1..=d.num_user_turns())
                .map(move |t| ((d.dialogue_id.clone(), t), d.gold_state_at(t).expect("turn in range")))
        })
        .collect()
}

/// Scores every turn. Requires exactly one prediction per gold user turn.
pub fn score_turns(
    predictions: &[TurnPrediction],
    gold: &[Dialogue],
    schema: &Schema,
    mode: MatchMode,
) -> Result<Vec<TurnOutcome>> {
    let index = gold_index(gold);
    let mut seen = BTreeSet::new();
    let mut outcomes = Vec::with_capacity(predictions.len());
    for p in predictions {
        let id = (p.dialogue_id.clone(), p.turn_index);
        let gold_state = index
            .get(&id)
            .ok_or_else(|| Error::Eval(format!("prediction for {} has no gold turn", p.turn_id())))?;
        if !seen.insert(id) {
            return Err(Error::Eval(format!("duplicate prediction for {}", p.turn_id())));
        }
        outcomes.push(score_turn(
            &p.dialogue_id,
            p.turn_index,
            &p.state,
            gold_state,
            schema,
            mode,
        ));
    }
    if seen.len() != index.len() {
        let mut missing: Vec<String> = index
            .keys()
            .filter(|k| !seen.contains(*k))
            .map(|(d, t)| format!("{d}|{t}"))
            .collect();
        missing.sort();
        missing.truncate(20);
        return Err(Error::Eval(format!(
            "{} gold turns have no prediction (e.g. {})",
            index.len() - seen.len(),
            missing.join(", ")
        )));
    }
    Ok(outcomes)
}

/// Joint goal accuracy with breakdowns and error categories.
pub fn jga(
    predictions: &[TurnPrediction],
    gold: &[Dialogue],
    schema: &Schema,
    options: EvalOptions,
) -> Result<EvalReport> {
    let outcomes = score_turns(predictions, gold, schema, options.match_mode)?;
    Ok(report_from_outcomes(outcomes, schema, options))
}

pub fn report_from_outcomes(outcomes: Vec<TurnOutcome>, schema: &Schema, options: EvalOptions) -> EvalReport {
    let turns = outcomes.len();
    let (jga, cat_jga, noncat_jga, units) = match options.aggregation {
        Aggregation::PerTurn => (
            fraction(outcomes.iter().filter(|o| o.correct).count(), turns),
            fraction(outcomes.iter().filter(|o| o.cat_correct).count(), turns),
            fraction(outcomes.iter().filter(|o| o.noncat_correct).count(), turns),
            turns,
        ),
        Aggregation::PerFrame => {
            let (mut units, mut ok, mut cat_ok, mut noncat_ok) = (0, 0, 0, 0);
            for o in &outcomes {
                for domain in o.active_domains() {
                    units += 1;
                    ok += usize::from(o.domain_correct.get(domain).copied().unwrap_or(true));
                    let slots_ok = |want_cat: bool| {
                        !o.missed.iter().chain(&o.spurious).chain(&o.wrong_value).any(|k| {
                            k.domain == domain && schema.slot_for(k).is_some_and(|s| s.is_categorical == want_cat)
                        })
                    };
                    cat_ok += usize::from(slots_ok(true));
                    noncat_ok += usize::from(slots_ok(false));
                }
            }
            (
                fraction(ok, units),
                fraction(cat_ok, units),
                fraction(noncat_ok, units),
                units,
            )
        }
    };
    let per_domain_jga = schema
        .domains
        .iter()
        .map(|d| {
            let correct = outcomes
                .iter()
                .filter(|o| o.domain_correct.get(&d.name).copied().unwrap_or(true))
                .count();
            (d.name.clone(), fraction(correct, turns))
        })
        .collect();
    let errors = categorize_errors(&outcomes);
    EvalReport {
        jga,
        cat_jga,
        noncat_jga,
        per_domain_jga,
        turns_evaluated: turns,
        units_evaluated: units,
        error_counts: errors.iter().map(|(c, s)| (*c, s.count)).collect(),
        errors,
        options,
        turns: outcomes,
    }
}

/// Counts, shares and example turn ids per error category.
pub fn categorize_errors(outcomes: &[TurnOutcome]) -> BTreeMap<ErrorCategory, CategoryStats> {
    let erroneous = outcomes.iter().filter(|o| !o.correct).count();
    ErrorCategory::ALL
        .iter()
        .map(|&category| {
            let hits: Vec<&TurnOutcome> = outcomes.iter().filter(|o| o.category == Some(category)).collect();
            (
                category,
                CategoryStats {
                    count: hits.len(),
                    fraction: fraction(hits.len(), erroneous),
                    examples: hits.iter().take(EXAMPLES_PER_CATEGORY).map(|o| o.turn_id()).collect(),
                },
            )
        })
        .collect()
}

/// One pair on which two runs disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotDiff {
    pub domain: String,
    pub slot: String,
    pub gold: Option<String>,
    pub a: Option<String>,
    pub b: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TurnDiff {
    pub turn_id: String,
    pub gold: String,
    pub a: String,
    pub b: String,
    pub slots: Vec<SlotDiff>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunDiff {
    /// Turns correct in A but not in B.
    pub a_only_correct: Vec<TurnDiff>,
    /// Turns correct in B but not in A.
    pub b_only_correct: Vec<TurnDiff>,
}

impl RunDiff {
    pub fn is_empty(&self) -> bool {
        self.a_only_correct.is_empty() && self.b_only_correct.is_empty()
    }
}

fn turn_diff(a: &TurnOutcome, b: &TurnOutcome) -> TurnDiff {
    let keys: BTreeSet<&SlotKey> = a
        .predicted
        .keys()
        .chain(b.predicted.keys())
        .chain(a.gold.keys())
        .collect();
    let slots = keys
        .into_iter()
        .filter_map(|k| {
            let (va, vb) = (a.predicted.value(k), b.predicted.value(k));
            (va != vb).then(|| SlotDiff {
                domain: k.domain.clone(),
                slot: k.slot.clone(),
                gold: a.gold.value(k).map(str::to_string),
                a: va.map(str::to_string),
                b: vb.map(str::to_string),
            })
        })
        .collect();
    TurnDiff {
        turn_id: a.turn_id(),
        gold: a.gold.triplets(),
        a: a.predicted.triplets(),
        b: b.predicted.triplets(),
        slots,
    }
}

/// Turns one run gets right and the other does not, with the disagreeing
/// pairs of each.
pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<RunDiff> {
    let index_b: HashMap<String, &TurnOutcome> = b.turns.iter().map(|o| (o.turn_id(), o)).collect();
    if index_b.len() != a.turns.len() {
        return Err(Error::Eval(format!(
            "runs cover different turns ({} vs {})",
            a.turns.len(),
            b.turns.len()
        )));
    }
    let mut diff = RunDiff::default();
    for ta in &a.turns {
        let tb = index_b
            .get(&ta.turn_id())
            .ok_or_else(|| Error::Eval(format!("turn {} is missing from run B", ta.turn_id())))?;
        match (ta.correct, tb.correct) {
            (true, false) => diff.a_only_correct.push(turn_diff(ta, tb)),
            (false, true) => diff.b_only_correct.push(turn_diff(ta, tb)),
            _ => {}
        }
    }
    Ok(diff)
}

/// Plain-text rows in the layout `Run | JGA | CAT | NON-CAT`, percentages.
pub fn summary_table(runs: &[(&str, &EvalReport)]) -> String {
    let width = runs.iter().map(|(n, _)| n.len()).max().unwrap_or(3).max(3);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>7}", "Run", "JGA", "CAT", "NON-CAT");
    for (name, r) in runs {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.1}  {:>6.1}  {:>7.1}",
            name,
            100.0 * r.jga,
            100.0 * r.cat_jga,
            100.0 * r.noncat_jga
        );
    }
    if let [(_, first), ..] = runs {
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<width$}  {:>6}", "Domain", "JGA");
        for (name, score) in &first.per_domain_jga {
            let _ = writeln!(out, "{:<width$}  {:>6.1}", name, 100.0 * score);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}", "Error", "count", "share");
        for (cat, stats) in &first.errors {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>6.1}",
                cat.to_string(),
                stats.count,
                100.0 * stats.fraction
            );
        }
    }
    out
}

/// Metadata written next to a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub schema_hash: String,
    pub corpus_hash: String,
    pub match_mode: MatchMode,
    pub fuzzy_threshold: f64,
    pub aggregation: Aggregation,
    pub generated_at: u64,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    metadata: &'a ReportMetadata,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn write_report(path: impl AsRef<Path>, report: &EvalReport, metadata: &ReportMetadata) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&ReportFile { metadata, report }).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
