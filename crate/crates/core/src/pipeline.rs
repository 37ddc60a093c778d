//! End-to-end runs: preprocess, decode, evaluate, compare and stats.
//!
//! Every stage reads its inputs from disk and writes its outputs to disk, so
//! runs can be resumed, diffed and reproduced from the same configuration.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::{corpus_hash, corpus_stats, load_corpus, CorpusStats, Dialogue, TurnUnit};
use crate::decoders::{
    decode_batch, Backend, DecodeRequest, Endpoint, ExtractiveBackend, Gazetteer, OracleBackend, RemoteBackend,
    RemoteConfig, DEFAULT_MAX_OUTPUT_TOKENS,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    compare_runs, jga, summary_table, write_report, Aggregation, EvalOptions, EvalReport, MatchMode, ReportMetadata,
    RunDiff, FUZZY_THRESHOLD,
};
use crate::prompting::{
    categorical_target_violations, expand_examples, read_examples, segment_token_collisions, write_examples,
    ExampleKey, Mode, PromptExample, SegmentTokens,
};
use crate::schema::{parse_schema, DescriptionConfig, DescriptionTable, Provenance, Schema};
use crate::state::{assemble_independent, assemble_sequential, read_predictions, write_predictions, TurnPrediction};

/// Environment variable consulted when no endpoint is configured.
pub const ENDPOINT_ENV: &str = "DSTKIT_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Replays the gold targets stored in the examples file.
    Oracle,
    /// String-matching baseline; independent mode only.
    Extractive,
    /// External model service.
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oracle" => Ok(BackendKind::Oracle),
            "extractive" => Ok(BackendKind::Extractive),
            "remote" => Ok(BackendKind::Remote),
            other => Err(Error::Config(format!(
                "unknown backend '{other}' (expected oracle, extractive or remote)"
            ))),
        }
    }
}

/// Everything a run depends on.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: Provenance,
    pub schema_path: PathBuf,
    /// Evaluation dialogues: a file or a directory.
    pub dialogues_path: PathBuf,
    /// Optional description overrides, one `domain<TAB>slot<TAB>text` per line.
    pub descriptions_path: Option<PathBuf>,
    /// Training dialogues; feeds the extractive gazetteer.
    pub train_dialogues_path: Option<PathBuf>,
    pub mode: Mode,
    pub descriptions: DescriptionConfig,
    /// `None` means the dataset default.
    pub excluded_domains: Option<Vec<String>>,
    pub tokens: SegmentTokens,
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub max_output_tokens: usize,
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn new(dataset: Provenance, schema_path: impl Into<PathBuf>, dialogues_path: impl Into<PathBuf>) -> Self {
        RunConfig {
            dataset,
            schema_path: schema_path.into(),
            dialogues_path: dialogues_path.into(),
            descriptions_path: None,
            train_dialogues_path: None,
            mode: Mode::Independent,
            descriptions: DescriptionConfig::names_only(),
            excluded_domains: None,
            tokens: SegmentTokens::default(),
            backend: BackendKind::Oracle,
            endpoint: None,
            max_in_flight: 8,
            timeout: Duration::from_secs(60),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            eval: EvalOptions::default(),
        }
    }

    pub fn excluded(&self) -> Vec<String> {
        match &self.excluded_domains {
            Some(list) => list.clone(),
            None => self.dataset.default_exclusions().into_iter().collect(),
        }
    }

    /// Endpoint from the configuration, falling back to the environment.
    pub fn resolved_endpoint(&self) -> Result<Endpoint> {
        let raw = match &self.endpoint {
            Some(e) => e.clone(),
            None => std::env::var(ENDPOINT_ENV)
                .map_err(|_| Error::Config(format!("the remote backend needs an endpoint (flag or {ENDPOINT_ENV})")))?,
        };
        raw.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.tokens.validate()?;
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::Config("max_output_tokens must be at least 1".into()));
        }
        if self.backend == BackendKind::Extractive && self.mode == Mode::Sequential {
            return Err(Error::Config(
                "the extractive backend supports independent mode only".into(),
            ));
        }
        if self.backend == BackendKind::Remote {
            self.resolved_endpoint()?;
        }
        Ok(())
    }

    /// The schema as the run sees it: excluded domains removed and
    /// descriptions resolved.
    pub fn load_schema(&self) -> Result<Schema> {
        let raw = parse_schema(&self.schema_path, self.dataset)?;
        let filtered = raw.filter_domains(&self.excluded());
        let table = match &self.descriptions_path {
            Some(p) => Some(DescriptionTable::from_tsv(p)?),
            None => None,
        };
        filtered.resolve_descriptions(table.as_ref(), &self.descriptions)
    }

    pub fn load_dialogues(&self, schema: &Schema) -> Result<Vec<Dialogue>> {
        load_dialogues_at(&self.dialogues_path, schema)
    }
}

fn load_dialogues_at(path: &Path, schema: &Schema) -> Result<Vec<Dialogue>> {
    // Loader warnings are already logged where they arise.
    let parsed = load_corpus(path, schema)?;
    if parsed.dialogues.is_empty() {
        return Err(Error::Corpus {
            dialogue_id: String::new(),
            message: format!("no dialogues found under {}", path.display()),
        });
    }
    Ok(parsed.dialogues)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessSummary {
    pub dialogues: usize,
    pub examples: usize,
    /// SHA-256 of the examples file bytes.
    pub sha256: String,
    pub categorical_violations: usize,
    pub segment_token_collisions: usize,
}

/// Expands the corpus into an examples file.
pub fn cmd_preprocess(config: &RunConfig, out: impl AsRef<Path>) -> Result<PreprocessSummary> {
    config.tokens.validate()?;
    let schema = config.load_schema()?;
    let dialogues = config.load_dialogues(&schema)?;
    let collisions = segment_token_collisions(&dialogues, &config.tokens);
    for (id, pos) in &collisions {
        log::warn!("dialogue {id}: utterance {pos} contains a segment token");
    }
    let examples: Vec<PromptExample> =
        expand_examples(&dialogues, &schema, config.mode, &config.tokens, &config.descriptions).collect();
    let violations = categorical_target_violations(&examples, &schema);
    let (count, sha256) = write_examples(out, &examples)?;
    Ok(PreprocessSummary {
        dialogues: dialogues.len(),
        examples: count,
        sha256,
        categorical_violations: violations,
        segment_token_collisions: collisions.len(),
    })
}

/// Builds the backend named by the configuration.
pub fn build_backend(config: &RunConfig, schema: &Schema, examples: &[PromptExample]) -> Result<Box<dyn Backend>> {
    Ok(match config.backend {
        BackendKind::Oracle => Box::new(OracleBackend::from_examples(examples)),
        BackendKind::Extractive => {
            let gazetteer = match &config.train_dialogues_path {
                Some(p) => Gazetteer::from_dialogues(&load_dialogues_at(p, schema)?),
                None => {
                    log::warn!("no training dialogues given; non-categorical slots will stay empty");
                    Gazetteer::default()
                }
            };
            Box::new(
                ExtractiveBackend::new(schema.clone())
                    .with_gazetteer(gazetteer)
                    .with_tokens(config.tokens.clone()),
            )
        }
        BackendKind::Remote => {
            let mut remote = RemoteConfig::new(config.resolved_endpoint()?);
            remote.max_in_flight = config.max_in_flight;
            remote.timeout = config.timeout;
            Box::new(RemoteBackend::new(remote)?)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeSummary {
    pub requests: usize,
    /// Requests answered by an earlier, interrupted run.
    pub resumed: usize,
    pub decoded: usize,
    pub turns: usize,
    pub malformed_segments: usize,
    pub journal: PathBuf,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct JournalHeader {
    examples_sha256: String,
    /// The kind only, so a service restarted elsewhere can still resume.
    backend: BackendKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalEntry {
    id: String,
    output: String,
}

/// Where `cmd_decode` records completed requests for `predictions`.
pub fn journal_path(predictions: &Path) -> PathBuf {
    let mut name = predictions.as_os_str().to_owned();
    name.push(".journal");
    PathBuf::from(name)
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(crate::schema::hex_digest(&bytes))
}

/// Completed outputs from an earlier run, if its header matches.
fn read_journal(path: &Path, header: &JournalHeader) -> Result<HashMap<String, String>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut lines = BufReader::new(file).lines();
    let Some(first) = lines.next() else {
        return Ok(HashMap::new());
    };
    let first = first.map_err(|e| Error::io(path, e))?;
    let found: JournalHeader = serde_json::from_str(&first).map_err(|e| Error::json(path, e))?;
    if &found != header {
        return Err(Error::Config(format!(
            "journal {} belongs to a different run (backend {:?}, examples {}); remove it or start fresh",
            path.display(),
            found.backend,
            found.examples_sha256
        )));
    }
    let mut done = HashMap::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        // A torn final line from an interrupted write is simply redone.
        match serde_json::from_str::<JournalEntry>(&line) {
            Ok(entry) => {
                done.insert(entry.id, entry.output);
            }
            Err(_) => log::warn!("{}: ignoring unreadable journal line", path.display()),
        }
    }
    Ok(done)
}

/// Decodes every example and writes per-turn predictions.
///
/// Completed outputs are appended to `<predictions>.journal` as they arrive.
/// A failed run leaves the journal behind and a rerun with the same examples
/// and backend only decodes what is missing. With `fresh`, any journal is
/// discarded first.
pub fn cmd_decode(
    config: &RunConfig,
    examples_path: impl AsRef<Path>,
    predictions_path: impl AsRef<Path>,
    fresh: bool,
) -> Result<DecodeSummary> {
    config.validate()?;
    let (examples_path, predictions_path) = (examples_path.as_ref(), predictions_path.as_ref());
    let schema = config.load_schema()?;
    let examples = read_examples(examples_path)?;
    if let Some(bad) = examples.iter().find(|e| e.mode != config.mode) {
        return Err(Error::Config(format!(
            "examples file holds {} examples but the run is configured for {} mode",
            bad.mode, config.mode
        )));
    }
    let backend = build_backend(config, &schema, &examples)?;
    let header = JournalHeader {
        examples_sha256: file_sha256(examples_path)?,
        backend: config.backend,
    };
    let journal = journal_path(predictions_path);
    if fresh && journal.exists() {
        std::fs::remove_file(&journal).map_err(|e| Error::io(&journal, e))?;
    }
    let mut done = read_journal(&journal, &header)?;
    let resumed = examples
        .iter()
        .filter(|e| done.contains_key(&e.key().to_string()))
        .count();
    if resumed > 0 {
        log::info!("resuming: {resumed} of {} requests already decoded", examples.len());
    }

    let pending: Vec<DecodeRequest> = examples
        .iter()
        .map(|e| (e.key().to_string(), e))
        .filter(|(id, _)| !done.contains_key(id))
        .map(|(id, e)| DecodeRequest {
            request_id: id,
            input_text: e.input_text.clone(),
            max_output_tokens: config.max_output_tokens,
        })
        .collect();

    let new_journal = !journal.exists() || std::fs::metadata(&journal).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&journal)
        .map_err(|e| Error::io(&journal, e))?;
    let mut writer = BufWriter::new(file);
    if new_journal {
        serde_json::to_writer(&mut writer, &header).expect("header serializes");
        writer.write_all(b"\n").map_err(|e| Error::io(&journal, e))?;
    }
    // Small chunks keep the journal close to what has actually completed.
    let chunk = config.max_in_flight * 8;
    for batch in pending.chunks(chunk) {
        let responses = decode_batch(backend.as_ref(), batch)?;
        for r in responses {
            let entry = JournalEntry {
                id: r.request_id,
                output: r.output_text,
            };
            serde_json::to_writer(&mut writer, &entry).expect("entry serializes");
            writer.write_all(b"\n").map_err(|e| Error::io(&journal, e))?;
            done.insert(entry.id, entry.output);
        }
        writer.flush().map_err(|e| Error::io(&journal, e))?;
    }

    let mut responses = Vec::with_capacity(examples.len());
    for e in &examples {
        let key = e.key();
        let output = done.remove(&key.to_string()).expect("every example decoded");
        responses.push((key, output));
    }
    let predictions = assemble(&responses, &schema, config)?;
    write_predictions(predictions_path, &predictions, &schema)?;
    Ok(DecodeSummary {
        requests: examples.len(),
        resumed,
        decoded: pending.len(),
        turns: predictions.len(),
        malformed_segments: predictions.iter().map(|p| p.malformed_segments).sum(),
        journal,
    })
}

fn assemble(responses: &[(ExampleKey, String)], schema: &Schema, config: &RunConfig) -> Result<Vec<TurnPrediction>> {
    match config.mode {
        Mode::Independent => assemble_independent(responses, schema),
        Mode::Sequential => assemble_sequential(responses, schema, &config.tokens),
    }
}

/// Scores a predictions file against the configured dialogues.
pub fn evaluate(config: &RunConfig, predictions_path: impl AsRef<Path>) -> Result<(EvalReport, ReportMetadata)> {
    let schema = config.load_schema()?;
    let dialogues = config.load_dialogues(&schema)?;
    let predictions = read_predictions(predictions_path, &schema)?;
    let report = jga(&predictions, &dialogues, &schema, config.eval)?;
    let metadata = ReportMetadata {
        schema_hash: schema.content_hash(),
        corpus_hash: corpus_hash(&dialogues),
        match_mode: config.eval.match_mode,
        fuzzy_threshold: FUZZY_THRESHOLD,
        aggregation: config.eval.aggregation,
        generated_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    Ok((report, metadata))
}

/// Writes the report JSON to `report_path` and returns the summary table.
pub fn cmd_evaluate(
    config: &RunConfig,
    predictions_path: impl AsRef<Path>,
    report_path: impl AsRef<Path>,
) -> Result<(EvalReport, String)> {
    let (report, metadata) = evaluate(config, &predictions_path)?;
    write_report(report_path, &report, &metadata)?;
    let name = predictions_path.as_ref().display().to_string();
    let table = summary_table(&[(&name, &report)]);
    Ok((report, table))
}

/// Evaluates two predictions files and lists the turns they disagree on.
pub fn cmd_compare(
    config: &RunConfig,
    a: impl AsRef<Path>,
    b: impl AsRef<Path>,
) -> Result<(EvalReport, EvalReport, RunDiff)> {
    let (ra, _) = evaluate(config, a)?;
    let (rb, _) = evaluate(config, b)?;
    let diff = compare_runs(&ra, &rb)?;
    Ok((ra, rb, diff))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemaCounts {
    pub domains: usize,
    pub slots: usize,
    pub categorical: usize,
    pub non_categorical: usize,
}

impl SchemaCounts {
    pub fn of(schema: &Schema) -> Self {
        let (categorical, non_categorical) = schema.slot_type_counts();
        SchemaCounts {
            domains: schema.domains.len(),
            slots: schema.num_pairs(),
            categorical,
            non_categorical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsSummary {
    pub dataset: Provenance,
    pub corpus: CorpusStats,
    pub schema_all: SchemaCounts,
    pub schema_evaluated: SchemaCounts,
    pub excluded_domains: Vec<String>,
}

/// Corpus and schema counts, before and after domain exclusion.
pub fn cmd_stats(config: &RunConfig) -> Result<StatsSummary> {
    let raw = parse_schema(&config.schema_path, config.dataset)?;
    let excluded = config.excluded();
    let filtered = raw.filter_domains(&excluded);
    let dialogues = load_dialogues_at(&config.dialogues_path, &raw)?;
    Ok(StatsSummary {
        dataset: config.dataset,
        corpus: corpus_stats(&dialogues, TurnUnit::for_provenance(config.dataset)),
        schema_all: SchemaCounts::of(&raw),
        schema_evaluated: SchemaCounts::of(&filtered),
        excluded_domains: excluded,
    })
}

/// Parses the `--match-mode` and `--aggregation` style flags together.
pub fn eval_options(match_mode: &str, aggregation: &str) -> Result<EvalOptions> {
    let match_mode: MatchMode = match_mode.parse()?;
    let aggregation: Aggregation = aggregation.parse()?;
    Ok(EvalOptions {
        match_mode,
        aggregation,
    })
}
