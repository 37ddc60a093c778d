use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use dstkit::evalkit::{summary_table, Aggregation, EvalOptions, MatchMode};
use dstkit::pipeline::{
    cmd_compare, cmd_decode, cmd_evaluate, cmd_preprocess, cmd_stats, BackendKind, RunConfig, ENDPOINT_ENV,
};
use dstkit::prompting::Mode;
use dstkit::schema::{DescriptionConfig, Provenance};
use dstkit::Error;

/// Schema-driven prompting toolkit for generative dialogue state tracking.
#[derive(Parser)]
#[command(name = "dstkit", version)]
struct Cli {
    /// Log verbosity: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn", env = "DSTKIT_LOG")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand dialogues into an examples file.
    Preprocess {
        #[command(flatten)]
        run: RunArgs,
        /// Examples file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode an examples file into per-turn predictions.
    Decode {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        examples: PathBuf,
        /// Predictions file to write; the journal sits next to it.
        #[arg(long)]
        out: PathBuf,
        /// Discard any journal from an earlier run first.
        #[arg(long)]
        fresh: bool,
    },
    /// Score predictions against the gold dialogues.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        predictions: PathBuf,
        /// Report JSON to write.
        #[arg(long)]
        report: PathBuf,
    },
    /// List turns that one predictions file gets right and the other wrong.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Write the full diff as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus and schema statistics.
    Stats {
        #[command(flatten)]
        run: RunArgs,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// multiwoz21, multiwoz22, m2m or custom.
    #[arg(long, default_value = "multiwoz22")]
    dataset: Provenance,
    #[arg(long)]
    schema: PathBuf,
    /// Dialogue file or directory.
    #[arg(long)]
    dialogues: PathBuf,
    #[arg(long, default_value = "independent")]
    mode: Mode,
    /// Comma-separated description parts: domain, slot, values; or all / none.
    #[arg(long, default_value = "none")]
    desc: String,
    /// Description overrides: domain<TAB>slot<TAB>text per line.
    #[arg(long)]
    descriptions: Option<PathBuf>,
    /// Seed for sampling among several candidate descriptions.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated domains to drop; "none" keeps every domain. Defaults
    /// to the dataset convention.
    #[arg(long)]
    exclude: Option<String>,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, default_value = "oracle")]
    backend: BackendKind,
    /// tcp://host:port, unix:/path or http://host:port.
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 8)]
    max_in_flight: usize,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[arg(long, default_value_t = dstkit::decoders::DEFAULT_MAX_OUTPUT_TOKENS)]
    max_tokens: usize,
    /// Training dialogues for the extractive gazetteer.
    #[arg(long)]
    train_dialogues: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// exact or fuzzy.
    #[arg(long, default_value = "exact")]
    match_mode: MatchMode,
    /// per-turn or per-frame.
    #[arg(long, default_value = "per-turn")]
    aggregation: Aggregation,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut config = RunConfig::new(self.dataset, &self.schema, &self.dialogues);
        config.mode = self.mode;
        config.descriptions = DescriptionConfig::from_flags(&self.desc, self.seed)?;
        config.descriptions_path = self.descriptions.clone();
        config.excluded_domains = self.exclude.as_deref().map(|list| {
            if list.trim().eq_ignore_ascii_case("none") {
                Vec::new()
            } else {
                list.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
        });
        Ok(config)
    }
}

impl BackendArgs {
    fn apply(&self, config: &mut RunConfig) {
        config.backend = self.backend;
        config.endpoint = self.endpoint.clone();
        config.max_in_flight = self.max_in_flight;
        config.timeout = Duration::from_secs(self.timeout);
        config.max_output_tokens = self.max_tokens;
        config.train_dialogues_path = self.train_dialogues.clone();
    }
}

impl EvalArgs {
    fn apply(&self, config: &mut RunConfig) {
        config.eval = EvalOptions {
            match_mode: self.match_mode,
            aggregation: self.aggregation,
        };
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Eval(_) | Error::Assembly(_) => 1,
        Error::Decode(_) | Error::Remote { .. } => 3,
        _ => 2,
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Preprocess { run, out } => {
            let config = run.config()?;
            let s = cmd_preprocess(&config, &out)?;
            println!("examples: {}", s.examples);
            println!("sha256: {}", s.sha256);
            if s.categorical_violations > 0 {
                println!("categorical targets outside value sets: {}", s.categorical_violations);
            }
            if s.segment_token_collisions > 0 {
                println!("utterances containing segment tokens: {}", s.segment_token_collisions);
            }
        }
        Command::Decode {
            run,
            backend,
            examples,
            out,
            fresh,
        } => {
            let mut config = run.config()?;
            backend.apply(&mut config);
            let s = cmd_decode(&config, &examples, &out, fresh)?;
            println!(
                "requests: {} (resumed {}, decoded {})",
                s.requests, s.resumed, s.decoded
            );
            println!("turns: {}", s.turns);
            if config.mode == Mode::Sequential {
                println!("malformed segments: {}", s.malformed_segments);
            }
        }
        Command::Evaluate {
            run,
            eval,
            predictions,
            report,
        } => {
            let mut config = run.config()?;
            eval.apply(&mut config);
            let (_, table) = cmd_evaluate(&config, &predictions, &report)?;
            print!("{table}");
        }
        Command::Compare { run, eval, a, b, out } => {
            let mut config = run.config()?;
            eval.apply(&mut config);
            let (ra, rb, diff) = cmd_compare(&config, &a, &b)?;
            let (na, nb) = (a.display().to_string(), b.display().to_string());
            print!("{}", summary_table(&[(&na, &ra), (&nb, &rb)]));
            println!();
            for (label, turns) in [
                ("only A correct", &diff.a_only_correct),
                ("only B correct", &diff.b_only_correct),
            ] {
                println!("{label}: {} turns", turns.len());
                for t in turns {
                    println!("  {}", t.turn_id);
                    println!("    gold: {}", t.gold);
                    println!("    A:    {}", t.a);
                    println!("    B:    {}", t.b);
                }
            }
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&diff).expect("diff serializes");
                std::fs::write(&path, text + "\n").map_err(|e| Error::Io { path, source: e })?;
            }
        }
        Command::Stats { run, json } => {
            let config = run.config()?;
            let s = cmd_stats(&config)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&s).expect("stats serialize"));
            } else {
                println!("dataset:               {}", s.dataset);
                println!("dialogues:             {}", s.corpus.dialogues);
                println!(
                    "total turns:           {} ({:?})",
                    s.corpus.total_turns, s.corpus.turn_unit
                );
                println!("avg turns per dialog:  {:.2}", s.corpus.avg_turns_per_dialogue);
                println!(
                    "avg tokens per turn:   {:.2} ({})",
                    s.corpus.avg_tokens_per_turn, s.corpus.tokenizer
                );
                println!(
                    "schema:                {} domains, {} categorical + {} non-categorical slots",
                    s.schema_all.domains, s.schema_all.categorical, s.schema_all.non_categorical
                );
                println!(
                    "evaluated:             {} domains, {} slots (excluding: {})",
                    s.schema_evaluated.domains,
                    s.schema_evaluated.slots,
                    if s.excluded_domains.is_empty() {
                        "none".to_string()
                    } else {
                        s.excluded_domains.join(", ")
                    }
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error [{}]: {err}", err.module());
            ExitCode::from(exit_code(&err))
        }
    }
}
