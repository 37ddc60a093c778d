#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;

use dstkit::corpus::{load_corpus, Dialogue};
use dstkit::pipeline::RunConfig;
use dstkit::schema::{parse_schema, Provenance, Schema};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

/// MultiWOZ-2.2-shaped fixture with the default exclusions applied.
pub fn mwoz_schema() -> Schema {
    parse_schema(fixture("multiwoz22/schema.json"), Provenance::Multiwoz22)
        .unwrap()
        .filter_domains(&["police", "hospital"])
}

pub fn mwoz_test(schema: &Schema) -> Vec<Dialogue> {
    load_corpus(fixture("multiwoz22/test"), schema).unwrap().dialogues
}

pub fn mwoz_config() -> RunConfig {
    RunConfig::new(
        Provenance::Multiwoz22,
        fixture("multiwoz22/schema.json"),
        fixture("multiwoz22/test"),
    )
}

pub fn find<'a>(dialogues: &'a [Dialogue], id: &str) -> &'a Dialogue {
    dialogues
        .iter()
        .find(|d| d.dialogue_id == id)
        .unwrap_or_else(|| panic!("no dialogue {id}"))
}
