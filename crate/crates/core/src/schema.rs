//! Task schemas in the SGD layout: domains, slots, descriptions and value sets.
//!
//! A [`Schema`] is immutable once built. Domain and slot order follow the
//! source file and define the canonical iteration order used everywhere else
//! (sequential targets, example expansion, reports).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dataset a schema was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Multiwoz21,
    Multiwoz22,
    M2m,
    Custom,
}

impl Provenance {
    /// Domains dropped by default for this dataset.
    pub fn default_exclusions(self) -> BTreeSet<String> {
        match self {
            Provenance::Multiwoz21 | Provenance::Multiwoz22 => {
                ["police", "hospital"].iter().map(|s| s.to_string()).collect()
            }
            Provenance::M2m | Provenance::Custom => BTreeSet::new(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Multiwoz21 => "multiwoz21",
            Provenance::Multiwoz22 => "multiwoz22",
            Provenance::M2m => "m2m",
            Provenance::Custom => "custom",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "multiwoz21" => Ok(Provenance::Multiwoz21),
            "multiwoz22" => Ok(Provenance::Multiwoz22),
            "m2m" => Ok(Provenance::M2m),
            "custom" => Ok(Provenance::Custom),
            other => Err(Error::Config(format!("unknown dataset tag '{other}'"))),
        }
    }
}

/// Address of one slot: `(domain, slot)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotKey {
    pub domain: String,
    pub slot: String,
}

impl SlotKey {
    pub fn new(domain: impl Into<String>, slot: impl Into<String>) -> Self {
        SlotKey {
            domain: domain.into(),
            slot: slot.into(),
        }
    }
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.domain, self.slot)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub description: Option<String>,
    pub is_categorical: bool,
    pub possible_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainDef {
    pub name: String,
    pub description: Option<String>,
    pub slots: Vec<SlotDef>,
}

impl DomainDef {
    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub domains: Vec<DomainDef>,
    pub provenance: Provenance,
}

/// Which parts of the schema documentation end up in prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionConfig {
    pub use_domain_desc: bool,
    pub use_slot_desc: bool,
    pub use_value_list: bool,
    pub sampling_seed: u64,
}

impl DescriptionConfig {
    /// Names only.
    pub fn names_only() -> Self {
        DescriptionConfig {
            use_domain_desc: false,
            use_slot_desc: false,
            use_value_list: false,
            sampling_seed: 0,
        }
    }

    /// Domain description, slot description and value list.
    pub fn full() -> Self {
        DescriptionConfig {
            use_domain_desc: true,
            use_slot_desc: true,
            use_value_list: true,
            sampling_seed: 0,
        }
    }

    /// Parses the `--desc` flag syntax: a comma list drawn from
    /// `domain`, `slot`, `values`, or `none`/empty for names only.
    pub fn from_flags(flags: &str, seed: u64) -> Result<Self> {
        let mut config = DescriptionConfig::names_only();
        config.sampling_seed = seed;
        for part in flags.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "domain" => config.use_domain_desc = true,
                "slot" => config.use_slot_desc = true,
                "values" | "value" => config.use_value_list = true,
                "all" => {
                    config.use_domain_desc = true;
                    config.use_slot_desc = true;
                    config.use_value_list = true;
                }
                "none" => {}
                other => {
                    return Err(Error::Config(format!(
                        "unknown description flag '{other}' (expected domain, slot, values)"
                    )))
                }
            }
        }
        Ok(config)
    }
}

impl Default for DescriptionConfig {
    fn default() -> Self {
        DescriptionConfig::names_only()
    }
}

// On-disk SGD layout. Intent and API fields are ignored.
#[derive(Deserialize)]
struct RawService {
    service_name: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    slots: Vec<RawSlot>,
}

#[derive(Deserialize)]
struct RawSlot {
    name: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    is_categorical: bool,
    #[serde(default)]
    possible_values: Vec<String>,
}

fn non_empty(text: Option<String>) -> Option<String> {
    text.filter(|t| !t.trim().is_empty())
}

/// Slot names in SGD files are usually qualified as `<service>-<slot>`; the
/// prefix is redundant once the slot lives under its domain.
pub(crate) fn strip_domain_prefix<'a>(domain: &str, slot: &'a str) -> &'a str {
    slot.strip_prefix(domain)
        .and_then(|rest| rest.strip_prefix('-'))
        .filter(|rest| !rest.is_empty())
        .unwrap_or(slot)
}

/// Reads an SGD-format schema file.
pub fn parse_schema(path: impl AsRef<Path>, provenance: Provenance) -> Result<Schema> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schema_str(&text, provenance).map_err(|e| match e {
        Error::Json { source, .. } => Error::json(path, source),
        other => other,
    })
}

pub fn parse_schema_str(text: &str, provenance: Provenance) -> Result<Schema> {
    let raw: Vec<RawService> = serde_json::from_str(text).map_err(|e| Error::json("<schema>", e))?;
    let domains = raw
        .into_iter()
        .map(|service| {
            let slots = service
                .slots
                .into_iter()
                .map(|slot| SlotDef {
                    name: strip_domain_prefix(&service.service_name, &slot.name).to_string(),
                    description: non_empty(slot.description),
                    is_categorical: slot.is_categorical,
                    possible_values: slot.possible_values,
                })
                .collect();
            DomainDef {
                name: service.service_name,
                description: non_empty(service.description),
                slots,
            }
        })
        .collect();
    let schema = Schema { domains, provenance };
    schema.validate()?;
    Ok(schema)
}

impl Schema {
    /// Checks naming and value-set invariants.
    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Schema("schema declares no domains".into()));
        }
        let mut seen_domains = HashSet::new();
        for domain in &self.domains {
            if domain.name.trim().is_empty() {
                return Err(Error::Schema("domain with empty name".into()));
            }
            if !seen_domains.insert(domain.name.as_str()) {
                return Err(Error::Schema(format!("duplicate domain '{}'", domain.name)));
            }
            let mut seen_slots = HashSet::new();
            for slot in &domain.slots {
                if slot.name.trim().is_empty() {
                    return Err(Error::Schema(format!(
                        "domain '{}' has a slot with an empty name",
                        domain.name
                    )));
                }
                if !seen_slots.insert(slot.name.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate slot '{}' in domain '{}'",
                        slot.name, domain.name
                    )));
                }
                if !slot.is_categorical && !slot.possible_values.is_empty() {
                    return Err(Error::Schema(format!(
                        "non-categorical slot '{}-{}' lists possible values",
                        domain.name, slot.name
                    )));
                }
                let mut seen_values = HashSet::new();
                for value in &slot.possible_values {
                    if !seen_values.insert(value.as_str()) {
                        return Err(Error::Schema(format!(
                            "slot '{}-{}' repeats possible value '{}'",
                            domain.name, slot.name, value
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn domain(&self, name: &str) -> Option<&DomainDef> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn slot(&self, domain: &str, slot: &str) -> Option<&SlotDef> {
        self.domain(domain).and_then(|d| d.slot(slot))
    }

    pub fn slot_for(&self, key: &SlotKey) -> Option<&SlotDef> {
        self.slot(&key.domain, &key.slot)
    }

    pub fn contains(&self, key: &SlotKey) -> bool {
        self.slot_for(key).is_some()
    }

    /// Every `(domain, slot)` pair in canonical order.
    pub fn pairs(&self) -> impl Iterator<Item = (&DomainDef, &SlotDef)> + '_ {
        self.domains.iter().flat_map(|d| d.slots.iter().map(move |s| (d, s)))
    }

    pub fn keys(&self) -> impl Iterator<Item = SlotKey> + '_ {
        self.pairs().map(|(d, s)| SlotKey::new(&d.name, &s.name))
    }

    pub fn num_pairs(&self) -> usize {
        self.domains.iter().map(|d| d.slots.len()).sum()
    }

    /// `(categorical, non_categorical)` slot counts.
    pub fn slot_type_counts(&self) -> (usize, usize) {
        self.pairs().fold((0, 0), |(cat, non), (_, s)| {
            if s.is_categorical {
                (cat + 1, non)
            } else {
                (cat, non + 1)
            }
        })
    }

    /// Position of each key in canonical order.
    pub fn key_order(&self) -> BTreeMap<SlotKey, usize> {
        self.keys().enumerate().map(|(i, k)| (k, i)).collect()
    }

    /// Drops the named domains, keeping the order of the rest. Names that do
    /// not occur are ignored.
    pub fn filter_domains<S: AsRef<str>>(&self, excluded: &[S]) -> Schema {
        let excluded: HashSet<&str> = excluded.iter().map(AsRef::as_ref).collect();
        let domains: Vec<DomainDef> = self
            .domains
            .iter()
            .filter(|d| !excluded.contains(d.name.as_str()))
            .cloned()
            .collect();
        if domains.is_empty() && !self.domains.is_empty() {
            log::warn!("domain exclusion removed every domain from the schema");
        }
        Schema {
            domains,
            provenance: self.provenance,
        }
    }

    /// Attaches exactly one description per slot (and per domain, when the
    /// table carries domain rows). Candidates come from `overrides` when
    /// present, else from the schema itself; multi-candidate entries are
    /// sampled with a generator keyed by `(seed, domain, slot)`.
    pub fn resolve_descriptions(
        &self,
        overrides: Option<&DescriptionTable>,
        config: &DescriptionConfig,
    ) -> Result<Schema> {
        if let Some(table) = overrides {
            let unknown: Vec<String> = table
                .entries
                .keys()
                .filter(|(domain, slot)| match slot {
                    Some(slot) => self.slot(domain, slot).is_none(),
                    None => self.domain(domain).is_none(),
                })
                .map(|(domain, slot)| match slot {
                    Some(slot) => format!("{domain}-{slot}"),
                    None => domain.clone(),
                })
                .collect();
            if !unknown.is_empty() {
                return Err(Error::Schema(format!(
                    "description table references unknown entries: {}",
                    unknown.join(", ")
                )));
            }
        }
        let seed = config.sampling_seed;
        let domains = self
            .domains
            .iter()
            .map(|domain| {
                let description = overrides
                    .and_then(|t| t.candidates(&domain.name, None))
                    .map(|c| sample_description(seed, &domain.name, "", c))
                    .or_else(|| domain.description.clone());
                let slots = domain
                    .slots
                    .iter()
                    .map(|slot| {
                        let description = overrides
                            .and_then(|t| t.candidates(&domain.name, Some(&slot.name)))
                            .map(|c| sample_description(seed, &domain.name, &slot.name, c))
                            .or_else(|| slot.description.clone());
                        SlotDef {
                            description,
                            ..slot.clone()
                        }
                    })
                    .collect();
                DomainDef {
                    name: domain.name.clone(),
                    description,
                    slots,
                }
            })
            .collect();
        Ok(Schema {
            domains,
            provenance: self.provenance,
        })
    }

    /// SHA-256 over the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex_digest(&bytes)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn sample_description(seed: u64, domain: &str, slot: &str, candidates: &[String]) -> String {
    if candidates.len() == 1 {
        return candidates[0].clone();
    }
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(slot.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    candidates[rng.random_range(0..candidates.len())].clone()
}

/// External description candidates keyed by `(domain, slot)`; a `None` slot
/// holds domain descriptions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescriptionTable {
    entries: BTreeMap<(String, Option<String>), Vec<String>>,
}

impl DescriptionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, domain: &str, slot: Option<&str>, description: &str) {
        self.entries
            .entry((domain.to_string(), slot.map(str::to_string)))
            .or_default()
            .push(description.to_string());
    }

    pub fn candidates(&self, domain: &str, slot: Option<&str>) -> Option<&[String]> {
        self.entries
            .get(&(domain.to_string(), slot.map(str::to_string)))
            .map(Vec::as_slice)
            .filter(|c| !c.is_empty())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads a tab-separated table with columns `domain`, `slot`,
    /// `description`, one row per candidate. An empty slot column marks a
    /// domain description. Blank lines and `#` comments are skipped, as is a
    /// leading `domain\tslot\tdescription` header.
    pub fn from_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = DescriptionTable::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Record {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: format!("expected 3 tab-separated columns, found {}", cols.len()),
                });
            }
            if idx == 0 && cols == ["domain", "slot", "description"] {
                continue;
            }
            let (domain, slot, description) = (cols[0].trim(), cols[1].trim(), cols[2].trim());
            if domain.is_empty() || description.is_empty() {
                return Err(Error::Record {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: "domain and description must be non-empty".into(),
                });
            }
            let slot = (!slot.is_empty()).then(|| strip_domain_prefix(domain, slot));
            table.add(domain, slot, description);
        }
        Ok(table)
    }
}
