//! Phrase records, frequency filtering and the joint phrase-type taxonomy.
//!
//! A phrase type is the pair (lexical tag, entity type). Five lexical tags
//! times nineteen entity types (eighteen OntoNotes types plus `OTHER`) give
//! 95 labels, indexed row-major as `19 * lexical + entity`. The ordering is
//! fixed so that type-head weights stored in checkpoints stay meaningful.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of whitespace tokens in a phrase surface.
pub const MAX_TOKENS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LexicalTag {
    NP,
    VP,
    PP,
    ADVP,
    ADJP,
}

impl LexicalTag {
    pub const ALL: [LexicalTag; 5] = [
        LexicalTag::NP,
        LexicalTag::VP,
        LexicalTag::PP,
        LexicalTag::ADVP,
        LexicalTag::ADJP,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LexicalTag::NP => "NP",
            LexicalTag::VP => "VP",
            LexicalTag::PP => "PP",
            LexicalTag::ADVP => "ADVP",
            LexicalTag::ADJP => "ADJP",
        }
    }
}

impl FromStr for LexicalTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LexicalTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Validation {
                field: "lexical_tag",
                message: format!("unknown lexical tag {s:?}"),
            })
    }
}

impl fmt::Display for LexicalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    CARDINAL,
    DATE,
    PERSON,
    NORP,
    GPE,
    LAW,
    PERCENT,
    ORDINAL,
    MONEY,
    WORK_OF_ART,
    FAC,
    TIME,
    QUANTITY,
    PRODUCT,
    LANGUAGE,
    ORG,
    LOC,
    EVENT,
    OTHER,
}

impl EntityType {
    pub const ALL: [EntityType; 19] = [
        EntityType::CARDINAL,
        EntityType::DATE,
        EntityType::PERSON,
        EntityType::NORP,
        EntityType::GPE,
        EntityType::LAW,
        EntityType::PERCENT,
        EntityType::ORDINAL,
        EntityType::MONEY,
        EntityType::WORK_OF_ART,
        EntityType::FAC,
        EntityType::TIME,
        EntityType::QUANTITY,
        EntityType::PRODUCT,
        EntityType::LANGUAGE,
        EntityType::ORG,
        EntityType::LOC,
        EntityType::EVENT,
        EntityType::OTHER,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::CARDINAL => "CARDINAL",
            EntityType::DATE => "DATE",
            EntityType::PERSON => "PERSON",
            EntityType::NORP => "NORP",
            EntityType::GPE => "GPE",
            EntityType::LAW => "LAW",
            EntityType::PERCENT => "PERCENT",
            EntityType::ORDINAL => "ORDINAL",
            EntityType::MONEY => "MONEY",
            EntityType::WORK_OF_ART => "WORK_OF_ART",
            EntityType::FAC => "FAC",
            EntityType::TIME => "TIME",
            EntityType::QUANTITY => "QUANTITY",
            EntityType::PRODUCT => "PRODUCT",
            EntityType::LANGUAGE => "LANGUAGE",
            EntityType::ORG => "ORG",
            EntityType::LOC => "LOC",
            EntityType::EVENT => "EVENT",
            EntityType::OTHER => "OTHER",
        }
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Validation {
                field: "entity_type",
                message: format!("unknown entity type {s:?}"),
            })
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// One of the 95 joint phrase types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhraseTypeLabel(u8);

impl PhraseTypeLabel {
    pub const COUNT: usize = LexicalTag::ALL.len() * EntityType::ALL.len();

    pub fn new(index: usize) -> Result<Self> {
        if index < Self::COUNT {
            Ok(PhraseTypeLabel(index as u8))
        } else {
            Err(Error::Validation {
                field: "label",
                message: format!("label index {index} outside [0, {})", Self::COUNT),
            })
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn lexical_tag(self) -> LexicalTag {
        LexicalTag::ALL[self.index() / EntityType::ALL.len()]
    }

    pub fn entity_type(self) -> EntityType {
        EntityType::ALL[self.index() % EntityType::ALL.len()]
    }
}

impl fmt::Display for PhraseTypeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lexical_tag(), self.entity_type())
    }
}

pub fn label_index(lexical_tag: LexicalTag, entity_type: EntityType) -> PhraseTypeLabel {
    PhraseTypeLabel((lexical_tag.index() * EntityType::ALL.len() + entity_type.index()) as u8)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhraseRecord {
    pub surface: String,
    pub lexical_tag: LexicalTag,
    pub entity_type: EntityType,
    pub frequency: u64,
}

impl PhraseRecord {
    pub fn new(
        surface: impl Into<String>,
        lexical_tag: LexicalTag,
        entity_type: EntityType,
        frequency: u64,
    ) -> Result<Self> {
        let record = PhraseRecord {
            surface: surface.into(),
            lexical_tag,
            entity_type,
            frequency,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn label(&self) -> PhraseTypeLabel {
        label_index(self.lexical_tag, self.entity_type)
    }

    fn validate(&self) -> Result<()> {
        let tokens = self.surface.split_whitespace().count();
        if tokens == 0 {
            return Err(Error::Validation {
                field: "surface",
                message: "surface is empty".into(),
            });
        }
        if tokens > MAX_TOKENS {
            return Err(Error::Validation {
                field: "surface",
                message: format!("{tokens} tokens exceeds the limit of {MAX_TOKENS}"),
            });
        }
        if self.frequency == 0 {
            return Err(Error::Validation {
                field: "frequency",
                message: "frequency must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    surface: String,
    lexical_tag: String,
    entity_type: String,
    frequency: i64,
}

/// Parse one JSONL line. `line_no` is 1-based and only used in diagnostics.
/// Unknown entity types become `OTHER` when `coerce_unknown` is set.
pub fn parse_phrase_record(line: &str, line_no: usize, coerce_unknown: bool) -> Result<PhraseRecord> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let lexical_tag: LexicalTag = raw.lexical_tag.parse()?;
    let entity_type = match raw.entity_type.parse::<EntityType>() {
        Ok(t) => t,
        Err(_) if coerce_unknown => EntityType::OTHER,
        Err(e) => return Err(e),
    };
    if raw.frequency <= 0 {
        return Err(Error::Validation {
            field: "frequency",
            message: format!("frequency must be positive, got {}", raw.frequency),
        });
    }
    PhraseRecord::new(raw.surface, lexical_tag, entity_type, raw.frequency as u64)
}

/// A set of phrase records with unique surfaces.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    records: Vec<PhraseRecord>,
}

impl Corpus {
    /// Build a corpus, keeping for each surface the record with the highest
    /// frequency (first occurrence wins ties). First-occurrence order is kept.
    pub fn from_records(records: impl IntoIterator<Item = PhraseRecord>) -> Self {
        let mut position: HashMap<String, usize> = HashMap::new();
        let mut out: Vec<PhraseRecord> = Vec::new();
        for record in records {
            match position.get(&record.surface) {
                Some(&i) => {
                    if record.frequency > out[i].frequency {
                        out[i] = record;
                    }
                }
                None => {
                    position.insert(record.surface.clone(), out.len());
                    out.push(record);
                }
            }
        }
        Corpus { records: out }
    }

    pub fn parse_jsonl(text: &str, coerce_unknown: bool) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let record = parse_phrase_record(trimmed, i + 1, coerce_unknown).map_err(|e| match e {
                Error::Validation { field, message } => Error::Parse {
                    line: i + 1,
                    message: format!("invalid `{field}`: {message}"),
                },
                other => other,
            })?;
            records.push(record);
        }
        Ok(Corpus::from_records(records))
    }

    pub fn load(path: impl AsRef<Path>, coerce_unknown: bool) -> Result<Self> {
        Corpus::parse_jsonl(&fs::read_to_string(path)?, coerce_unknown)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.to_jsonl());
            s.push('\n');
        }
        s
    }

    pub fn records(&self) -> &[PhraseRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.surface.as_str())
    }

    pub fn filter_by_frequency(&self, min_freq: u64) -> Corpus {
        Corpus {
            records: self
                .records
                .iter()
                .filter(|r| r.frequency >= min_freq)
                .cloned()
                .collect(),
        }
    }
}

pub fn filter_by_frequency(corpus: &Corpus, min_freq: u64) -> Corpus {
    corpus.filter_by_frequency(min_freq)
}
