//! Relation-extraction samples, corpus files, splitting and the synthetic
//! noisy-corpus generator.

mod io;
mod split;
mod synth;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_corpus, load_schema, parse_corpus, write_corpus, write_schema, MAX_TOKENS};
pub use split::{split_train_valid, train_size, CorpusSplit};
pub use synth::{generate_synthetic, test_seed, trigger_relation, NoiseKind, SynthConfig};
pub use vocab::{Vocabulary, PAD, UNK};

/// Name of the no-relation class in files.
pub const NONE_RELATION: &str = "None";

/// Ordered relation inventory. Index order is the softmax order for a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct RelationSchema {
    relations: Vec<String>,
    none_index: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    relations: Vec<String>,
}

impl TryFrom<SchemaFile> for RelationSchema {
    type Error = Error;
    fn try_from(f: SchemaFile) -> Result<Self> {
        RelationSchema::new(f.relations)
    }
}

impl From<RelationSchema> for SchemaFile {
    fn from(s: RelationSchema) -> Self {
        SchemaFile {
            relations: s.relations,
        }
    }
}

impl RelationSchema {
    pub fn new(relations: Vec<String>) -> Result<Self> {
        if relations.len() < 2 {
            return Err(Error::Config(format!(
                "schema needs at least 2 relations, got {}",
                relations.len()
            )));
        }
        let nones: Vec<usize> = relations
            .iter()
            .enumerate()
            .filter(|(_, r)| *r == NONE_RELATION)
            .map(|(i, _)| i)
            .collect();
        if nones.len() != 1 {
            return Err(Error::Config(format!(
                "schema must contain `{NONE_RELATION}` exactly once, found {}",
                nones.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = relations.iter().find(|r| !seen.insert(r.as_str())) {
            return Err(Error::Config(format!("duplicate relation `{dup}`")));
        }
        Ok(Self {
            none_index: nones[0],
            relations,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.relations.len()
    }

    pub fn none_index(&self) -> usize {
        self.none_index
    }

    pub fn is_none(&self, idx: usize) -> bool {
        idx == self.none_index
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.relations[idx]
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == name)
    }
}

/// Inclusive, 0-based token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn single(at: usize) -> Self {
        Self::new(at, at)
    }

    pub fn as_pair(self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn fits(self, n: usize) -> bool {
        self.start <= self.end && self.end < n
    }
}

/// One sentence, its two ordered entity mentions and the distant
/// supervision label.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationSample {
    pub id: String,
    pub tokens: Vec<String>,
    pub e1: Span,
    pub e2: Span,
    /// Index into the [`RelationSchema`].
    pub label: usize,
    /// Ground-truth noise flag; only synthetic corpora carry it.
    pub noise_truth: Option<bool>,
}

impl RelationSample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for (name, span) in [("e1", self.e1), ("e2", self.e2)] {
            if !span.fits(n) {
                return Err(Error::Data {
                    id: self.id.clone(),
                    msg: format!(
                        "{name} span [{}, {}] out of range for {n} tokens",
                        span.start, span.end
                    ),
                });
            }
        }
        Ok(())
    }
}
