use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{RelationSample, RelationSchema, Span};
use crate::error::{Error, Result};

/// Sentences longer than this are truncated on load.
pub const MAX_TOKENS: usize = 100;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    tokens: Vec<String>,
    e1: [usize; 2],
    e2: [usize; 2],
    relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_truth: Option<bool>,
}

/// Reads a JSONL corpus, one sample per line.
pub fn load_corpus(path: impl AsRef<Path>, schema: &RelationSchema) -> Result<Vec<RelationSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), path, schema)
}

/// Like [`load_corpus`] over any reader; `source` only labels errors.
pub fn parse_corpus(
    reader: impl BufRead,
    source: impl AsRef<Path>,
    schema: &RelationSchema,
) -> Result<Vec<RelationSample>> {
    let source = source.as_ref();
    let mut out = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: source.to_path_buf(),
            line: lineno,
            msg,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let label = schema
            .index_of(&rec.relation)
            .ok_or_else(|| parse_err(format!("unknown relation `{}`", rec.relation)))?;
        let mut sample = RelationSample {
            id: rec.id,
            tokens: rec.tokens,
            e1: Span::new(rec.e1[0], rec.e1[1]),
            e2: Span::new(rec.e2[0], rec.e2[1]),
            label,
            noise_truth: rec.noise_truth,
        };
        sample.validate()?;
        if !ids.insert(sample.id.clone()) {
            return Err(Error::Data {
                id: sample.id,
                msg: format!("duplicate id at line {lineno}"),
            });
        }
        if sample.tokens.len() > MAX_TOKENS {
            if sample.e1.end >= MAX_TOKENS || sample.e2.end >= MAX_TOKENS {
                warn!(
                    "skipping `{}`: {} tokens and an entity beyond the {MAX_TOKENS}-token cap",
                    sample.id,
                    sample.tokens.len()
                );
                continue;
            }
            warn!(
                "truncating `{}` from {} to {MAX_TOKENS} tokens",
                sample.id,
                sample.tokens.len()
            );
            sample.tokens.truncate(MAX_TOKENS);
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn write_corpus(
    path: impl AsRef<Path>,
    samples: &[RelationSample],
    schema: &RelationSchema,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let rec = Record {
            id: s.id.clone(),
            tokens: s.tokens.clone(),
            e1: [s.e1.start, s.e1.end],
            e2: [s.e2.start, s.e2.end],
            relation: schema.name(s.label).to_string(),
            noise_truth: s.noise_truth,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<RelationSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_schema(path: impl AsRef<Path>, schema: &RelationSchema) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(schema)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
