use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::corpus::{RelationSample, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Row of a position table for a token at signed `distance` from an entity
/// start. Distances beyond `max_distance` share the final clip row; zero
/// maps to the centre row `max_distance`.
pub fn position_bucket(distance: i64, max_distance: usize) -> usize {
    let p = max_distance as i64;
    if distance.abs() <= p {
        (distance + p) as usize
    } else {
        2 * max_distance + 1
    }
}

/// Rows in a position table: `2 * max_distance + 1` distances plus the clip row.
pub fn position_rows(max_distance: usize) -> usize {
    2 * max_distance + 2
}

/// A sample turned into table indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub words: Vec<usize>,
    pub pos1: Vec<usize>,
    pub pos2: Vec<usize>,
    pub e1: (usize, usize),
    pub e2: (usize, usize),
    pub label: usize,
}

impl EncodedSample {
    pub fn new(sample: &RelationSample, vocab: &Vocabulary, max_distance: usize) -> Result<Self> {
        sample.validate()?;
        let words = sample.tokens.iter().map(|t| vocab.index(t)).collect();
        let bucket = |anchor: usize| -> Vec<usize> {
            (0..sample.tokens.len())
                .map(|t| position_bucket(t as i64 - anchor as i64, max_distance))
                .collect()
        };
        Ok(Self {
            words,
            pos1: bucket(sample.e1.start),
            pos2: bucket(sample.e2.start),
            e1: sample.e1.as_pair(),
            e2: sample.e2.as_pair(),
            label: sample.label,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Word and the two position tables inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingTables {
    pub word: ParamId,
    pub pos1: ParamId,
    pub pos2: ParamId,
}

impl EmbeddingTables {
    pub(crate) fn init(
        store: &mut ParamStore,
        vocab_size: usize,
        word_dim: usize,
        pos_dim: usize,
        max_distance: usize,
        scale: f64,
        rng: &mut StreamRng,
    ) -> Self {
        let word = store.add_with_frozen_row(
            "word",
            uniform(vocab_size, word_dim, scale, rng),
            PAD,
        );
        let rows = position_rows(max_distance);
        let pos1 = store.add("pos1", uniform(rows, pos_dim, scale, rng));
        let pos2 = store.add("pos2", uniform(rows, pos_dim, scale, rng));
        Self { word, pos1, pos2 }
    }

    /// Records `w_t || u1_t || u2_t` for every token; returns the full
    /// `n x (d_w + 2 d_u)` matrix and the word-only part.
    pub fn token_vectors(&self, g: &mut Graph, s: &EncodedSample) -> Result<(Var, Var)> {
        let w = g.gather(self.word, &s.words)?;
        let p1 = g.gather(self.pos1, &s.pos1)?;
        let p2 = g.gather(self.pos2, &s.pos2)?;
        Ok((g.hconcat(&[w, p1, p2])?, w))
    }

    /// Plain-value version of [`Self::token_vectors`].
    pub fn token_matrix(&self, params: &ParamStore, s: &EncodedSample) -> Result<Tensor> {
        let mut g = Graph::inference(params);
        let (x, _) = self.token_vectors(&mut g, s)?;
        Ok(g.value(x).clone())
    }
}

pub(crate) fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut StreamRng) -> Tensor {
    let data = if scale > 0.0 {
        (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()
    } else {
        vec![0.0; rows * cols]
    };
    Tensor::from_parts(rows, cols, data)
}

/// Word vectors read from a text file, one `token v_1 ... v_d` per line.
#[derive(Debug, Clone, Default)]
pub struct PretrainedEmbeddings {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl PretrainedEmbeddings {
    /// A leading `count dim` header line, as word2vec writes it, is skipped.
    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut vectors = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();
            if i == 0 && rest.len() == 1 && token.parse::<u64>().is_ok() && rest[0].parse::<u64>().is_ok() {
                continue;
            }
            let values: Vec<f64> = rest
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if values.len() != dim {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected {dim} values, found {}", values.len()),
                });
            }
            vectors.insert(token.to_string(), values);
        }
        Ok(Self { dim, vectors })
    }

    /// Copies known vectors into the word table; returns how many rows
    /// were set. PAD stays zero.
    pub fn apply(&self, store: &mut ParamStore, table: ParamId, vocab: &Vocabulary) -> Result<usize> {
        if store.get(table).cols() != self.dim {
            return Err(Error::Config(format!(
                "pretrained dim {} != word_dim {}",
                self.dim,
                store.get(table).cols()
            )));
        }
        let mut hits = 0;
        for idx in 0..vocab.len() {
            if idx == PAD {
                continue;
            }
            if let Some(v) = self.vectors.get(vocab.word(idx)) {
                store.get_mut(table).row_slice_mut(idx).copy_from_slice(v);
                hits += 1;
            }
        }
        Ok(hits)
    }
}
