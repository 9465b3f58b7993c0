use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::RelationSample;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Word to row index. Index 0 is PAD, index 1 is UNK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    /// Words in order of first appearance.
    pub fn build<'a>(samples: impl IntoIterator<Item = &'a RelationSample>) -> Self {
        let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut index: HashMap<String, usize> =
            words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        for s in samples {
            for t in &s.tokens {
                if !index.contains_key(t) {
                    index.insert(t.clone(), words.len());
                    words.push(t.clone());
                }
            }
        }
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Unknown words map to UNK.
    pub fn index(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK)
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }
}
