use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Document;
use crate::error::{Error, Result};

/// Word-level vocabulary. Ids are dense from zero; the first four are reserved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    words: Vec<String>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const MASK: usize = 2;
    pub const CLS: usize = 3;
    pub const RESERVED: [&'static str; 4] = ["[PAD]", "[UNK]", "[MASK]", "[CLS]"];

    /// Reserved tokens followed by `words` in the given order.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(words.into_iter().map(Into::into));
        Self::from_repr(VocabularyRepr { words: all })
    }

    fn from_repr(repr: VocabularyRepr) -> Result<Self> {
        if repr.words.len() < Self::RESERVED.len()
            || repr.words[..Self::RESERVED.len()] != Self::RESERVED
        {
            return Err(Error::InvalidInput(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(repr.words.len());
        for (id, w) in repr.words.iter().enumerate() {
            if index.insert(w.clone(), id).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate vocabulary entry {w:?}"
                )));
            }
        }
        Ok(Vocabulary {
            words: repr.words,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn num_reserved(&self) -> usize {
        Self::RESERVED.len()
    }

    /// Id of `word`, or `UNK`.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode(&self, doc: &Document) -> Vec<usize> {
        doc.surfaces().map(|w| self.id(w)).collect()
    }
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;
    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        Vocabulary::from_repr(repr)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr { words: v.words }
    }
}

/// Every surface with frequency `>= min_count`, ordered by descending
/// frequency and then lexicographically.
pub fn build_vocab(docs: &[Document], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        for w in doc.surfaces() {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_count && !Vocabulary::RESERVED.contains(w))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_words(kept.into_iter().map(|(w, _)| w))
}
