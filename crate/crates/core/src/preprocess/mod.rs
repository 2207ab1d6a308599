//! Tweet tokenization, hashtag segmentation and token normalization.

mod normalize;
mod segment;
mod tokenize;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::{normalize, normalize_with, NormalizationTable};
pub use segment::{segment_hashtag, SegmentationDictionary};
pub use tokenize::{tokenize, Token, TokenKind, TokenizedTweet, EMOTICONS};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("line {line}: expected two tab-separated fields, got {content:?}")]
    BadLine { line: usize, content: String },
    #[error("empty normalization entry {0:?}")]
    EmptyEntry(String),
    #[error("normalization entry {key:?} maps to {word:?}, which is itself a key")]
    ChainedEntry { key: String, word: String },
}

/// Tokenize, segment hashtags, normalize.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    pub table: NormalizationTable,
    pub dictionary: SegmentationDictionary,
}

impl Preprocessor {
    pub fn new(table: NormalizationTable, dictionary: SegmentationDictionary) -> Self {
        Self { table, dictionary }
    }

    pub fn process(&self, text: &str) -> Vec<String> {
        preprocess_pipeline(text, &self.table, &self.dictionary)
    }
}

pub fn preprocess_pipeline(
    text: &str,
    table: &NormalizationTable,
    dict: &SegmentationDictionary,
) -> Vec<String> {
    normalize_with(&tokenize(text), table, Some(dict))
}

/// Lowercased word-token counts over a corpus, for extending the
/// segmentation dictionary with in-domain vocabulary ("antifa", "qanon").
pub fn corpus_word_counts<'a>(texts: impl IntoIterator<Item = &'a str>) -> SegmentationDictionary {
    let mut dict = SegmentationDictionary::new();
    for text in texts {
        for token in tokenize(text).tokens {
            if token.kind == TokenKind::Word {
                dict.add(&token.surface, 1);
            }
        }
    }
    dict
}

/// Serializable description of a [`Preprocessor`], stored alongside trained
/// models so prediction preprocesses exactly as training did.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub normalization: BTreeMap<String, String>,
    /// Whether the bundled English unigram list is part of the dictionary.
    pub builtin_dictionary: bool,
    /// Counts added on top of the bundled list.
    pub extra_counts: BTreeMap<String, u64>,
}

impl PreprocessConfig {
    pub fn new(
        table: &NormalizationTable,
        builtin_dictionary: bool,
        extra: &SegmentationDictionary,
    ) -> Self {
        Self {
            normalization: table
                .entries()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            builtin_dictionary,
            extra_counts: extra.entries().map(|(w, c)| (w.to_string(), c)).collect(),
        }
    }

    pub fn build(&self) -> Result<Preprocessor, PreprocessError> {
        let table = NormalizationTable::from_entries(&self.normalization)?;
        let mut dictionary = if self.builtin_dictionary {
            SegmentationDictionary::builtin_english()
        } else {
            SegmentationDictionary::new()
        };
        for (w, &c) in &self.extra_counts {
            dictionary.add(w, c);
        }
        Ok(Preprocessor::new(table, dictionary))
    }
}
