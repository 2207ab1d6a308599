use std::collections::BTreeMap;

use super::segment::{segment_hashtag, SegmentationDictionary};
use super::tokenize::{TokenKind, TokenizedTweet};
use super::PreprocessError;

/// Variant spelling → canonical form (possibly several words).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NormalizationTable {
    entries: BTreeMap<String, String>,
}

impl NormalizationTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table, lowercasing keys and rejecting chains where a
    /// canonical form contains another key.
    pub fn from_entries<I, K, V>(entries: I) -> Result<Self, PreprocessError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut map = BTreeMap::new();
        for (k, v) in entries {
            let key = k.as_ref().trim().to_lowercase();
            let value = v
                .as_ref()
                .split_whitespace()
                .map(str::to_lowercase)
                .collect::<Vec<_>>()
                .join(" ");
            if key.is_empty() || value.is_empty() {
                return Err(PreprocessError::EmptyEntry(key));
            }
            map.insert(key, value);
        }
        for (key, value) in &map {
            if let Some(w) = value.split(' ').find(|w| map.contains_key(*w)) {
                return Err(PreprocessError::ChainedEntry {
                    key: key.clone(),
                    word: w.to_string(),
                });
            }
        }
        Ok(Self { entries: map })
    }

    /// Parses `variant<TAB>canonical` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, PreprocessError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('\t').ok_or_else(|| PreprocessError::BadLine {
                line: i + 1,
                content: line.to_string(),
            })?;
            pairs.push((k.to_string(), v.to_string()));
        }
        Self::from_entries(pairs)
    }

    /// The profanity mappings shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/normalization.tsv")).expect("bundled table parses")
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.entries.get(word).map(String::as_str)
    }

    pub fn contains_key(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Turns tokens into normalized words: mentions and URLs are dropped,
/// hashtags lose their `#` (and are split into words when a dictionary is
/// given), everything is lowercased and table variants are replaced.
pub fn normalize_with(
    t: &TokenizedTweet,
    table: &NormalizationTable,
    dict: Option<&SegmentationDictionary>,
) -> Vec<String> {
    let mut out = Vec::new();
    for token in &t.tokens {
        match token.kind {
            TokenKind::Mention | TokenKind::Url => {}
            TokenKind::Hashtag => {
                let body = &token.surface[1..];
                if body.is_empty() {
                    continue;
                }
                match dict {
                    Some(d) => {
                        for w in segment_hashtag(body, d) {
                            push_word(&mut out, w, table);
                        }
                    }
                    None => push_word(&mut out, body.to_lowercase(), table),
                }
            }
            _ => push_word(&mut out, token.surface.to_lowercase(), table),
        }
    }
    out
}

pub fn normalize(t: &TokenizedTweet, table: &NormalizationTable) -> Vec<String> {
    normalize_with(t, table, None)
}

fn push_word(out: &mut Vec<String>, word: String, table: &NormalizationTable) {
    match table.get(&word) {
        Some(canonical) => out.extend(canonical.split(' ').map(str::to_string)),
        None => out.push(word),
    }
}
