use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use super::HeuristicError;
use crate::ingest::Dataset;
use crate::preprocess::{tokenize, TokenKind};

/// Frequent hashtags and words that mark a tweet as targeted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HeuristicLexicon {
    /// Lowercase, each starting with '#'.
    pub hashtags: BTreeSet<String>,
    /// Lowercase words without '#'.
    pub tokens: BTreeSet<String>,
}

const EXAMPLE_SEED: &[&str] = &[
    "#maga",
    "#liberals",
    "#kavanaugh",
    "#qanon",
    "antifa",
    "president",
    "trump",
    "potus",
    "liberals",
    "conservatives",
    "democrat",
    "nigga",
    "gay",
    "jew",
];

impl HeuristicLexicon {
    /// Sorts items into hashtags and words by their first character.
    pub fn from_items<I, S>(items: I) -> Result<Self, HeuristicError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = Self::default();
        for item in items {
            let item = item.as_ref().trim().to_lowercase();
            if item.is_empty() || item == "#" {
                return Err(HeuristicError::EmptyItem(item));
            }
            if item.starts_with('#') {
                lex.hashtags.insert(item);
            } else {
                lex.tokens.insert(item);
            }
        }
        Ok(lex)
    }

    /// Items known to be frequent in offensive training tweets.
    pub fn example_seed() -> Self {
        Self::from_items(EXAMPLE_SEED).expect("seed items are non-empty")
    }

    /// One item per line; blank lines and lines starting with "//" are skipped.
    pub fn parse(text: &str) -> Result<Self, HeuristicError> {
        Self::from_items(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("//")),
        )
    }

    pub fn load(path: &Path) -> Result<Self, HeuristicError> {
        let text = std::fs::read_to_string(path).map_err(|source| HeuristicError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Hashtags first, then words, each sorted.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for item in self.hashtags.iter().chain(&self.tokens) {
            writeln!(w, "{item}")?;
        }
        w.flush()
    }

    pub fn len(&self) -> usize {
        self.hashtags.len() + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashtags.is_empty() && self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconOptions {
    pub k: usize,
    /// Words never counted as tokens.
    pub stoplist: BTreeSet<String>,
    /// Items removed from both lists, hashtags with their '#'.
    pub overrides: BTreeSet<String>,
}

impl Default for LexiconOptions {
    fn default() -> Self {
        Self {
            k: 100,
            stoplist: Self::builtin_stoplist(),
            overrides: BTreeSet::new(),
        }
    }
}

impl LexiconOptions {
    pub fn builtin_stoplist() -> BTreeSet<String> {
        parse_word_list(include_str!("../../data/stopwords.txt"))
    }
}

/// Lowercased lines, skipping blanks and `#` comments.
pub fn parse_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

fn top_k(counts: HashMap<String, usize>, k: usize) -> BTreeSet<String> {
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(w, _)| w).collect()
}

/// The `k` most frequent hashtags and words over the raw tweets, ties broken
/// lexicographically.
pub fn build_lexicon(data: &Dataset, opts: &LexiconOptions) -> HeuristicLexicon {
    let mut hashtags: HashMap<String, usize> = HashMap::new();
    let mut tokens: HashMap<String, usize> = HashMap::new();
    for record in &data.records {
        for tok in tokenize(&record.text).tokens {
            let form = tok.surface.to_lowercase();
            if opts.overrides.contains(&form) {
                continue;
            }
            match tok.kind {
                TokenKind::Hashtag if form.len() > 1 => *hashtags.entry(form).or_default() += 1,
                TokenKind::Word if !opts.stoplist.contains(&form) => {
                    *tokens.entry(form).or_default() += 1
                }
                _ => {}
            }
        }
    }
    HeuristicLexicon {
        hashtags: top_k(hashtags, opts.k),
        tokens: top_k(tokens, opts.k),
    }
}
