use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::lexicon::parse_word_list;
use super::{AnnotatedTweet, Entity, EntityType, HeuristicError, PosTag};
use crate::preprocess::tokenize;

/// Lowercase names mapped to entity types.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Gazetteer {
    entries: HashMap<String, EntityType>,
}

impl Gazetteer {
    /// `name<TAB>TYPE` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, HeuristicError> {
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| HeuristicError::Parse { line: i + 1, detail };
            let (name, kind) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("expected name<TAB>type, got {line:?}")))?;
            let kind = kind.trim().parse().map_err(|t| bad(format!("unknown entity type {t}")))?;
            entries.insert(name.trim().to_lowercase(), kind);
        }
        Ok(Self { entries })
    }

    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/gazetteer.tsv")).expect("bundled gazetteer parses")
    }

    pub fn get(&self, word: &str) -> Option<EntityType> {
        self.entries.get(&word.to_lowercase()).copied()
    }
}

/// Lexicon- and shape-based tagger. Deliberately simple; external
/// annotations are the accurate path.
#[derive(Clone, Debug)]
pub struct BuiltinAnnotator {
    pronouns: BTreeSet<String>,
    verbs: BTreeSet<String>,
    nouns: BTreeSet<String>,
    gazetteer: Gazetteer,
}

impl Default for BuiltinAnnotator {
    fn default() -> Self {
        Self {
            pronouns: parse_word_list(include_str!("../../data/pronouns.txt")),
            verbs: parse_word_list(include_str!("../../data/verbs.txt")),
            nouns: parse_word_list(include_str!("../../data/nouns.txt")),
            gazetteer: Gazetteer::builtin(),
        }
    }
}

const VERB_SUFFIXES: &[(&str, &[&str])] = &[
    ("ying", &["ie"]),
    ("ing", &["", "e"]),
    ("ied", &["y"]),
    ("ies", &["y"]),
    ("ed", &["", "e"]),
    ("es", &[""]),
    ("s", &[""]),
];

fn ends_sentence(token: &str) -> bool {
    !token.is_empty()
        && token.chars().all(|c| c.is_ascii_punctuation())
        && token.contains(['.', '!', '?'])
}

/// Leading capital followed by at least one lowercase letter.
fn is_capitalized(token: &str) -> bool {
    let mut chars = token.chars();
    chars.next().is_some_and(char::is_uppercase) && chars.any(char::is_lowercase)
}

impl BuiltinAnnotator {
    pub fn new(
        pronouns: BTreeSet<String>,
        verbs: BTreeSet<String>,
        nouns: BTreeSet<String>,
        gazetteer: Gazetteer,
    ) -> Self {
        Self {
            pronouns,
            verbs,
            nouns,
            gazetteer,
        }
    }

    fn is_verb(&self, word: &str) -> bool {
        if self.verbs.contains(word) {
            return true;
        }
        VERB_SUFFIXES.iter().any(|(suffix, endings)| {
            let Some(stem) = word.strip_suffix(suffix) else {
                return false;
            };
            if stem.is_empty() {
                return false;
            }
            let doubled = {
                let mut rev = stem.chars().rev();
                match (rev.next(), rev.next()) {
                    (Some(a), Some(b)) if a == b => Some(&stem[..stem.len() - a.len_utf8()]),
                    _ => None,
                }
            };
            let known = |w: &str| w.chars().count() >= 2 && self.verbs.contains(w);
            endings.iter().any(|e| known(&format!("{stem}{e}"))) || doubled.is_some_and(known)
        })
    }

    /// Tags each token. A token counts as sentence-initial when only
    /// mentions separate it from the start or from the last `.`, `!` or `?`.
    pub fn annotate_words<S: AsRef<str>>(&self, tokens: &[S]) -> AnnotatedTweet {
        let mut tags = Vec::with_capacity(tokens.len());
        let mut entities = Vec::new();
        let mut sentence_start = true;
        for (i, tok) in tokens.iter().enumerate() {
            let tok = tok.as_ref();
            let lower = tok.to_lowercase();
            let tag = if tok.starts_with('#') {
                PosTag::Hashtag
            } else if tok.starts_with('@') {
                PosTag::Mention
            } else if self.pronouns.contains(&lower) {
                PosTag::Prp
            } else if let Some(kind) = self.gazetteer.get(&lower) {
                entities.push(Entity { start: i, end: i + 1, kind });
                PosTag::Nnp
            } else if !sentence_start && is_capitalized(tok) && tok != "URL" {
                entities.push(Entity {
                    start: i,
                    end: i + 1,
                    kind: EntityType::Person,
                });
                PosTag::Nnp
            } else if self.is_verb(&lower) {
                PosTag::V
            } else if self.nouns.contains(&lower) {
                PosTag::N
            } else {
                PosTag::Other
            };
            tags.push(tag);
            if ends_sentence(tok) {
                sentence_start = true;
            } else if tag != PosTag::Mention {
                sentence_start = false;
            }
        }
        AnnotatedTweet {
            tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            pos_tags: tags,
            entities,
        }
    }

    /// Tokenizes raw text (no normalization) and tags it.
    pub fn annotate_text(&self, text: &str) -> AnnotatedTweet {
        let t = tokenize(text);
        let words: Vec<&str> = t.surfaces().collect();
        self.annotate_words(&words)
    }
}

/// Maps the native tagset plus common Penn Treebank and Twitter tags.
fn map_tag(tag: &str) -> PosTag {
    match tag {
        "N" | "NN" | "NNS" => PosTag::N,
        "V" | "VB" | "VBD" | "VBG" | "VBN" | "VBP" | "VBZ" | "MD" => PosTag::V,
        "PRP" | "PRP$" | "O" => PosTag::Prp,
        "NNP" | "NNPS" | "^" => PosTag::Nnp,
        "HASHTAG" | "#" => PosTag::Hashtag,
        "MENTION" | "@" => PosTag::Mention,
        _ => PosTag::Other,
    }
}

fn entity_kind(label: &str) -> Option<EntityType> {
    match label.to_ascii_uppercase().as_str() {
        "GPE" => Some(EntityType::Location),
        other => other.parse().ok(),
    }
}

/// Pre-computed annotations keyed by tweet id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Annotations {
    by_id: HashMap<String, AnnotatedTweet>,
}

impl Annotations {
    pub fn load(path: &Path) -> Result<Self, HeuristicError> {
        let text = std::fs::read_to_string(path).map_err(|source| HeuristicError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_annotations(&text)
    }

    pub fn get(&self, id: &str) -> Result<&AnnotatedTweet, HeuristicError> {
        self.by_id
            .get(id)
            .ok_or_else(|| HeuristicError::MissingAnnotation(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// Parses `id<TAB>tok/TAG tok/TAG ...<TAB>start:end:TYPE,...` lines, with
/// `-` for no entities. Entity types outside the four supported are dropped.
pub fn parse_annotations(text: &str) -> Result<Annotations, HeuristicError> {
    let mut by_id = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| HeuristicError::Parse { line: i + 1, detail };
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, tagged, spans] = fields[..] else {
            return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        for item in tagged.split_whitespace() {
            let (tok, tag) = item
                .rsplit_once('/')
                .filter(|(t, _)| !t.is_empty())
                .ok_or_else(|| bad(format!("token without tag: {item:?}")))?;
            tokens.push(tok.to_string());
            tags.push(map_tag(tag));
        }
        let mut entities = Vec::new();
        if spans.trim() != "-" {
            for span in spans.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let parts: Vec<&str> = span.split(':').collect();
                let [start, end, label] = parts[..] else {
                    return Err(bad(format!("malformed span {span:?}")));
                };
                let num = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| bad(format!("bad offset in span {span:?}")))
                };
                let (start, end) = (num(start)?, num(end)?);
                if let Some(kind) = entity_kind(label) {
                    entities.push(Entity { start, end, kind });
                }
            }
        }
        let tweet = AnnotatedTweet::new(tokens, tags, entities)
            .map_err(|e| bad(e.to_string()))?;
        by_id.insert(id.to_string(), tweet);
    }
    Ok(Annotations { by_id })
}

/// Source of annotations used by the Sub-task B pipeline.
#[derive(Clone, Debug)]
pub enum Annotator {
    Builtin(BuiltinAnnotator),
    External(Annotations),
}

impl Annotator {
    pub fn annotate(&self, id: &str, text: &str) -> Result<AnnotatedTweet, HeuristicError> {
        match self {
            Annotator::Builtin(a) => Ok(a.annotate_text(text)),
            Annotator::External(a) => a.get(id).cloned(),
        }
    }
}
