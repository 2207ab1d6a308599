//! Rule engine deciding whether an offensive tweet is targeted (TIN) or
//! untargeted (UNT).
//!
//! Rules are checked in order and the first match wins:
//!
//! 1. a token is a lexicon hashtag → TIN
//! 2. a token is a lexicon word → TIN
//! 3. no entity, no personal pronoun and no proper noun → UNT
//! 4. "he is", "she is" or "you are" appears → TIN
//! 5. starts with a hashtag, then a verb, then an entity → TIN
//! 6. any entity → TIN
//! 7. otherwise → UNT

mod annotate;
mod lexicon;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::TargetLabel;

pub use annotate::{
    parse_annotations, Annotations, Annotator, BuiltinAnnotator, Gazetteer,
};
pub use lexicon::{build_lexicon, parse_word_list, HeuristicLexicon, LexiconOptions};

#[derive(Debug, Error)]
pub enum HeuristicError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("no annotation for tweet {0}")]
    MissingAnnotation(String),
    #[error("lexicon item {0:?} is empty")]
    EmptyItem(String),
    #[error("invalid annotation: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PosTag {
    N,
    V,
    #[serde(rename = "PRP")]
    Prp,
    #[serde(rename = "NNP")]
    Nnp,
    #[serde(rename = "HASHTAG")]
    Hashtag,
    #[serde(rename = "MENTION")]
    Mention,
    #[serde(rename = "OTHER")]
    Other,
}

impl PosTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::N => "N",
            PosTag::V => "V",
            PosTag::Prp => "PRP",
            PosTag::Nnp => "NNP",
            PosTag::Hashtag => "HASHTAG",
            PosTag::Mention => "MENTION",
            PosTag::Other => "OTHER",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityType {
    Person,
    Org,
    Location,
    Facility,
}

impl EntityType {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Person => "PERSON",
            EntityType::Org => "ORG",
            EntityType::Location => "LOCATION",
            EntityType::Facility => "FACILITY",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PERSON" => Ok(EntityType::Person),
            "ORG" | "ORGANIZATION" => Ok(EntityType::Org),
            "LOCATION" | "LOC" => Ok(EntityType::Location),
            "FACILITY" | "FAC" => Ok(EntityType::Facility),
            other => Err(other.to_string()),
        }
    }
}

/// Token span `start..end` (exclusive) naming an entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub start: usize,
    pub end: usize,
    pub kind: EntityType,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedTweet {
    pub tokens: Vec<String>,
    pub pos_tags: Vec<PosTag>,
    pub entities: Vec<Entity>,
}

impl AnnotatedTweet {
    /// Checks tag count, span bounds and that spans do not overlap.
    pub fn new(
        tokens: Vec<String>,
        pos_tags: Vec<PosTag>,
        mut entities: Vec<Entity>,
    ) -> Result<Self, HeuristicError> {
        if tokens.len() != pos_tags.len() {
            return Err(HeuristicError::Invalid(format!(
                "{} tokens but {} tags",
                tokens.len(),
                pos_tags.len()
            )));
        }
        entities.sort_by_key(|e| (e.start, e.end));
        let mut last_end = 0;
        for e in &entities {
            if e.start >= e.end || e.end > tokens.len() {
                return Err(HeuristicError::Invalid(format!(
                    "span {}:{} outside {} tokens",
                    e.start,
                    e.end,
                    tokens.len()
                )));
            }
            if e.start < last_end {
                return Err(HeuristicError::Invalid(format!(
                    "span {}:{} overlaps another entity",
                    e.start, e.end
                )));
            }
            last_end = e.end;
        }
        Ok(Self {
            tokens,
            pos_tags,
            entities,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTrace {
    pub rule_fired: u8,
    pub label: TargetLabel,
}

/// Word pairs checked by rule 4.
pub const TARGET_BIGRAMS: [(&str, &str); 3] = [("he", "is"), ("she", "is"), ("you", "are")];

fn fired(rule: u8) -> (TargetLabel, RuleTrace) {
    let label = match rule {
        3 | 7 => TargetLabel::Unt,
        _ => TargetLabel::Tin,
    };
    (
        label,
        RuleTrace {
            rule_fired: rule,
            label,
        },
    )
}

pub fn classify_target(t: &AnnotatedTweet, lex: &HeuristicLexicon) -> (TargetLabel, RuleTrace) {
    let lower: Vec<String> = t.tokens.iter().map(|s| s.to_lowercase()).collect();
    if lower.iter().any(|w| lex.hashtags.contains(w)) {
        return fired(1);
    }
    if lower.iter().any(|w| lex.tokens.contains(w)) {
        return fired(2);
    }
    let has = |tag| t.pos_tags.contains(&tag);
    if t.entities.is_empty() && !has(PosTag::Prp) && !has(PosTag::Nnp) {
        return fired(3);
    }
    if lower
        .windows(2)
        .any(|w| TARGET_BIGRAMS.contains(&(w[0].as_str(), w[1].as_str())))
    {
        return fired(4);
    }
    if t.pos_tags.first() == Some(&PosTag::Hashtag) {
        let verb_then_entity = t
            .pos_tags
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &tag)| tag == PosTag::V)
            .any(|(i, _)| t.entities.iter().any(|e| e.start > i));
        if verb_then_entity {
            return fired(5);
        }
    }
    if !t.entities.is_empty() {
        return fired(6);
    }
    fired(7)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tweet(words: &str, tags: &[PosTag], entities: &[(usize, usize, EntityType)]) -> AnnotatedTweet {
        AnnotatedTweet::new(
            words.split_whitespace().map(String::from).collect(),
            tags.to_vec(),
            entities
                .iter()
                .map(|&(start, end, kind)| Entity { start, end, kind })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn seed_hashtag_fires_rule_one() {
        use PosTag::*;
        let t = tweet("#MAGA is garbage", &[Hashtag, V, N], &[]);
        let (label, trace) = classify_target(&t, &HeuristicLexicon::example_seed());
        assert_eq!((label, trace.rule_fired), (TargetLabel::Tin, 1));
    }

    #[test]
    fn no_target_markers_is_untargeted() {
        use PosTag::*;
        let t = tweet("complete garbage everywhere", &[Other, N, Other], &[]);
        let (label, trace) = classify_target(&t, &HeuristicLexicon::example_seed());
        assert_eq!((label, trace.rule_fired), (TargetLabel::Unt, 3));
    }

    #[test]
    fn you_are_fires_rule_four() {
        use PosTag::*;
        let t = tweet("you are a disgrace", &[Prp, V, Other, N], &[]);
        let (label, trace) = classify_target(&t, &HeuristicLexicon::default());
        assert_eq!((label, trace.rule_fired), (TargetLabel::Tin, 4));
    }

    #[test]
    fn rule_five_needs_entity_after_verb() {
        use PosTag::*;
        let lex = HeuristicLexicon::default();
        let t = tweet("#wow blame Hillary", &[Hashtag, V, Nnp], &[(2, 3, EntityType::Person)]);
        assert_eq!(classify_target(&t, &lex).1.rule_fired, 5);
        let t = tweet("#wow Hillary lies", &[Hashtag, Nnp, V], &[(1, 2, EntityType::Person)]);
        assert_eq!(classify_target(&t, &lex).1.rule_fired, 6);
    }

    #[test]
    fn pronoun_without_pattern_is_rule_seven() {
        use PosTag::*;
        let t = tweet("they suck", &[Prp, V], &[]);
        let (label, trace) = classify_target(&t, &HeuristicLexicon::default());
        assert_eq!((label, trace.rule_fired), (TargetLabel::Unt, 7));
    }

    #[test]
    fn rejects_bad_spans() {
        let toks = vec!["a".to_string(), "b".to_string()];
        let tags = vec![PosTag::N, PosTag::N];
        let e = |start, end| Entity { start, end, kind: EntityType::Org };
        assert!(AnnotatedTweet::new(toks.clone(), tags.clone(), vec![e(1, 3)]).is_err());
        assert!(AnnotatedTweet::new(toks.clone(), tags.clone(), vec![e(0, 2), e(1, 2)]).is_err());
        assert!(AnnotatedTweet::new(toks.clone(), vec![PosTag::N], vec![]).is_err());
        assert!(AnnotatedTweet::new(toks, tags, vec![e(0, 1), e(1, 2)]).is_ok());
    }
}
