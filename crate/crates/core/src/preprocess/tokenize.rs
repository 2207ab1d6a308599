use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Word,
    Hashtag,
    Mention,
    Url,
    Emoticon,
    Number,
    Punctuation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub kind: TokenKind,
}

impl Token {
    fn new(surface: &str, kind: TokenKind) -> Self {
        Self {
            surface: surface.to_string(),
            kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedTweet {
    pub tokens: Vec<Token>,
    pub source: String,
}

impl TokenizedTweet {
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

/// Emoticons recognized as single tokens. Lowercased variants are listed so
/// that lowercased output re-tokenizes the same way.
pub const EMOTICONS: &[&str] = &[
    ":-)", ":)", ":-(", ":(", ";-)", ";)", ":-D", ":D", ":-d", ":d", ":-P", ":P", ":-p", ":p",
    ";-P", ";P", ";-p", ";p", ":'(", ":'-(", ":-/", ":/", ":-|", ":|", ":-*", ":*", ":-O", ":O",
    ":-o", ":o", "<3", "</3", "^_^", "-_-", "o_o", "O_O", "xD", "XD", "xd", "=)", "=(", "=D",
    "=d", ">:(", ":@", ":$",
];

/// OLID replaces links with this placeholder.
const URL_PLACEHOLDER: &str = "URL";

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits a tweet into typed tokens. Total: every non-whitespace character
/// of the input lands in exactly one token, in order.
pub fn tokenize(text: &str) -> TokenizedTweet {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        tokenize_chunk(chunk, &mut tokens);
    }
    TokenizedTweet {
        tokens,
        source: text.to_string(),
    }
}

fn tokenize_chunk(chunk: &str, out: &mut Vec<Token>) {
    let mut rest = chunk;
    while let Some(first) = rest.chars().next() {
        let (len, kind) = next_token(rest, first);
        out.push(Token::new(&rest[..len], kind));
        rest = &rest[len..];
    }
}

/// Byte length and kind of the token at the start of `s`.
fn next_token(s: &str, first: char) -> (usize, TokenKind) {
    if let Some(len) = url_len(s) {
        return (len, TokenKind::Url);
    }
    if let Some(len) = emoticon_len(s) {
        return (len, TokenKind::Emoticon);
    }
    match first {
        '#' => (1 + word_run(&s[1..]), TokenKind::Hashtag),
        '@' => (1 + word_run(&s[1..]), TokenKind::Mention),
        c if c.is_ascii_digit() => number_or_word(s),
        c if is_word_char(c) => (word_len(s), TokenKind::Word),
        c => (c.len_utf8(), TokenKind::Punctuation),
    }
}

fn url_len(s: &str) -> Option<usize> {
    let lower = s.get(..8).unwrap_or(s).to_ascii_lowercase();
    if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") {
        return Some(s.len());
    }
    if let Some(after) = s.strip_prefix(URL_PLACEHOLDER) {
        if !after.starts_with(is_word_char) {
            return Some(URL_PLACEHOLDER.len());
        }
    }
    None
}

fn emoticon_len(s: &str) -> Option<usize> {
    EMOTICONS
        .iter()
        .filter(|e| s.starts_with(*e))
        .filter(|e| {
            // ":p" in ":people" is not an emoticon
            let last = e.chars().last().unwrap_or(' ');
            !(last.is_alphanumeric() && s[e.len()..].starts_with(is_word_char))
        })
        .map(|e| e.len())
        .max()
}

fn word_run(s: &str) -> usize {
    s.char_indices()
        .find(|&(_, c)| !is_word_char(c))
        .map_or(s.len(), |(i, _)| i)
}

/// Letters, digits and underscores, plus apostrophes and masking asterisks
/// when a letter follows them ("don't", "b**ch").
fn word_len(s: &str) -> usize {
    let chars: Vec<(usize, char)> = s.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        let next = if is_word_char(c) {
            i + 1
        } else if c == '*' {
            let mut j = i;
            while j < chars.len() && chars[j].1 == '*' {
                j += 1;
            }
            j
        } else if is_apostrophe(c) {
            i + 1
        } else {
            break;
        };
        if !is_word_char(c) && !chars.get(next).is_some_and(|&(_, n)| n.is_alphabetic()) {
            break;
        }
        i = next;
    }
    chars.get(i).map_or(s.len(), |&(b, _)| b)
}

fn number_or_word(s: &str) -> (usize, TokenKind) {
    let chars: Vec<(usize, char)> = s.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        let separator = (c == '.' || c == ',')
            && chars.get(i + 1).is_some_and(|&(_, n)| n.is_ascii_digit());
        if c.is_ascii_digit() || (separator && i > 0) {
            i += 1;
        } else {
            break;
        }
    }
    let number_end = chars.get(i).map_or(s.len(), |&(b, _)| b);
    if s[number_end..].starts_with(is_word_char) && !s[..number_end].contains(['.', ',']) {
        (word_len(s), TokenKind::Word)
    } else {
        (number_end, TokenKind::Number)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use TokenKind::*;

    fn kinds(text: &str) -> Vec<(String, TokenKind)> {
        tokenize(text)
            .tokens
            .into_iter()
            .map(|t| (t.surface, t.kind))
            .collect()
    }

    fn pairs(v: &[(&str, TokenKind)]) -> Vec<(String, TokenKind)> {
        v.iter().map(|&(s, k)| (s.to_string(), k)).collect()
    }

    #[test]
    fn mention_hashtag_and_punctuation() {
        assert_eq!(
            kinds("@USER she is #fatbastard!!"),
            pairs(&[
                ("@USER", Mention),
                ("she", Word),
                ("is", Word),
                ("#fatbastard", Hashtag),
                ("!", Punctuation),
                ("!", Punctuation),
            ])
        );
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("").tokens.is_empty());
        assert!(tokenize("  \t ").tokens.is_empty());
    }

    #[test]
    fn emoticon_before_punctuation() {
        assert_eq!(kinds("gr8 :)"), pairs(&[("gr8", Word), (":)", Emoticon)]));
        assert_eq!(kinds("ok:-("), pairs(&[("ok", Word), (":-(", Emoticon)]));
        assert_eq!(
            kinds(":people"),
            pairs(&[(":", Punctuation), ("people", Word)])
        );
    }

    #[test]
    fn urls() {
        assert_eq!(
            kinds("see https://t.co/abc, URL."),
            pairs(&[
                ("see", Word),
                ("https://t.co/abc,", Url),
                ("URL", Url),
                (".", Punctuation),
            ])
        );
        assert_eq!(kinds("URLs"), pairs(&[("URLs", Word)]));
    }

    #[test]
    fn masked_profanity_stays_whole() {
        assert_eq!(kinds("b**ch"), pairs(&[("b**ch", Word)]));
        assert_eq!(kinds("bi*ch!"), pairs(&[("bi*ch", Word), ("!", Punctuation)]));
        assert_eq!(
            kinds("f***"),
            pairs(&[("f", Word), ("*", Punctuation), ("*", Punctuation), ("*", Punctuation)])
        );
    }

    #[test]
    fn numbers_and_contractions() {
        assert_eq!(
            kinds("17.4 million haven't"),
            pairs(&[("17.4", Number), ("million", Word), ("haven't", Word)])
        );
        assert_eq!(kinds("AR15's"), pairs(&[("AR15's", Word)]));
        assert_eq!(kinds("2nd"), pairs(&[("2nd", Word)]));
    }

    #[test]
    fn lone_markers_keep_their_kind() {
        assert_eq!(kinds("# @"), pairs(&[("#", Hashtag), ("@", Mention)]));
    }

    proptest! {
        #[test]
        fn no_characters_lost(text in "[ a-zA-Z0-9#@:;()*'.,!?\u{e9}\u{1F600}-]{0,60}") {
            let t = tokenize(&text);
            let joined: String = t.surfaces().collect();
            let expected: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(joined, expected);
            for tok in &t.tokens {
                prop_assert!(!tok.surface.is_empty());
                prop_assert_eq!(tok.kind == Hashtag, tok.surface.starts_with('#'));
                prop_assert_eq!(tok.kind == Mention, tok.surface.starts_with('@'));
            }
        }
    }
}
