use std::collections::BTreeMap;

use super::PreprocessError;

/// Unigram word counts used to split hashtag bodies into words.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SegmentationDictionary {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl SegmentationDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `count` occurrences of `word` (lowercased). Zero counts are ignored.
    pub fn add(&mut self, word: &str, count: u64) {
        if count == 0 || word.is_empty() {
            return;
        }
        *self.counts.entry(word.to_lowercase()).or_insert(0) += count;
        self.total += count;
    }

    pub fn extend(&mut self, other: &SegmentationDictionary) {
        for (w, &c) in &other.counts {
            self.add(w, c);
        }
    }

    /// Parses `word<TAB>count` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, PreprocessError> {
        let mut dict = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || PreprocessError::BadLine {
                line: i + 1,
                content: line.to_string(),
            };
            let (word, count) = line.split_once('\t').ok_or_else(bad)?;
            let count: u64 = count.trim().parse().map_err(|_| bad())?;
            dict.add(word.trim(), count);
        }
        Ok(dict)
    }

    /// English unigram frequencies bundled with the crate.
    pub fn builtin_english() -> Self {
        Self::parse(include_str!("../../data/unigrams.tsv")).expect("bundled dictionary parses")
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(w, &c)| (w.as_str(), c))
    }

    /// Natural-log probability of a chunk under the unigram model. Unknown
    /// chunks of `n` characters get `1 / (total * 10^(n-1))`.
    pub fn log_prob(&self, chunk: &str) -> f64 {
        let total = self.total.max(1) as f64;
        match self.count(chunk) {
            0 => {
                let n = chunk.chars().count().max(1) as f64;
                -total.ln() - (n - 1.0) * std::f64::consts::LN_10
            }
            c => (c as f64).ln() - total.ln(),
        }
    }
}

/// Maximum-probability split of a hashtag body into words.
///
/// The body is lowercased first. Dynamic programming over split points:
/// `best[j]` is the best log-probability of any segmentation of the first
/// `j` characters. Ties keep the split found first (longest leading chunk).
pub fn segment_hashtag(tag: &str, dict: &SegmentationDictionary) -> Vec<String> {
    let lower = tag.to_lowercase();
    let bounds: Vec<usize> = lower
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(lower.len()))
        .collect();
    let n = bounds.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    if dict.is_empty() {
        return vec![lower];
    }
    let mut best = vec![f64::NEG_INFINITY; n + 1];
    let mut back = vec![0usize; n + 1];
    best[0] = 0.0;
    for j in 1..=n {
        for i in 0..j {
            let score = best[i] + dict.log_prob(&lower[bounds[i]..bounds[j]]);
            if score > best[j] {
                best[j] = score;
                back[j] = i;
            }
        }
    }
    let mut words = Vec::new();
    let mut j = n;
    while j > 0 {
        let i = back[j];
        words.push(lower[bounds[i]..bounds[j]].to_string());
        j = i;
    }
    words.reverse();
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dict(entries: &[(&str, u64)]) -> SegmentationDictionary {
        let mut d = SegmentationDictionary::new();
        for &(w, c) in entries {
            d.add(w, c);
        }
        d
    }

    /// Independent oracle: score every one of the 2^(n-1) splits.
    fn brute_force(tag: &str, d: &SegmentationDictionary) -> Vec<String> {
        let chars: Vec<char> = tag.chars().collect();
        let n = chars.len();
        let total = d.total().max(1) as f64;
        let mut best: Option<(f64, Vec<String>)> = None;
        for mask in 0u32..(1 << (n - 1)) {
            let mut parts = Vec::new();
            let mut cur = String::new();
            for (k, &c) in chars.iter().enumerate() {
                cur.push(c);
                if k + 1 < n && mask & (1 << k) != 0 {
                    parts.push(std::mem::take(&mut cur));
                }
            }
            parts.push(cur);
            let score: f64 = parts
                .iter()
                .map(|p| match d.count(p) {
                    0 => (1.0 / (total * 10f64.powi(p.chars().count() as i32 - 1))).ln(),
                    c => (c as f64 / total).ln(),
                })
                .sum();
            if best.as_ref().is_none_or(|(s, _)| score > *s + 1e-12) {
                best = Some((score, parts));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn fat_bastard_with_builtin_list() {
        let d = SegmentationDictionary::builtin_english();
        assert_eq!(segment_hashtag("fatbastard", &d), ["fat", "bastard"]);
        assert_eq!(segment_hashtag("FatBastard", &d), ["fat", "bastard"]);
    }

    #[test]
    fn single_dictionary_word() {
        let d = dict(&[("maga", 50), ("ma", 10), ("ga", 10)]);
        assert_eq!(segment_hashtag("maga", &d), ["maga"]);
    }

    #[test]
    fn gun_control_matches_enumeration() {
        let d = dict(&[("gun", 1000), ("control", 800), ("gu", 1), ("ncontrol", 1)]);
        let expected = brute_force("guncontrol", &d);
        assert_eq!(expected, ["gun", "control"]);
        assert_eq!(segment_hashtag("guncontrol", &d), expected);
    }

    #[test]
    fn unknown_tag_stays_whole() {
        let d = dict(&[("the", 100)]);
        assert_eq!(segment_hashtag("qxzv", &d), ["qxzv"]);
    }

    #[test]
    fn empty_dictionary_does_not_divide_by_zero() {
        assert_eq!(segment_hashtag("abc", &SegmentationDictionary::new()), ["abc"]);
    }

    #[test]
    fn parse_rejects_missing_count() {
        assert!(SegmentationDictionary::parse("word\n").is_err());
        let d = SegmentationDictionary::parse("# c\nA\t3\nb\t2\n").unwrap();
        assert_eq!((d.count("a"), d.total()), (3, 5));
    }

    proptest! {
        #[test]
        fn output_concatenates_to_input(tag in "[a-zA-Z0-9_\u{e9}]{1,20}") {
            let d = dict(&[("a", 30), ("ab", 20), ("bc", 10), ("the", 40), ("cat", 5)]);
            let words = segment_hashtag(&tag, &d);
            prop_assert_eq!(words.concat(), tag.to_lowercase());
            prop_assert!(words.iter().all(|w| !w.is_empty()));
        }

        #[test]
        fn agrees_with_enumeration(tag in "[abct]{1,9}") {
            let d = dict(&[("a", 30), ("ab", 20), ("bc", 10), ("the", 40), ("cat", 5), ("t", 2)]);
            let ours = segment_hashtag(&tag, &d);
            let oracle = brute_force(&tag, &d);
            let score = |ws: &[String]| ws.iter().map(|w| d.log_prob(w)).sum::<f64>();
            prop_assert!((score(&ours) - score(&oracle)).abs() < 1e-9);
        }
    }
}
