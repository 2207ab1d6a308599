//! Pretrained word vectors, vocabulary and fixed-length encoding.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nncore::Tensor;

/// Sequence length every tweet is padded or truncated to.
pub const MAX_LEN: usize = 200;
/// Dimensionality of the Twitter-trained GloVe vectors.
pub const EMBEDDING_DIM: usize = 200;
pub const PAD_INDEX: u32 = 0;
pub const OOV_INDEX: u32 = 1;
/// Half-width of the uniform range for rows without a pretrained vector.
pub const RANDOM_INIT_RANGE: f32 = 0.05;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no valid {dim}-dimensional vectors found ({skipped} malformed lines)")]
    Empty { dim: usize, skipped: usize },
    #[error("embedding dimension must be positive")]
    ZeroDim,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
    /// Lines dropped for having the wrong number of values.
    pub skipped: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(Self {
            dim,
            vectors: HashMap::new(),
            skipped: 0,
        })
    }

    /// Inserts a vector unless the word is already present or the length is
    /// wrong. Returns whether it was stored.
    pub fn insert(&mut self, word: &str, vector: Vec<f32>) -> bool {
        if vector.len() != self.dim || self.vectors.contains_key(word) {
            return false;
        }
        self.vectors.insert(word.to_string(), vector);
        true
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn read_from(reader: impl BufRead, expected_dim: usize) -> Result<Self, EmbeddingError> {
        let mut table = Self::new(expected_dim)?;
        for line in reader.lines() {
            let line = line.map_err(|source| EmbeddingError::Io {
                path: "<reader>".into(),
                source,
            })?;
            let mut parts = line.split(' ').filter(|s| !s.is_empty());
            let Some(word) = parts.next() else { continue };
            let values: Result<Vec<f32>, _> = parts.map(str::parse::<f32>).collect();
            match values {
                Ok(v) if v.len() == expected_dim => {
                    table.insert(word, v);
                }
                _ => table.skipped += 1,
            }
        }
        if table.is_empty() {
            return Err(EmbeddingError::Empty {
                dim: expected_dim,
                skipped: table.skipped,
            });
        }
        if table.skipped > 0 {
            log::warn!("skipped {} malformed embedding lines", table.skipped);
        }
        Ok(table)
    }
}

/// Loads a whitespace-separated `word v1 ... vd` text file. Duplicate words
/// keep their first vector.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected_dim: usize,
) -> Result<EmbeddingTable, EmbeddingError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    EmbeddingTable::read_from(BufReader::new(file), expected_dim)
}

/// Word → index map. Index 0 is padding and index 1 the shared
/// out-of-vocabulary slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary whose indices 2.. follow `words` in order.
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        let mut vocab = Self {
            words: vec!["<pad>".into(), "<oov>".into()],
            index: HashMap::new(),
        };
        for w in words {
            if !vocab.index.contains_key(&w) {
                vocab.index.insert(w.clone(), vocab.words.len() as u32);
                vocab.words.push(w);
            }
        }
        vocab
    }

    /// Number of rows including the two reserved ones.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() == 2
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: u32) -> Option<&str> {
        match index {
            PAD_INDEX | OOV_INDEX => None,
            i => self.words.get(i as usize).map(String::as_str),
        }
    }

    /// Real words in index order, starting at index 2.
    pub fn words(&self) -> &[String] {
        &self.words[2..]
    }
}

/// Counts words and assigns indices 2.. by descending frequency, ties broken
/// lexicographically.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Vocabulary {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for tokens in corpus {
        for t in tokens {
            *counts.entry(t.as_ref()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count.max(1))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_words(ranked.into_iter().map(|(w, _)| w.to_string()))
}

/// `V x dim` matrix: zero padding row, pretrained rows copied, everything
/// else uniform in ±[`RANDOM_INIT_RANGE`] from `seed`.
pub fn build_embedding_matrix(v: &Vocabulary, t: &EmbeddingTable, seed: u64) -> Tensor<f32> {
    let dim = t.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0f32; v.len() * dim];
    for (row, chunk) in values.chunks_mut(dim).enumerate().skip(1) {
        match v.word(row as u32).and_then(|w| t.get(w)) {
            Some(vec) => chunk.copy_from_slice(vec),
            None => chunk
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-RANDOM_INIT_RANGE..=RANDOM_INIT_RANGE)),
        }
    }
    Tensor::from_vec(vec![v.len(), dim], values)
}

/// A tweet as a fixed-length index sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncodedSequence {
    pub indices: Vec<u32>,
    /// Count of non-padding positions at the front.
    pub true_length: usize,
}

impl EncodedSequence {
    pub fn new(indices: Vec<u32>, true_length: usize) -> Self {
        Self {
            indices,
            true_length,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Maps the first `max_len` tokens to indices (OOV → 1) and post-pads with 0.
pub fn encode<S: AsRef<str>>(tokens: &[S], v: &Vocabulary, max_len: usize) -> EncodedSequence {
    let mut indices = vec![PAD_INDEX; max_len];
    let n = tokens.len().min(max_len);
    for (slot, t) in indices.iter_mut().zip(&tokens[..n]) {
        *slot = v.get(t.as_ref()).unwrap_or(OOV_INDEX);
    }
    EncodedSequence::new(indices, n)
}
