//! Static word vectors with a hashed character n-gram fallback for tokens
//! missing from the vocabulary.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_BUCKET_COUNT: usize = 2_000;
pub const MIN_NGRAM: usize = 3;
pub const MAX_NGRAM: usize = 6;
const BUCKET_SEED: u64 = 0x7e57_c4a7;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Character n-grams (`MIN_NGRAM..=MAX_NGRAM`) of the token wrapped in `<` `>`.
pub fn char_ngrams(token: &str) -> Vec<String> {
    let wrapped: Vec<char> = format!("<{token}>").chars().collect();
    let mut grams = Vec::new();
    for n in MIN_NGRAM..=MAX_NGRAM {
        if n > wrapped.len() {
            break;
        }
        for window in wrapped.windows(n) {
            grams.push(window.iter().collect());
        }
    }
    grams
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    vocab: HashMap<String, Vec<f64>>,
    buckets: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    /// A table with no vocabulary; every token goes through the n-gram buckets.
    pub fn hashed_only(dimension: usize) -> Result<Self> {
        Self::new(dimension, HashMap::new(), DEFAULT_BUCKET_COUNT)
    }

    pub fn new(
        dimension: usize,
        vocab: HashMap<String, Vec<f64>>,
        bucket_count: usize,
    ) -> Result<Self> {
        if dimension == 0 || bucket_count == 0 {
            return Err(Error::InvalidConfig(
                "embedding dimension and bucket count must be positive".into(),
            ));
        }
        if let Some(v) = vocab.values().find(|v| v.len() != dimension) {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                actual: v.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(BUCKET_SEED);
        let bound = 0.5 / dimension as f64;
        let buckets = (0..bucket_count)
            .map(|_| (0..dimension).map(|_| rng.gen_range(-bound..bound)).collect())
            .collect();
        Ok(Self {
            dimension,
            vocab,
            buckets,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    pub fn bucket(&self, index: usize) -> &[f64] {
        &self.buckets[index]
    }

    pub fn bucket_index(&self, ngram: &str) -> usize {
        (fnv1a(ngram.as_bytes()) % self.buckets.len() as u64) as usize
    }

    pub fn embed_token(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.vocab.get(token) {
            return v.clone();
        }
        let grams = char_ngrams(token);
        let mut out = vec![0.0; self.dimension];
        for gram in &grams {
            for (o, b) in out.iter_mut().zip(&self.buckets[self.bucket_index(gram)]) {
                *o += b;
            }
        }
        let n = grams.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// One row per token.
    pub fn embed_sequence<S: AsRef<str>>(&self, tokens: &[S]) -> Array2<f64> {
        let mut m = Array2::zeros((tokens.len(), self.dimension));
        for (mut row, token) in m.rows_mut().into_iter().zip(tokens) {
            for (r, v) in row.iter_mut().zip(self.embed_token(token.as_ref())) {
                *r = v;
            }
        }
        m
    }
}

/// Parse the common text vector format: an optional `<count> <dim>` header,
/// then `<token> v1 … vdim` per line.
pub fn load_vectors(bytes: &[u8]) -> Result<EmbeddingTable> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::VectorFormat {
        line: 1,
        message: format!("invalid UTF-8: {e}"),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    let Some(&(_, first)) = lines.peek() else {
        return Err(Error::VectorFormat {
            line: 1,
            message: "empty vector file".into(),
        });
    };

    let mut dimension = None;
    let fields: Vec<&str> = first.split_whitespace().collect();
    if fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
        dimension = Some(fields[1].parse::<usize>().unwrap());
        lines.next();
    }

    let mut vocab = HashMap::new();
    for (i, line) in lines {
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-blank line has a field");
        let vector = parts
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::VectorFormat {
                        line: i + 1,
                        message: format!("non-numeric component {p:?}"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let dim = *dimension.get_or_insert(vector.len());
        if vector.len() != dim {
            return Err(Error::VectorFormat {
                line: i + 1,
                message: format!("expected {dim} components, found {}", vector.len()),
            });
        }
        vocab.insert(token.to_string(), vector);
    }
    let dimension = dimension.unwrap_or(0);
    if dimension == 0 {
        return Err(Error::VectorFormat {
            line: 1,
            message: "no vectors found".into(),
        });
    }
    EmbeddingTable::new(dimension, vocab, DEFAULT_BUCKET_COUNT)
}
