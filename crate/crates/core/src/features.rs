//! Sparse features for the linear models: a document-frequency vocabulary
//! with smoothed TF-IDF weighting, and hashed word n-grams.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VOCAB_FORMAT_VERSION: u32 = 1;

pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Sparse vector with strictly increasing indices and no zero weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn from_map(map: BTreeMap<u32, f64>) -> Self {
        FeatureVector {
            entries: map.into_iter().filter(|&(_, w)| w != 0.0).collect(),
        }
    }

    /// Builds a vector from arbitrary pairs; duplicate indices are summed.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut map = BTreeMap::new();
        for (i, w) in pairs {
            *map.entry(i).or_insert(0.0) += w;
        }
        Self::from_map(map)
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w.abs()).sum()
    }

    fn scaled(mut self, factor: f64) -> Self {
        for (_, w) in &mut self.entries {
            *w *= factor;
        }
        self
    }

    pub fn max_index(&self) -> Option<u32> {
        self.entries.last().map(|&(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyDoc", into = "VocabularyDoc")]
pub struct Vocabulary {
    terms: Vec<String>,
    document_frequency: Vec<usize>,
    index: HashMap<String, u32>,
    n_documents: usize,
    min_df: usize,
    max_terms: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyDoc {
    format_version: u32,
    n_documents: usize,
    min_df: usize,
    max_terms: usize,
    /// (term, document frequency) in index order.
    terms: Vec<(String, usize)>,
}

impl From<Vocabulary> for VocabularyDoc {
    fn from(v: Vocabulary) -> Self {
        VocabularyDoc {
            format_version: VOCAB_FORMAT_VERSION,
            n_documents: v.n_documents,
            min_df: v.min_df,
            max_terms: v.max_terms,
            terms: v.terms.into_iter().zip(v.document_frequency).collect(),
        }
    }
}

impl TryFrom<VocabularyDoc> for Vocabulary {
    type Error = Error;

    fn try_from(doc: VocabularyDoc) -> Result<Self> {
        if doc.format_version != VOCAB_FORMAT_VERSION {
            return Err(Error::Version {
                found: doc.format_version,
                expected: VOCAB_FORMAT_VERSION,
            });
        }
        let (terms, document_frequency): (Vec<_>, Vec<_>) = doc.terms.into_iter().unzip();
        Ok(Vocabulary::from_parts(
            terms,
            document_frequency,
            doc.n_documents,
            doc.min_df,
            doc.max_terms,
        ))
    }
}

impl Vocabulary {
    pub const DEFAULT_MIN_DF: usize = 2;
    pub const DEFAULT_MAX_TERMS: usize = 200_000;

    fn from_parts(
        terms: Vec<String>,
        document_frequency: Vec<usize>,
        n_documents: usize,
        min_df: usize,
        max_terms: usize,
    ) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            terms,
            document_frequency,
            index,
            n_documents,
            min_df,
            max_terms,
        }
    }

    /// Counts document frequencies and keeps terms with `df >= min_df`,
    /// ordered by (df descending, term ascending), capped at `max_terms`.
    pub fn fit<I, S>(docs: I, min_df: usize, max_terms: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_df == 0 || max_terms == 0 {
            return Err(Error::Config("min_df and max_terms must be at least 1".into()));
        }
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_documents = 0usize;
        for doc in docs {
            n_documents += 1;
            let mut tokens = tokenize(doc.as_ref());
            tokens.sort_unstable();
            tokens.dedup();
            for t in tokens {
                match df.get_mut(t) {
                    Some(c) => *c += 1,
                    None => {
                        df.insert(t.to_string(), 1);
                    }
                }
            }
        }
        if n_documents == 0 {
            return Err(Error::Data("cannot fit a vocabulary on an empty corpus".into()));
        }
        let mut kept: Vec<(String, usize)> = df.into_iter().filter(|&(_, c)| c >= min_df).collect();
        kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(max_terms);
        let (terms, freqs) = kept.into_iter().unzip();
        Ok(Self::from_parts(terms, freqs, n_documents, min_df, max_terms))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_documents(&self) -> usize {
        self.n_documents
    }

    pub fn get(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: u32) -> Option<&str> {
        self.terms.get(index as usize).map(String::as_str)
    }

    pub fn document_frequency(&self, index: u32) -> usize {
        self.document_frequency[index as usize]
    }

    pub fn idf(&self, index: u32) -> f64 {
        let n = self.n_documents as f64;
        let df = self.document_frequency(index) as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    /// Smoothed TF-IDF, L2-normalized. Out-of-vocabulary tokens are ignored.
    pub fn tfidf_transform<S: AsRef<str>>(&self, tokens: &[S]) -> FeatureVector {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(i) = self.get(t.as_ref()) {
                *tf.entry(i).or_insert(0.0) += 1.0;
            }
        }
        for (i, w) in tf.iter_mut() {
            *w *= self.idf(*i);
        }
        let v = FeatureVector::from_map(tf);
        let norm = v.l2_norm();
        if norm > 0.0 {
            v.scaled(1.0 / norm)
        } else {
            v
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. The seed is mixed into the offset basis; seed 0 gives the
/// standard hash.
pub fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashedNgramExtractor {
    pub n_buckets: u32,
    pub ngram_orders: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub l1_normalize: bool,
}

impl Default for HashedNgramExtractor {
    fn default() -> Self {
        HashedNgramExtractor {
            n_buckets: 1 << 21,
            ngram_orders: vec![1, 2],
            seed: 0,
            l1_normalize: false,
        }
    }
}

impl HashedNgramExtractor {
    pub fn validate(&self) -> Result<()> {
        if !self.n_buckets.is_power_of_two() {
            return Err(Error::Config(format!("n_buckets {} is not a power of two", self.n_buckets)));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::Config("ngram_orders must be non-empty and positive".into()));
        }
        Ok(())
    }

    pub fn bucket(&self, ngram: &str) -> u32 {
        (fnv1a64(ngram.as_bytes(), self.seed) & (self.n_buckets as u64 - 1)) as u32
    }

    fn bucket_of<S: AsRef<str>>(&self, tokens: &[S]) -> u32 {
        let mut h = FNV_OFFSET ^ self.seed;
        for (k, t) in tokens.iter().enumerate() {
            if k > 0 {
                h ^= b' ' as u64;
                h = h.wrapping_mul(FNV_PRIME);
            }
            for &b in t.as_ref().as_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(FNV_PRIME);
            }
        }
        (h & (self.n_buckets as u64 - 1)) as u32
    }

    /// Counts every configured n-gram per bucket; colliding n-grams sum.
    pub fn hash_ngrams<S: AsRef<str>>(&self, tokens: &[S]) -> FeatureVector {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for &n in &self.ngram_orders {
            if n == 0 || n > tokens.len() {
                continue;
            }
            for window in tokens.windows(n) {
                *counts.entry(self.bucket_of(window)).or_insert(0.0) += 1.0;
            }
        }
        let v = FeatureVector::from_map(counts);
        if self.l1_normalize && !v.is_empty() {
            let total = v.l1_norm();
            v.scaled(1.0 / total)
        } else {
            v
        }
    }
}
