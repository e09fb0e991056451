//! TF-IDF featurization: raw term counts, smoothed idf, L2 normalization.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lowercased maximal runs of Unicode letters and digits.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub min_df: usize,
    pub max_features: usize,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            min_df: 2,
            max_features: 50_000,
        }
    }
}

impl FeaturizerConfig {
    /// Corpora smaller than this fall back to `min_df = 1`.
    pub const SMALL_CORPUS: usize = 50;

    pub fn effective_min_df(&self, n_docs: usize) -> usize {
        if n_docs < Self::SMALL_CORPUS {
            1
        } else {
            self.min_df
        }
    }
}

/// Frozen term → column mapping with per-column idf weights. Columns are
/// assigned in lexicographic term order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    term_to_index: HashMap<String, usize>,
    idf: Vec<f64>,
    fitted_on: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.term_to_index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.terms.get(index).map(String::as_str)
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn fitted_on(&self) -> usize {
        self.fitted_on
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&VocabularyFile::from(self)).expect("vocabulary serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VocabularyFile::from(self)).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(s)?;
        Self::try_from(file)
    }

    /// Turns `text` into an L2-normalized TF-IDF vector. Out-of-vocabulary
    /// tokens are dropped; text with no known tokens maps to the zero vector.
    pub fn vectorize(&self, text: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(&i) = self.term_to_index.get(&tok) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> = counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            entries.iter_mut().for_each(|(_, v)| *v /= norm);
        }
        SparseVector {
            dim: self.len(),
            entries,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabularyFile {
    fitted_on: usize,
    terms: Vec<VocabEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabEntry {
    term: String,
    index: usize,
    idf: f64,
}

impl From<&Vocabulary> for VocabularyFile {
    fn from(v: &Vocabulary) -> Self {
        VocabularyFile {
            fitted_on: v.fitted_on,
            terms: v
                .terms
                .iter()
                .zip(&v.idf)
                .enumerate()
                .map(|(index, (term, &idf))| VocabEntry {
                    term: term.clone(),
                    index,
                    idf,
                })
                .collect(),
        }
    }
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = Error;

    fn try_from(mut file: VocabularyFile) -> Result<Self> {
        file.terms.sort_by_key(|e| e.index);
        if file.terms.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut terms = Vec::with_capacity(file.terms.len());
        let mut idf = Vec::with_capacity(file.terms.len());
        let mut term_to_index = HashMap::with_capacity(file.terms.len());
        for (i, e) in file.terms.into_iter().enumerate() {
            if e.index != i || !(e.idf.is_finite() && e.idf >= 1.0) {
                return Err(Error::MalformedDataset(format!("bad vocabulary entry for `{}`", e.term)));
            }
            if term_to_index.insert(e.term.clone(), i).is_some() {
                return Err(Error::MalformedDataset(format!("duplicate vocabulary term `{}`", e.term)));
            }
            terms.push(e.term);
            idf.push(e.idf);
        }
        Ok(Vocabulary {
            terms,
            term_to_index,
            idf,
            fitted_on: file.fitted_on,
        })
    }
}

/// Fits a vocabulary over `texts`.
///
/// Terms need document frequency `>= min_df`. When more than `max_features`
/// survive, the highest-df terms are kept (ties go to the lexicographically
/// smaller term). `idf = ln((1 + N) / (1 + df)) + 1`.
pub fn fit_vocabulary<'a, I>(texts: I, min_df: usize, max_features: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if min_df < 1 || max_features < 1 {
        return Err(Error::InvalidConfig("min_df and max_features must be >= 1".into()));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut n_docs = 0usize;
    for text in texts {
        n_docs += 1;
        let unique: HashSet<String> = tokenize(text).into_iter().collect();
        for t in unique {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    if n_docs == 0 {
        return Err(Error::EmptyCorpus);
    }

    let mut kept: Vec<(String, usize)> = df.into_iter().filter(|(_, d)| *d >= min_df).collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    if kept.len() > max_features {
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(max_features);
    }
    kept.sort_by(|a, b| a.0.cmp(&b.0));

    let n = n_docs as f64;
    let idf = kept
        .iter()
        .map(|(_, d)| ((1.0 + n) / (1.0 + *d as f64)).ln() + 1.0)
        .collect();
    let terms: Vec<String> = kept.into_iter().map(|(t, _)| t).collect();
    let term_to_index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(Vocabulary {
        terms,
        term_to_index,
        idf,
        fitted_on: n_docs,
    })
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    /// Dot product with a dense row of length `dim`.
    #[inline]
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| dense[i] * v).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}
