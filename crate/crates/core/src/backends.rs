//! Cold-start predictors: an external HTTP endpoint speaking a small JSON
//! contract, and an offline keyword-hint fallback.
//!
//! Wire contract: `POST {endpoint}` with `{"texts": [..], "labels": [..]}`,
//! answered by HTTP 200 and `{"probs": [[..], ..]}` (one row per text, one
//! column per label).

use std::collections::{HashMap, HashSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::classifier::softmax;
use crate::corpus::LabelSchema;
use crate::error::{Error, Result};
use crate::featurizer::tokenize;

/// Anything that can produce class distributions without labeled data.
pub trait ZeroShot {
    fn predict_batch(&self, texts: &[&str], schema: &LabelSchema) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub endpoint_url: Url,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub max_batch: usize,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl BackendDescriptor {
    pub fn new(name: impl Into<String>, endpoint_url: &str, timeout: Duration, max_batch: usize) -> Result<Self> {
        let endpoint_url = Url::parse(endpoint_url).map_err(|e| Error::InvalidConfig(format!("endpoint url: {e}")))?;
        if !matches!(endpoint_url.scheme(), "http" | "https") {
            return Err(Error::InvalidConfig(format!("unsupported scheme `{}`", endpoint_url.scheme())));
        }
        if timeout.is_zero() {
            return Err(Error::InvalidConfig("timeout must be positive".into()));
        }
        if max_batch < 1 {
            return Err(Error::InvalidConfig("max_batch must be >= 1".into()));
        }
        Ok(Self {
            name: name.into(),
            endpoint_url,
            timeout,
            max_batch,
        })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    texts: &'a [&'a str],
    labels: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    probs: Vec<Vec<f64>>,
}

/// Rescales a non-negative row to sum to one; an all-zero row becomes uniform.
pub fn renormalize(row: &[f64]) -> Result<Vec<f64>> {
    if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::BackendProtocolError(format!("row {row:?} has negative or non-finite entries")));
    }
    let total: f64 = row.iter().sum();
    if total == 0.0 {
        return Ok(vec![1.0 / row.len() as f64; row.len()]);
    }
    Ok(row.iter().map(|v| v / total).collect())
}

/// One request to the backend for up to `max_batch` texts.
pub fn predict_external(backend: &BackendDescriptor, texts: &[&str], schema: &LabelSchema) -> Result<Vec<Vec<f64>>> {
    if texts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if texts.len() > backend.max_batch {
        return Err(Error::InvalidConfig(format!(
            "{} texts exceed max_batch {} of backend `{}`",
            texts.len(),
            backend.max_batch,
            backend.name
        )));
    }
    let client = reqwest::blocking::Client::builder()
        .timeout(backend.timeout)
        .connect_timeout(backend.timeout)
        .build()
        .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
    let resp = client
        .post(backend.endpoint_url.clone())
        .json(&WireRequest {
            texts,
            labels: schema.labels(),
        })
        .send()
        .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
    if resp.status() != reqwest::StatusCode::OK {
        return Err(Error::BackendUnavailable(format!("`{}` answered {}", backend.name, resp.status())));
    }
    let body = resp.bytes().map_err(|e| Error::BackendUnavailable(e.to_string()))?;
    let wire: WireResponse =
        serde_json::from_slice(&body).map_err(|e| Error::BackendProtocolError(format!("bad response body: {e}")))?;
    if wire.probs.len() != texts.len() {
        return Err(Error::BackendProtocolError(format!(
            "{} rows for {} texts",
            wire.probs.len(),
            texts.len()
        )));
    }
    wire.probs
        .iter()
        .map(|row| {
            if row.len() != schema.len() {
                return Err(Error::BackendProtocolError(format!(
                    "row of length {} for {} labels",
                    row.len(),
                    schema.len()
                )));
            }
            renormalize(row)
        })
        .collect()
}

impl ZeroShot for BackendDescriptor {
    fn predict_batch(&self, texts: &[&str], schema: &LabelSchema) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.max_batch) {
            out.extend(predict_external(self, chunk, schema)?);
        }
        Ok(out)
    }
}

/// Softmax over per-label counts of hint-term hits in the text.
pub fn lexical_zero_shot(text: &str, schema: &LabelSchema, label_hints: &HashMap<String, Vec<String>>) -> Result<Vec<f64>> {
    LexicalZeroShot::new(schema, label_hints)?.score(text)
}

#[derive(Debug, Clone)]
pub struct LexicalZeroShot {
    /// Per class index, the set of lowercased hint tokens.
    hints: Vec<HashSet<String>>,
}

impl LexicalZeroShot {
    pub fn new(schema: &LabelSchema, label_hints: &HashMap<String, Vec<String>>) -> Result<Self> {
        let mut hints = vec![HashSet::new(); schema.len()];
        for (label, terms) in label_hints {
            let c = schema
                .index_of(label)
                .ok_or_else(|| Error::InvalidConfig(format!("hint label `{label}` is not in the schema")))?;
            hints[c].extend(terms.iter().flat_map(|t| tokenize(t)));
        }
        if hints.iter().all(HashSet::is_empty) {
            return Err(Error::NoHints);
        }
        Ok(Self { hints })
    }

    pub fn score(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(text);
        let scores: Vec<f64> = self
            .hints
            .iter()
            .map(|h| tokens.iter().filter(|t| h.contains(*t)).count() as f64)
            .collect();
        Ok(softmax(&scores))
    }
}

impl ZeroShot for LexicalZeroShot {
    fn predict_batch(&self, texts: &[&str], schema: &LabelSchema) -> Result<Vec<Vec<f64>>> {
        if schema.len() != self.hints.len() {
            return Err(Error::DimMismatch {
                expected: self.hints.len(),
                got: schema.len(),
            });
        }
        texts.iter().map(|t| self.score(t)).collect()
    }
}
