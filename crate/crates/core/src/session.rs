//! The labeling loop: rank the selection pool, hand out a batch, take the
//! annotations back, retrain from scratch, evaluate, repeat.
//!
//! Two protocols decide where batches come from:
//!
//! * `paper_protocol`: batches are drawn from the evaluation set itself and
//!   each labeled row migrates out of it, so evaluation always runs on the
//!   rows not yet labeled.
//! * `pool_protocol`: batches come from a separate unlabeled pool and the
//!   evaluation set never changes.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::backends::ZeroShot;
use crate::classifier::{self, Model, TrainConfig};
use crate::corpus::{Document, LabelSchema};
use crate::error::{Error, Result};
use crate::evaluation::{LearningCurve, RoundMetrics};
use crate::featurizer::{fit_vocabulary, FeaturizerConfig, SparseVector, Vocabulary};
use crate::oracle::Oracle;
use crate::par;
use crate::uncertainty::{rank_pool, select_batch, Prediction, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[serde(alias = "paper")]
    PaperProtocol,
    #[serde(alias = "pool")]
    PoolProtocol,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::PaperProtocol => "paper_protocol",
            Protocol::PoolProtocol => "pool_protocol",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "paper" | "paper_protocol" => Ok(Protocol::PaperProtocol),
            "pool" | "pool_protocol" => Ok(Protocol::PoolProtocol),
            other => Err(Error::InvalidConfig(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub batch_size: usize,
    pub max_labels: usize,
    pub strategy: Strategy,
    pub protocol: Protocol,
    pub train: TrainConfig,
    pub featurizer: FeaturizerConfig,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            max_labels: 150,
            strategy: Strategy::MaxEntropy,
            protocol: Protocol::PaperProtocol,
            train: TrainConfig::default(),
            featurizer: FeaturizerConfig::default(),
            seed: 42,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidBatchSize);
        }
        if self.max_labels < self.batch_size {
            return Err(Error::InvalidConfig(format!(
                "max_labels {} is smaller than batch_size {}",
                self.max_labels, self.batch_size
            )));
        }
        if !self.max_labels.is_multiple_of(self.batch_size) {
            return Err(Error::InvalidConfig(format!(
                "max_labels {} is not a multiple of batch_size {}",
                self.max_labels, self.batch_size
            )));
        }
        if self.featurizer.min_df < 1 || self.featurizer.max_features < 1 {
            return Err(Error::InvalidConfig("min_df and max_features must be >= 1".into()));
        }
        self.train.validate()
    }

    pub fn planned_rounds(&self) -> usize {
        self.max_labels / self.batch_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Human,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub doc_id: String,
    pub label: usize,
    pub round: usize,
    pub source: AnnotationSource,
    pub timestamp: DateTime<Utc>,
}

/// Per-session data that never changes after creation.
#[derive(Debug)]
struct Corpus {
    schema: LabelSchema,
    vocab: Vocabulary,
    docs: HashMap<String, Document>,
    vectors: HashMap<String, SparseVector>,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: String,
    corpus: Arc<Corpus>,
    /// Unlabeled pool under `pool_protocol`; always empty under `paper_protocol`.
    pool: BTreeSet<String>,
    eval: BTreeSet<String>,
    labeled: Vec<Annotation>,
    round: usize,
    model: Model,
    curve: LearningCurve,
    pool_entropy: Vec<f64>,
    config: SessionConfig,
    /// Round-0 predictions from a zero-shot backend, keyed by doc id.
    cold_start: Option<Arc<HashMap<String, Vec<f64>>>>,
}

/// Starts a session at round 0 with an all-zero model.
///
/// Under `paper_protocol` `pool_docs` is ignored and batches are drawn from
/// `eval_docs`. The vocabulary is fitted once on every text the session
/// will see and then frozen.
pub fn create_session(
    session_id: impl Into<String>,
    pool_docs: &[Document],
    eval_docs: &[Document],
    schema: &LabelSchema,
    config: SessionConfig,
) -> Result<SessionState> {
    config.validate()?;
    if eval_docs.is_empty() {
        return Err(Error::EmptyEval);
    }
    let pool_docs: &[Document] = match config.protocol {
        Protocol::PaperProtocol => &[],
        Protocol::PoolProtocol => {
            if pool_docs.is_empty() {
                return Err(Error::PoolExhausted);
            }
            pool_docs
        }
    };

    let mut seen = HashSet::with_capacity(pool_docs.len() + eval_docs.len());
    for d in pool_docs.iter().chain(eval_docs) {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::DuplicateId(d.doc_id.clone()));
        }
        if let Some(l) = d.gold_label {
            if l >= schema.len() {
                return Err(Error::LabelOutOfRange(l));
            }
        }
    }
    if let Some(d) = eval_docs.iter().find(|d| d.gold_label.is_none()) {
        return Err(Error::MissingGold(d.doc_id.clone()));
    }
    if config.strategy.needs_gold() {
        if let Some(d) = pool_docs.iter().find(|d| d.gold_label.is_none()) {
            return Err(Error::MissingGold(d.doc_id.clone()));
        }
    }

    let all: Vec<&Document> = pool_docs.iter().chain(eval_docs).collect();
    let min_df = config.featurizer.effective_min_df(all.len());
    let vocab = fit_vocabulary(all.iter().map(|d| d.text.as_str()), min_df, config.featurizer.max_features)?;
    let vectors = par::map(&all, |d| vocab.vectorize(&d.text));
    let vectors: HashMap<String, SparseVector> = all.iter().map(|d| d.doc_id.clone()).zip(vectors).collect();
    let docs = all.iter().map(|d| (d.doc_id.clone(), (*d).clone())).collect();

    let model = Model::for_schema(schema, &vocab, config.train);
    let corpus = Arc::new(Corpus {
        schema: schema.clone(),
        vocab,
        docs,
        vectors,
    });
    let mut state = SessionState {
        session_id: session_id.into(),
        corpus,
        pool: pool_docs.iter().map(|d| d.doc_id.clone()).collect(),
        eval: eval_docs.iter().map(|d| d.doc_id.clone()).collect(),
        labeled: Vec::new(),
        round: 0,
        model,
        curve: LearningCurve::new(),
        pool_entropy: Vec::new(),
        config,
        cold_start: None,
    };
    let m = state.evaluate()?;
    state.curve.push(m)?;
    let h = state.mean_pool_entropy()?;
    state.pool_entropy.push(h);
    Ok(state)
}

impl SessionState {
    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.corpus.schema
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.corpus.vocab
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.curve
    }

    /// Mean entropy of the selection pool after each completed round,
    /// starting with round 0.
    pub fn pool_entropy_history(&self) -> &[f64] {
        &self.pool_entropy
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn labeled(&self) -> &[Annotation] {
        &self.labeled
    }

    pub fn labels_used(&self) -> usize {
        self.labeled.len()
    }

    pub fn budget_remaining(&self) -> usize {
        self.config.max_labels.saturating_sub(self.labeled.len())
    }

    pub fn pool_ids(&self) -> &BTreeSet<String> {
        &self.pool
    }

    pub fn eval_ids(&self) -> &BTreeSet<String> {
        &self.eval
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.corpus.docs.get(doc_id)
    }

    pub fn has_cold_start(&self) -> bool {
        self.cold_start.is_some()
    }

    /// Ids batches are drawn from: the pool, or the eval set under
    /// `paper_protocol`.
    pub fn selection_pool(&self) -> &BTreeSet<String> {
        match self.config.protocol {
            Protocol::PaperProtocol => &self.eval,
            Protocol::PoolProtocol => &self.pool,
        }
    }

    fn probs_for(&self, doc_id: &str) -> Result<Vec<f64>> {
        if self.round == 0 {
            if let Some(cs) = &self.cold_start {
                if let Some(p) = cs.get(doc_id) {
                    return Ok(p.clone());
                }
            }
        }
        self.model.predict(&self.corpus.vectors[doc_id])
    }

    /// Predictions for `ids` in the given order.
    pub fn predict_ids(&self, ids: &[&str]) -> Result<Vec<Prediction>> {
        par::map(ids, |id| Prediction::new(*id, self.probs_for(id)?))
            .into_iter()
            .collect()
    }

    fn evaluate(&self) -> Result<RoundMetrics> {
        if self.eval.is_empty() {
            return Err(Error::EmptyEval);
        }
        let ids: Vec<&str> = self.eval.iter().map(String::as_str).collect();
        let preds = self.predict_ids(&ids)?;
        let predicted: Vec<usize> = preds.iter().map(|p| p.predicted).collect();
        let gold: Vec<usize> = ids
            .iter()
            .map(|id| self.corpus.docs[*id].gold_label.ok_or_else(|| Error::MissingGold(id.to_string())))
            .collect::<Result<_>>()?;
        RoundMetrics::evaluate(self.labeled.len(), &predicted, &gold, self.corpus.schema.len())
    }

    /// Mean prediction entropy over the current selection pool (0 when empty).
    pub fn mean_pool_entropy(&self) -> Result<f64> {
        let ids: Vec<&str> = self.selection_pool().iter().map(String::as_str).collect();
        if ids.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict_ids(&ids)?;
        Ok(preds.iter().map(|p| p.entropy_nats).sum::<f64>() / preds.len() as f64)
    }

    /// Replaces the round-0 predictions with ones from a zero-shot predictor.
    ///
    /// Only allowed before the first annotation. If the predictor fails the
    /// session keeps the zero model and the error is returned for logging.
    pub fn attach_cold_start(&mut self, predictor: &dyn ZeroShot) -> Result<()> {
        if self.round != 0 {
            return Err(Error::InvalidConfig("cold start can only be attached at round 0".into()));
        }
        let ids: Vec<&String> = self.corpus.docs.keys().collect();
        let texts: Vec<&str> = ids.iter().map(|id| self.corpus.docs[*id].text.as_str()).collect();
        let probs = predictor.predict_batch(&texts, &self.corpus.schema)?;
        if probs.len() != ids.len() || probs.iter().any(|p| p.len() != self.corpus.schema.len()) {
            return Err(Error::BackendProtocolError("predictor returned the wrong shape".into()));
        }
        let map: HashMap<String, Vec<f64>> = ids.into_iter().cloned().zip(probs).collect();
        let previous = self.cold_start.replace(Arc::new(map));
        let rescored = self.evaluate().and_then(|m| Ok((m, self.mean_pool_entropy()?)));
        match rescored {
            Ok((m, h)) => {
                self.curve = LearningCurve::new();
                self.curve.push(m)?;
                self.pool_entropy = vec![h];
                Ok(())
            }
            Err(e) => {
                self.cold_start = previous;
                Err(e)
            }
        }
    }

    fn batch_cap(&self) -> usize {
        let pool = self.selection_pool().len();
        let pool = match self.config.protocol {
            // Keep at least one row to evaluate on.
            Protocol::PaperProtocol => pool.saturating_sub(1),
            Protocol::PoolProtocol => pool,
        };
        self.config.batch_size.min(self.budget_remaining()).min(pool)
    }

    fn gold_map(&self, ids: &[&str]) -> Result<HashMap<String, usize>> {
        ids.iter()
            .map(|id| {
                self.corpus.docs[*id]
                    .gold_label
                    .map(|g| (id.to_string(), g))
                    .ok_or_else(|| Error::MissingGold(id.to_string()))
            })
            .collect()
    }

    /// The whole selection pool in ranked order, with predictions.
    pub fn ranked_pool(&self) -> Result<Vec<Prediction>> {
        let ids: Vec<&str> = self.selection_pool().iter().map(String::as_str).collect();
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let preds = self.predict_ids(&ids)?;
        let gold = if self.config.strategy.needs_gold() {
            Some(self.gold_map(&ids)?)
        } else {
            None
        };
        let seed = self.config.seed ^ (self.round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let order = rank_pool(&preds, self.config.strategy, gold.as_ref(), seed)?;
        let mut by_id: HashMap<String, Prediction> = preds.into_iter().map(|p| (p.doc_id.clone(), p)).collect();
        Ok(order.into_iter().map(|id| by_id.remove(&id).expect("rank_pool permutes its input")).collect())
    }

    /// The next batch to label, highest priority first. Does not mutate.
    pub fn next_batch(&self) -> Result<Vec<(Document, Prediction)>> {
        if self.budget_remaining() == 0 {
            return Err(Error::BudgetExhausted(self.config.max_labels));
        }
        let k = self.batch_cap();
        if k == 0 {
            return Err(Error::PoolExhausted);
        }
        let ranked = self.ranked_pool()?;
        let ids: Vec<String> = ranked.iter().map(|p| p.doc_id.clone()).collect();
        let chosen = select_batch(&ids, k)?;
        Ok(ranked
            .into_iter()
            .take(chosen.len())
            .map(|p| (self.corpus.docs[&p.doc_id].clone(), p))
            .collect())
    }

    /// Records one round of labels, retrains from scratch and appends the
    /// round's metrics. Validation happens before any state changes.
    pub fn submit_annotations(
        &mut self,
        annotations: &[(String, usize)],
        source: AnnotationSource,
        timestamp: DateTime<Utc>,
    ) -> Result<&RoundMetrics> {
        if self.budget_remaining() == 0 {
            return Err(Error::BudgetExhausted(self.config.max_labels));
        }
        if annotations.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if annotations.len() > self.config.batch_size.min(self.budget_remaining()) {
            return Err(Error::InvalidConfig(format!(
                "{} annotations exceed the batch size {} or remaining budget {}",
                annotations.len(),
                self.config.batch_size,
                self.budget_remaining()
            )));
        }
        let mut ids = HashSet::with_capacity(annotations.len());
        for (id, label) in annotations {
            if !self.selection_pool().contains(id) || !ids.insert(id.as_str()) {
                return Err(Error::NotInPool(id.clone()));
            }
            if *label >= self.corpus.schema.len() {
                return Err(Error::LabelOutOfRange(*label));
            }
        }
        if self.config.protocol == Protocol::PaperProtocol && ids.len() >= self.eval.len() {
            return Err(Error::EmptyEval);
        }

        let round = self.round + 1;
        let mut next = self.clone();
        next.round = round;
        for (id, label) in annotations {
            next.pool.remove(id);
            next.eval.remove(id);
            next.labeled.push(Annotation {
                doc_id: id.clone(),
                label: *label,
                round,
                source,
                timestamp,
            });
        }
        next.retrain()?;
        let m = next.evaluate()?;
        next.curve.push(m)?;
        let h = next.mean_pool_entropy()?;
        next.pool_entropy.push(h);
        *self = next;
        Ok(self.curve.last().expect("curve has the round just pushed"))
    }

    fn retrain(&mut self) -> Result<()> {
        let examples: Vec<classifier::Example> = self
            .labeled
            .iter()
            .map(|a| (self.corpus.vectors[&a.doc_id].clone(), a.label))
            .collect();
        self.model = classifier::train(&examples, &self.corpus.schema, &self.corpus.vocab, self.config.train)?;
        Ok(())
    }

    /// Annotation history as JSONL.
    pub fn write_annotations_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for a in &self.labeled {
            serde_json::to_writer(&mut out, a)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Drives `state` to completion with `oracle` answering every batch. Stops
/// when the budget is spent or the pool runs out.
pub fn drive(state: &mut SessionState, oracle: &mut Oracle) -> Result<()> {
    loop {
        let batch = match state.next_batch() {
            Ok(b) => b,
            Err(Error::BudgetExhausted(_)) | Err(Error::PoolExhausted) => return Ok(()),
            Err(e) => return Err(e),
        };
        let labels = batch
            .iter()
            .map(|(d, _)| Ok((d.doc_id.clone(), oracle.label(&d.doc_id)?)))
            .collect::<Result<Vec<_>>>()?;
        state.submit_annotations(&labels, AnnotationSource::Oracle, DateTime::<Utc>::UNIX_EPOCH)?;
    }
}

/// Full simulated run; the curve has one entry per completed round plus
/// round 0. Deterministic in the inputs, the config and the oracle seed.
pub fn run_benchmark(
    eval_docs: &[Document],
    pool_docs: &[Document],
    schema: &LabelSchema,
    config: SessionConfig,
    oracle: &mut Oracle,
) -> Result<LearningCurve> {
    let mut state = create_session("benchmark", pool_docs, eval_docs, schema, config)?;
    drive(&mut state, oracle)?;
    Ok(state.curve)
}
