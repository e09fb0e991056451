//! Multinomial logistic regression over sparse TF-IDF features, trained by
//! full-batch gradient descent on L2-regularized mean cross-entropy.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::LabelSchema;
use crate::error::{Error, Result};
use crate::featurizer::{SparseVector, Vocabulary};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_lambda: f64,
    /// Recorded for provenance. Training itself is zero-initialized and
    /// full-batch, so nothing random happens.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 200,
            l2_lambda: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return Err(Error::InvalidConfig("l2_lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// A labeled training example: feature vector and class index.
pub type Example = (SparseVector, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    n_classes: usize,
    dim: usize,
    /// Row-major `n_classes x dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    pub schema_hash: String,
    pub vocab_hash: String,
    pub train_config: TrainConfig,
}

/// Dense gradient of the training objective, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Model {
    /// All-zero model: uniform predictions for every input.
    pub fn zeros(n_classes: usize, dim: usize, train_config: TrainConfig) -> Self {
        Self {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
            schema_hash: String::new(),
            vocab_hash: String::new(),
            train_config,
        }
    }

    pub fn for_schema(schema: &LabelSchema, vocab: &Vocabulary, train_config: TrainConfig) -> Self {
        let mut m = Self::zeros(schema.len(), vocab.len(), train_config);
        m.schema_hash = schema.digest();
        m.vocab_hash = vocab.digest();
        m
    }

    /// Builds a model from explicit parameters.
    pub fn from_parts(n_classes: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>, train_config: TrainConfig) -> Result<Self> {
        if weights.len() != n_classes * dim {
            return Err(Error::DimMismatch {
                expected: n_classes * dim,
                got: weights.len(),
            });
        }
        if bias.len() != n_classes {
            return Err(Error::DimMismatch {
                expected: n_classes,
                got: bias.len(),
            });
        }
        Ok(Self {
            n_classes,
            dim,
            weights,
            bias,
            schema_hash: String::new(),
            vocab_hash: String::new(),
            train_config,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|&w| w == 0.0)
    }

    fn check_dim(&self, v: &SparseVector) -> Result<()> {
        if v.dim != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: v.dim,
            });
        }
        Ok(())
    }

    fn logits(&self, v: &SparseVector) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| self.bias[c] + v.dot(self.weight_row(c)))
            .collect()
    }

    /// Class probabilities `softmax(Wv + b)`.
    pub fn predict(&self, v: &SparseVector) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        Ok(softmax(&self.logits(v)))
    }

    /// Mean cross-entropy plus `(lambda / 2) * ||W||_F^2` (bias unregularized),
    /// with its exact gradient.
    pub fn loss_and_gradient(&self, examples: &[Example]) -> Result<(f64, Gradient)> {
        if examples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for (v, y) in examples {
            self.check_dim(v)?;
            if *y >= self.n_classes {
                return Err(Error::LabelOutOfRange(*y));
            }
        }
        let n = examples.len() as f64;
        let lambda = self.train_config.l2_lambda;
        let mut loss = 0.0;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.n_classes];
        for (v, y) in examples {
            let z = self.logits(v);
            let lse = log_sum_exp(&z);
            loss += lse - z[*y];
            for c in 0..self.n_classes {
                let r = (z[c] - lse).exp() - if c == *y { 1.0 } else { 0.0 };
                gb[c] += r / n;
                let row = &mut gw[c * self.dim..(c + 1) * self.dim];
                for &(j, x) in &v.entries {
                    row[j] += r * x / n;
                }
            }
        }
        loss /= n;
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        loss += 0.5 * lambda * sq;
        gw.iter_mut().zip(&self.weights).for_each(|(g, w)| *g += lambda * w);
        Ok((loss, Gradient { weights: gw, bias: gb }))
    }

    /// `theta <- theta - lr * grad`.
    pub fn apply_gradient(&mut self, grad: &Gradient, lr: f64) {
        self.weights.iter_mut().zip(&grad.weights).for_each(|(w, g)| *w -= lr * g);
        self.bias.iter_mut().zip(&grad.bias).for_each(|(b, g)| *b -= lr * g);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        let n_classes = f.weights.len();
        let dim = f.weights.first().map_or(0, Vec::len);
        if f.weights.iter().any(|r| r.len() != dim) {
            return Err(Error::MalformedDataset("ragged weight rows".into()));
        }
        let mut m = Model::from_parts(n_classes, dim, f.weights.concat(), f.bias, f.train_config)?;
        m.schema_hash = f.schema_hash;
        m.vocab_hash = f.vocab_hash;
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_hash: String,
    vocab_hash: String,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    train_config: TrainConfig,
}

impl From<&Model> for ModelFile {
    fn from(m: &Model) -> Self {
        let weights = if m.dim == 0 {
            vec![Vec::new(); m.n_classes]
        } else {
            m.weights.chunks(m.dim).map(<[f64]>::to_vec).collect()
        };
        ModelFile {
            schema_hash: m.schema_hash.clone(),
            vocab_hash: m.vocab_hash.clone(),
            weights,
            bias: m.bias.clone(),
            train_config: m.train_config,
        }
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn cmp_examples(a: &Example, b: &Example) -> Ordering {
    let key = |e: &Example| e.0.entries.iter().map(|&(i, v)| (i, v.to_bits())).collect::<Vec<_>>();
    key(a).cmp(&key(b)).then(a.1.cmp(&b.1))
}

/// Trains a fresh model on `examples` and tags it with the schema and
/// vocabulary digests.
pub fn train(examples: &[Example], schema: &LabelSchema, vocab: &Vocabulary, config: TrainConfig) -> Result<Model> {
    let mut m = fit(examples, schema.len(), vocab.len(), config)?;
    m.schema_hash = schema.digest();
    m.vocab_hash = vocab.digest();
    Ok(m)
}

/// Full-batch gradient descent from zero weights.
///
/// Examples are put into a canonical order first, so the result does not
/// depend on the order they were supplied in. Only columns touched by some
/// example can move away from zero (their gradient and decay are both zero
/// otherwise), so the optimization runs over that column subset and scatters
/// the result back.
pub fn fit(examples: &[Example], n_classes: usize, dim: usize, config: TrainConfig) -> Result<Model> {
    config.validate()?;
    for (v, y) in examples {
        if v.dim != dim {
            return Err(Error::DimMismatch { expected: dim, got: v.dim });
        }
        if *y >= n_classes {
            return Err(Error::LabelOutOfRange(*y));
        }
    }
    let mut model = Model::zeros(n_classes, dim, config);
    if examples.is_empty() {
        return Ok(model);
    }

    let mut ordered: Vec<&Example> = examples.iter().collect();
    ordered.sort_by(|a, b| cmp_examples(a, b));

    let mut active: Vec<usize> = ordered.iter().flat_map(|(v, _)| v.entries.iter().map(|&(i, _)| i)).collect();
    active.sort_unstable();
    active.dedup();
    let local: HashMap<usize, usize> = active.iter().enumerate().map(|(l, &g)| (g, l)).collect();
    let width = active.len();
    let xs: Vec<(Vec<(usize, f64)>, usize)> = ordered
        .iter()
        .map(|(v, y)| (v.entries.iter().map(|&(i, x)| (local[&i], x)).collect(), *y))
        .collect();

    let n = xs.len() as f64;
    let lr = config.learning_rate;
    let lambda = config.l2_lambda;
    let mut w = vec![0.0; n_classes * width];
    let mut b = vec![0.0; n_classes];

    for _ in 0..config.epochs {
        let residuals: Vec<Vec<f64>> = par::map(&xs, |(x, y)| {
            let z: Vec<f64> = (0..n_classes)
                .map(|c| {
                    let row = &w[c * width..(c + 1) * width];
                    b[c] + x.iter().map(|&(j, v)| row[j] * v).sum::<f64>()
                })
                .collect();
            let mut p = softmax(&z);
            p[*y] -= 1.0;
            p
        });
        par::for_each_row(&mut w, width, |c, row| {
            let mut g = vec![0.0; width];
            for ((x, _), r) in xs.iter().zip(&residuals) {
                let rc = r[c];
                for &(j, v) in x {
                    g[j] += rc * v;
                }
            }
            for (wj, gj) in row.iter_mut().zip(&g) {
                *wj -= lr * (gj / n + lambda * *wj);
            }
        });
        for (c, bc) in b.iter_mut().enumerate() {
            let g: f64 = residuals.iter().map(|r| r[c]).sum();
            *bc -= lr * g / n;
        }
    }

    for c in 0..n_classes {
        for (l, &g) in active.iter().enumerate() {
            model.weights[c * dim + g] = w[c * width + l];
        }
    }
    model.bias = b;
    Ok(model)
}
