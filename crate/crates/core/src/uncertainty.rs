//! Confidence/entropy of predictions and the edge-case ranking that decides
//! which documents get labeled next.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shannon entropy in nats with `0 ln 0 = 0`. The input is renormalized first.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::InvalidDistribution(format!("component {p} is not a non-negative number")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!("components sum to {total}")));
    }
    let h = -probs
        .iter()
        .map(|&p| p / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub probs: Vec<f64>,
    /// Argmax; the smallest index wins exact ties.
    pub predicted: usize,
    pub confidence: f64,
    pub entropy_nats: f64,
    /// `entropy_nats / ln C`, in `[0, 1]`.
    pub entropy_norm: f64,
}

impl Prediction {
    pub fn new(doc_id: impl Into<String>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution("need at least two classes".into()));
        }
        let entropy_nats = entropy(&probs)?;
        let mut predicted = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[predicted] {
                predicted = i;
            }
        }
        let max_h = (probs.len() as f64).ln();
        Ok(Self {
            doc_id: doc_id.into(),
            confidence: probs[predicted],
            predicted,
            entropy_nats,
            entropy_norm: (entropy_nats / max_h).clamp(0.0, 1.0),
            probs,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MaxEntropy,
    LeastConfidence,
    /// Needs gold labels, so only usable with a simulated annotator.
    MisclassifiedFirst,
    Random,
}

impl Strategy {
    pub fn needs_gold(self) -> bool {
        matches!(self, Strategy::MisclassifiedFirst)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::MaxEntropy => "max_entropy",
            Strategy::LeastConfidence => "least_confidence",
            Strategy::MisclassifiedFirst => "misclassified_first",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "max_entropy" | "entropy" => Ok(Strategy::MaxEntropy),
            "least_confidence" | "confidence" => Ok(Strategy::LeastConfidence),
            "misclassified_first" | "misclassified" => Ok(Strategy::MisclassifiedFirst),
            "random" => Ok(Strategy::Random),
            other => Err(Error::InvalidConfig(format!("unknown strategy `{other}`"))),
        }
    }
}

fn desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

fn asc(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

/// Orders `predictions` for labeling and returns their doc ids.
///
/// * `MaxEntropy`: entropy descending, then confidence ascending, then id.
/// * `LeastConfidence`: confidence ascending, then entropy descending, then id.
/// * `MisclassifiedFirst`: wrong predictions before right ones, each group by
///   entropy descending, then id. Requires `gold` for every prediction.
/// * `Random`: shuffle of the id-sorted list seeded by `seed`.
pub fn rank_pool(
    predictions: &[Prediction],
    strategy: Strategy,
    gold: Option<&HashMap<String, usize>>,
    seed: u64,
) -> Result<Vec<String>> {
    let mut order: Vec<&Prediction> = predictions.iter().collect();
    match strategy {
        Strategy::MaxEntropy => order.sort_by(|a, b| {
            desc(a.entropy_nats, b.entropy_nats)
                .then_with(|| asc(a.confidence, b.confidence))
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        }),
        Strategy::LeastConfidence => order.sort_by(|a, b| {
            asc(a.confidence, b.confidence)
                .then_with(|| desc(a.entropy_nats, b.entropy_nats))
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        }),
        Strategy::MisclassifiedFirst => {
            let gold = gold.ok_or_else(|| Error::MissingGold("<gold map not supplied>".into()))?;
            let mut correct = HashMap::with_capacity(order.len());
            for p in &order {
                let g = gold.get(&p.doc_id).ok_or_else(|| Error::MissingGold(p.doc_id.clone()))?;
                correct.insert(p.doc_id.as_str(), *g == p.predicted);
            }
            order.sort_by(|a, b| {
                correct[a.doc_id.as_str()]
                    .cmp(&correct[b.doc_id.as_str()])
                    .then_with(|| desc(a.entropy_nats, b.entropy_nats))
                    .then_with(|| a.doc_id.cmp(&b.doc_id))
            });
        }
        Strategy::Random => {
            order.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
    }
    Ok(order.into_iter().map(|p| p.doc_id.clone()).collect())
}

/// The first `min(k, len)` ids of `ranked`.
pub fn select_batch(ranked: &[String], k: usize) -> Result<Vec<String>> {
    if k < 1 {
        return Err(Error::InvalidBatchSize);
    }
    Ok(ranked.iter().take(k).cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(entropy(&[0.5, 0.5]).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        // -(0.65 ln 0.65 + 0.35 ln 0.35)
        assert_abs_diff_eq!(entropy(&[0.65, 0.35]).unwrap(), 0.647447, epsilon = 5e-7);
    }

    #[test]
    fn entropy_rejects_bad_input() {
        assert!(matches!(entropy(&[1.2, -0.2]), Err(Error::InvalidDistribution(_))));
        assert!(matches!(entropy(&[0.3, 0.3]), Err(Error::InvalidDistribution(_))));
    }

    #[test]
    fn argmax_tie_takes_smallest_index() {
        let p = Prediction::new("d", vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        assert_eq!(p.predicted, 0);
        assert_abs_diff_eq!(p.entropy_norm, 1.0, epsilon = 1e-12);
    }

    fn pred(id: &str, p0: f64) -> Prediction {
        Prediction::new(id, vec![p0, 1.0 - p0]).unwrap()
    }

    #[test]
    fn higher_entropy_ranks_first() {
        let a = pred("balance", 0.30);
        let b = pred("catchup", 0.20);
        assert!(a.entropy_nats > b.entropy_nats);
        let r = rank_pool(&[b, a], Strategy::MaxEntropy, None, 0).unwrap();
        assert_eq!(r, vec!["balance", "catchup"]);
    }

    #[test]
    fn identical_probs_fall_back_to_id() {
        let r = rank_pool(&[pred("b", 0.7), pred("a", 0.7)], Strategy::MaxEntropy, None, 0).unwrap();
        assert_eq!(r, vec!["a", "b"]);
        let r = rank_pool(&[pred("b", 0.7), pred("a", 0.7)], Strategy::LeastConfidence, None, 0).unwrap();
        assert_eq!(r, vec!["a", "b"]);
    }

    #[test]
    fn least_confidence_orders_by_max_prob() {
        let r = rank_pool(&[pred("x", 0.9), pred("y", 0.55), pred("z", 0.3)], Strategy::LeastConfidence, None, 0).unwrap();
        assert_eq!(r, vec!["y", "z", "x"]);
    }

    #[test]
    fn misclassified_before_correct() {
        let preds = [pred("a", 0.9), pred("b", 0.6), pred("c", 0.8)];
        // a predicts 0 (correct), b predicts 0 (wrong), c predicts 0 (wrong)
        let gold: HashMap<String, usize> = [("a", 0), ("b", 1), ("c", 1)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let r = rank_pool(&preds, Strategy::MisclassifiedFirst, Some(&gold), 0).unwrap();
        assert_eq!(r, vec!["b", "c", "a"]);
        assert!(matches!(rank_pool(&preds, Strategy::MisclassifiedFirst, None, 0), Err(Error::MissingGold(_))));
        let partial: HashMap<String, usize> = [("a".to_string(), 0)].into();
        assert!(matches!(rank_pool(&preds, Strategy::MisclassifiedFirst, Some(&partial), 0), Err(Error::MissingGold(_))));
    }

    #[test]
    fn random_is_seeded() {
        let preds: Vec<Prediction> = (0..30).map(|i| pred(&format!("d{i:02}"), 0.5)).collect();
        let a = rank_pool(&preds, Strategy::Random, None, 9).unwrap();
        assert_eq!(a, rank_pool(&preds, Strategy::Random, None, 9).unwrap());
        assert_ne!(a, rank_pool(&preds, Strategy::Random, None, 10).unwrap());
    }

    #[test]
    fn select_batch_truncates() {
        let ranked: Vec<String> = (0..6).map(|i| i.to_string()).collect();
        assert_eq!(select_batch(&ranked, 10).unwrap().len(), 6);
        let ranked: Vec<String> = (0..100).map(|i| i.to_string()).collect();
        assert_eq!(select_batch(&ranked, 10).unwrap(), ranked[..10].to_vec());
        assert!(matches!(select_batch(&ranked, 0), Err(Error::InvalidBatchSize)));
    }

    #[test]
    fn strategy_names_parse() {
        for s in [Strategy::MaxEntropy, Strategy::LeastConfidence, Strategy::MisclassifiedFirst, Strategy::Random] {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("entropy".parse::<Strategy>().unwrap(), Strategy::MaxEntropy);
        assert!("margin".parse::<Strategy>().is_err());
    }
}
