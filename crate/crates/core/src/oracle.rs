//! Simulated annotator answering from held gold labels, with optional noise.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Oracle {
    gold: HashMap<String, usize>,
    n_classes: usize,
    noise_rate: f64,
    rng: ChaCha8Rng,
}

impl Oracle {
    pub fn new(gold: HashMap<String, usize>, n_classes: usize, noise_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise_rate) {
            return Err(Error::InvalidConfig(format!("noise rate {noise_rate} not in [0, 1]")));
        }
        if n_classes < 2 {
            return Err(Error::SchemaTooSmall(n_classes));
        }
        if let Some((id, &l)) = gold.iter().find(|(_, &l)| l >= n_classes) {
            return Err(Error::InvalidConfig(format!("gold label {l} of `{id}` out of range")));
        }
        Ok(Self {
            gold,
            n_classes,
            noise_rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Oracle over every document that carries a gold label.
    pub fn from_documents<'a, I>(docs: I, n_classes: usize, noise_rate: f64, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let gold = docs
            .into_iter()
            .filter_map(|d| d.gold_label.map(|l| (d.doc_id.clone(), l)))
            .collect();
        Self::new(gold, n_classes, noise_rate, seed)
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_rate
    }

    /// Gold label with probability `1 - noise_rate`, otherwise a uniformly
    /// drawn wrong label. Every call consumes the same amount of randomness
    /// regardless of the outcome.
    pub fn label(&mut self, doc_id: &str) -> Result<usize> {
        let gold = *self.gold.get(doc_id).ok_or_else(|| Error::MissingGold(doc_id.to_string()))?;
        let flip = self.rng.gen::<f64>() < self.noise_rate;
        let offset = self.rng.gen_range(1..self.n_classes);
        Ok(if flip { (gold + offset) % self.n_classes } else { gold })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(noise: f64, c: usize) -> Oracle {
        let gold = (0..100).map(|i| (format!("d{i}"), i % c)).collect();
        Oracle::new(gold, c, noise, 3).unwrap()
    }

    #[test]
    fn noiseless_returns_gold() {
        let mut o = oracle(0.0, 4);
        for i in 0..100 {
            assert_eq!(o.label(&format!("d{i}")).unwrap(), i % 4);
        }
    }

    #[test]
    fn full_noise_binary_flips() {
        let mut o = oracle(1.0, 2);
        for i in 0..100 {
            assert_eq!(o.label(&format!("d{i}")).unwrap(), 1 - i % 2);
        }
    }

    #[test]
    fn unknown_doc() {
        assert!(matches!(oracle(0.0, 2).label("nope"), Err(Error::MissingGold(_))));
    }

    #[test]
    fn bad_noise_rate() {
        assert!(Oracle::new(HashMap::new(), 2, 1.5, 0).is_err());
    }
}
