//! Generated corpora with known structure, used by the benchmark suite and
//! the command line `synth` tool.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, LabelSchema};

const TOPICS: [(&str, [&str; 5]); 4] = [
    ("sports", ["goal", "match", "team", "league", "stadium"]),
    ("finance", ["stock", "market", "bank", "invest", "dividend"]),
    ("weather", ["rain", "storm", "cloud", "wind", "snow"]),
    ("food", ["pizza", "bread", "cheese", "salad", "soup"]),
];

const FILLER: [&str; 40] = [
    "the", "a", "of", "to", "and", "in", "is", "it", "that", "was", "for", "on", "are", "with", "as", "this",
    "be", "at", "have", "from", "or", "one", "had", "by", "but", "not", "what", "all", "were", "we", "when",
    "your", "can", "said", "there", "use", "an", "each", "which", "do",
];

/// Shape of the keyword corpus: each class owns five exclusive keywords,
/// and every document mixes a few of its class keywords into shared filler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeywordCorpus {
    pub pool_size: usize,
    pub eval_size: usize,
    /// Class keywords per document.
    pub keywords_per_doc: usize,
    /// Filler words per document, inclusive range.
    pub filler: (usize, usize),
    /// Chance that a document also carries one keyword of another class.
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for KeywordCorpus {
    fn default() -> Self {
        Self {
            pool_size: 2000,
            eval_size: 1000,
            keywords_per_doc: 2,
            filler: (6, 12),
            distractor_rate: 0.15,
            seed: 42,
        }
    }
}

impl KeywordCorpus {
    pub fn schema() -> LabelSchema {
        LabelSchema::new(TOPICS.iter().map(|(name, _)| *name)).expect("topic names are distinct")
    }

    pub fn keywords(class: usize) -> &'static [&'static str; 5] {
        &TOPICS[class].1
    }

    /// `(pool, eval, schema)`; every document carries its gold label.
    pub fn generate(&self) -> (Vec<Document>, Vec<Document>, LabelSchema) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let pool = (0..self.pool_size).map(|i| self.document(&mut rng, format!("pool-{i:05}"))).collect();
        let eval = (0..self.eval_size).map(|i| self.document(&mut rng, format!("eval-{i:05}"))).collect();
        (pool, eval, Self::schema())
    }

    fn document(&self, rng: &mut ChaCha8Rng, id: String) -> Document {
        let class = rng.gen_range(0..TOPICS.len());
        let mut words: Vec<&str> = Vec::new();
        for _ in 0..self.keywords_per_doc {
            words.push(TOPICS[class].1.choose(rng).expect("non-empty"));
        }
        if rng.gen::<f64>() < self.distractor_rate {
            let other = (class + rng.gen_range(1..TOPICS.len())) % TOPICS.len();
            words.push(TOPICS[other].1.choose(rng).expect("non-empty"));
        }
        let n_filler = rng.gen_range(self.filler.0..=self.filler.1);
        for _ in 0..n_filler {
            words.push(FILLER.choose(rng).expect("non-empty"));
        }
        words.shuffle(rng);
        Document::new(id, words.join(" "), Some(class))
    }
}

/// The six-message spam walkthrough, in its zero-shot table order, with gold
/// labels. Schema is `["not spam", "spam"]`.
pub fn spam_scenario() -> (Vec<Document>, LabelSchema) {
    let rows = [
        ("package", "Important notice: Your package has been delivered.", 0),
        ("balance", "Dear customer, Your account balance is low.", 1),
        ("catchup", "Hi, How are you doing? Let's catch up soon.", 0),
        ("urgent", "Urgent notice: Last chance to update your personal information.", 1),
        ("vacation", "Hi there, You have won a free vacation! Claim now!", 1),
        ("million", "Congratulations! You've won a million dollars!", 1),
    ];
    let docs = rows.iter().map(|(id, text, l)| Document::new(*id, *text, Some(*l))).collect();
    (docs, LabelSchema::new(["not spam", "spam"]).expect("two labels"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn generation_is_seeded() {
        let spec = KeywordCorpus { pool_size: 50, eval_size: 20, ..Default::default() };
        assert_eq!(spec.generate(), spec.generate());
        let other = KeywordCorpus { seed: 7, ..spec };
        assert_ne!(spec.generate().0, other.generate().0);
    }

    #[test]
    fn keywords_are_exclusive() {
        let all: Vec<&str> = TOPICS.iter().flat_map(|(_, k)| k.iter().copied()).collect();
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 20);
        assert!(all.iter().all(|k| !FILLER.contains(k)));
    }

    #[test]
    fn every_doc_has_own_keywords() {
        let (pool, eval, _) = KeywordCorpus::default().generate();
        assert_eq!((pool.len(), eval.len()), (2000, 1000));
        for d in pool.iter().chain(&eval) {
            let own = KeywordCorpus::keywords(d.gold_label.unwrap());
            assert!(d.text.split(' ').filter(|w| own.contains(w)).count() >= 2);
        }
    }
}
