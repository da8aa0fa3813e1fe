//! Seeded 3/1/1 train/validation/test splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kb::{KbError, KnowledgeBase, QuantLabel, Triple};

/// Three disjoint knowledge bases sharing the source vocabulary.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: KnowledgeBase,
    pub validation: KnowledgeBase,
    pub test: KnowledgeBase,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Bucket sizes for `n` triples: validation gets `round(n/5)`, test `floor(n/5)`,
/// train the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let validation = (n + 2) / 5;
    let test = n / 5;
    (n - validation - test, validation, test)
}

/// Shuffles the triples (in insertion order) with a seeded generator and cuts them 60/20/20.
pub fn split_kb(kb: &KnowledgeBase, seed: u64) -> Result<DatasetSplit, KbError> {
    if kb.len() < 5 {
        return Err(KbError::TooFewTriples {
            needed: 5,
            got: kb.len(),
        });
    }
    let mut items: Vec<(Triple, QuantLabel)> = kb.iter().map(|(t, l)| (*t, l)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let (n_train, n_val, _) = split_sizes(items.len());
    let mut buckets = [
        KnowledgeBase::with_vocab_of(kb),
        KnowledgeBase::with_vocab_of(kb),
        KnowledgeBase::with_vocab_of(kb),
    ];
    for (i, (t, l)) in items.into_iter().enumerate() {
        let b = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        buckets[b].insert_triple(t, l)?;
    }
    let [train, validation, test] = buckets;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
    })
}
