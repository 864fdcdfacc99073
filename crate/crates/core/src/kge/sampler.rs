use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::KgeError;
use crate::kg::{EntityId, Triple};

/// Uniform head-or-tail corruption with filtered resampling.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    k: usize,
    n_entities: usize,
    max_retries: usize,
    rng: ChaCha8Rng,
    accepted_known: usize,
}

impl NegativeSampler {
    pub const DEFAULT_RETRIES: usize = 10;

    pub fn new(k: usize, n_entities: usize, seed: u64) -> Result<Self, KgeError> {
        if k == 0 {
            return Err(KgeError::InvalidConfig("negatives per positive must be at least 1".into()));
        }
        if n_entities < 2 {
            return Err(KgeError::VocabularyTooSmall(n_entities));
        }
        Ok(NegativeSampler { k, n_entities, max_retries: Self::DEFAULT_RETRIES, rng: ChaCha8Rng::seed_from_u64(seed), accepted_known: 0 })
    }

    pub fn with_max_retries(mut self, n: usize) -> Self {
        self.max_retries = n;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Corruptions that had to be accepted although they are known triples.
    pub fn accepted_known(&self) -> usize {
        self.accepted_known
    }

    /// One corruption: a coin flip picks the slot, the replacement is
    /// uniform over the other entities.
    fn corrupt(&mut self, t: &Triple) -> Triple {
        let head_side = self.rng.gen_bool(0.5);
        let orig = if head_side { t.head.0 } else { t.tail.0 };
        let mut e = self.rng.gen_range(0..self.n_entities as u32 - 1);
        if e >= orig {
            e += 1;
        }
        if head_side {
            Triple::new(EntityId(e), t.relation, t.tail)
        } else {
            Triple::new(t.head, t.relation, EntityId(e))
        }
    }

    /// `k` corruptions of `t`. Candidates for which `is_known` holds are
    /// redrawn up to the retry bound, after which the last draw is kept.
    pub fn sample(&mut self, t: &Triple, is_known: impl Fn(&Triple) -> bool) -> Vec<Triple> {
        (0..self.k)
            .map(|_| {
                let mut c = self.corrupt(t);
                let mut tries = 0;
                while is_known(&c) {
                    if tries == self.max_retries {
                        self.accepted_known += 1;
                        log::debug!("accepting known corruption {c:?} after {tries} retries");
                        break;
                    }
                    c = self.corrupt(t);
                    tries += 1;
                }
                c
            })
            .collect()
    }
}
