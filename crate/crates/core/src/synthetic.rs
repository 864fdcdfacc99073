//! Rule-governed synthetic graphs for end-to-end checks.
//!
//! Three relations `R0`, `R1`, `R2` with planted rules
//! `R0(x,z) & R1(z,y) => R2(x,y)` and `R1(x,y) => R0(y,x)`. Random `R0`/`R1`
//! base facts and `R2` noise are closed under the rules; a fraction of the
//! derived facts is held out as test, the rest is training data.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple, Vocabulary};
use crate::rules::{parse_rule, HornRule};

pub const PLANTED_RULES: [&str; 2] = ["R0(x,z1) & R1(z1,y) => R2(x,y)", "R1(x,y) => R0(y,x)"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub n_entities: usize,
    /// Random facts drawn for each of `R0` and `R1`.
    pub base_facts: usize,
    /// Random `R2` facts that no rule explains.
    pub noise_facts: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { n_entities: 200, base_facts: 300, noise_facts: 100, test_fraction: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticKg {
    /// The closed graph: train and test together.
    pub full: KnowledgeGraph,
    pub train: KnowledgeGraph,
    pub test: Vec<Triple>,
    pub rules: Vec<HornRule>,
}

impl SyntheticKg {
    pub fn generate(config: &SyntheticConfig) -> SyntheticKg {
        let mut v = Vocabulary::new();
        for i in 0..config.n_entities {
            v.intern_entity(&format!("e{i}"));
        }
        for r in ["R0", "R1", "R2"] {
            v.intern_relation(r);
        }
        let (r0, r1, r2) = (RelationId(0), RelationId(1), RelationId(2));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.n_entities as u32;
        let mut draw = |rel: RelationId, count: usize, into: &mut BTreeSet<Triple>| {
            let target = into.len() + count.min((n * (n - 1)) as usize);
            while into.len() < target {
                let (h, t) = (rng.gen_range(0..n), rng.gen_range(0..n));
                if h != t {
                    into.insert(Triple::new(EntityId(h), rel, EntityId(t)));
                }
            }
        };
        let mut base = BTreeSet::new();
        draw(r0, config.base_facts, &mut base);
        draw(r1, config.base_facts, &mut base);
        draw(r2, config.noise_facts, &mut base);

        let mut all = base.clone();
        let mut derived = BTreeSet::new();
        let mut add = |t: Triple, all: &mut BTreeSet<Triple>| {
            if all.insert(t) {
                derived.insert(t);
            }
        };
        let r1_facts: Vec<Triple> = all.iter().filter(|t| t.relation == r1).copied().collect();
        for t in &r1_facts {
            add(Triple::new(t.tail, r0, t.head), &mut all);
        }
        // R2 is never a body relation, so one composition pass closes the graph
        let r0_facts: Vec<Triple> = all.iter().filter(|t| t.relation == r0).copied().collect();
        for a in &r0_facts {
            for b in r1_facts.iter().filter(|b| b.head == a.tail) {
                add(Triple::new(a.head, r2, b.tail), &mut all);
            }
        }

        let mut derived: Vec<Triple> = derived.into_iter().collect();
        derived.shuffle(&mut rng);
        let n_test = (derived.len() as f64 * config.test_fraction).round() as usize;
        let mut test: Vec<Triple> = derived[..n_test].to_vec();
        test.sort();
        let held: BTreeSet<Triple> = test.iter().copied().collect();

        let vocab = Arc::new(v);
        let full = KnowledgeGraph::from_triples(vocab.clone(), all.iter().copied()).0;
        let train = full.with_triples(all.iter().copied().filter(|t| !held.contains(t)));
        let rules = PLANTED_RULES.iter().map(|r| parse_rule(r, &vocab).expect("planted rules parse")).collect();
        SyntheticKg { full, train, test, rules }
    }
}
