use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ingest::{apply_domains, parse_domains, parse_triple_lines};
use super::{EntityId, KgError, KnowledgeGraph, RelationId, Result, Triple, TripleFormat, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, valid, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || self.train <= 0.0 {
            return Err(KgError::InvalidRatios(format!("{parts:?}: train must be positive, others nonnegative")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(KgError::InvalidRatios(format!("{parts:?} sums to {sum}")));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, valid: 0.1, test: 0.1 }
    }
}

/// Three disjoint triple lists over the source graph's vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub seed: u64,
}

impl Split {
    pub fn train_graph(&self, kg: &KnowledgeGraph) -> KnowledgeGraph {
        kg.with_triples(self.train.iter().copied())
    }

    /// Union of the three parts, used as the filter set for ranking.
    pub fn all_known(&self) -> HashSet<Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test).copied().collect()
    }
}

/// Shuffle and cut `kg` into train/valid/test. Any valid or test triple
/// mentioning an entity or relation absent from train is moved to train.
pub fn split(kg: &KnowledgeGraph, ratios: SplitRatios, seed: u64) -> Result<Split> {
    ratios.validate()?;
    let n = kg.len();
    let mut order: Vec<Triple> = kg.triples().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_valid = (n as f64 * ratios.valid).round() as usize;
    let n_test = (n as f64 * ratios.test).round() as usize;
    if n_valid + n_test >= n && (n_valid + n_test) > 0 {
        return Err(KgError::SplitTooSmall(format!("{n} triples cannot host {n_valid} valid + {n_test} test")));
    }
    let n_train = n - n_valid - n_test;
    let mut train: Vec<Triple> = order[..n_train].to_vec();
    let valid_raw = &order[n_train..n_train + n_valid];
    let test_raw = &order[n_train + n_valid..];

    let mut ents: HashSet<EntityId> = HashSet::new();
    let mut rels: HashSet<RelationId> = HashSet::new();
    for t in &train {
        ents.insert(t.head);
        ents.insert(t.tail);
        rels.insert(t.relation);
    }
    let mut reassign = |part: &[Triple], train: &mut Vec<Triple>| -> Vec<Triple> {
        let mut kept = Vec::with_capacity(part.len());
        for &t in part {
            if ents.contains(&t.head) && ents.contains(&t.tail) && rels.contains(&t.relation) {
                kept.push(t);
            } else {
                ents.insert(t.head);
                ents.insert(t.tail);
                rels.insert(t.relation);
                train.push(t);
            }
        }
        kept
    };
    let valid = reassign(valid_raw, &mut train);
    let test = reassign(test_raw, &mut train);
    if (n_valid > 0 && valid.is_empty()) || (n_test > 0 && test.is_empty()) {
        return Err(KgError::SplitTooSmall(
            "every held-out triple mentions vocabulary unseen in train".into(),
        ));
    }
    Ok(Split { train, valid, test, seed })
}

/// Load a published split (three triple files). Ids are assigned in
/// first-seen order across train, valid, test; the returned graph is the union.
pub fn load_split(
    train: &Path,
    valid: &Path,
    test: &Path,
    domains: Option<&Path>,
) -> Result<(KnowledgeGraph, Split)> {
    let format = TripleFormat::default();
    let mut vocab = Vocabulary::new();
    let mut parts: Vec<Vec<Triple>> = Vec::with_capacity(3);
    for path in [train, valid, test] {
        let rows = parse_triple_lines(BufReader::new(File::open(path)?), &format)?;
        parts.push(
            rows.iter()
                .map(|(_, [h, r, t])| {
                    let h = vocab.intern_entity(h);
                    let r = vocab.intern_relation(r);
                    let t = vocab.intern_entity(t);
                    Triple::new(h, r, t)
                })
                .collect(),
        );
    }
    if parts[0].is_empty() {
        return Err(KgError::EmptyDataset);
    }
    if let Some(d) = domains {
        apply_domains(&mut vocab, &parse_domains(BufReader::new(File::open(d)?))?)?;
    }
    let vocab = Arc::new(vocab);
    let all: Vec<Triple> = parts.iter().flatten().copied().collect();
    let (kg, dups) = KnowledgeGraph::from_triples(vocab, all);
    if dups > 0 {
        log::warn!("published split contains {dups} duplicate triples");
    }
    // keep the first occurrence of a triple in train > valid > test order
    let mut seen = HashSet::new();
    let mut dedup = |v: &[Triple]| v.iter().copied().filter(|t| seen.insert(*t)).collect::<Vec<_>>();
    let train = dedup(&parts[0]);
    let valid = dedup(&parts[1]);
    let test = dedup(&parts[2]);
    Ok((kg, Split { train, valid, test, seed: 0 }))
}

pub fn write_split(kg: &KnowledgeGraph, split: &Split, dir: &Path) -> std::io::Result<()> {
    for (name, part) in [("train.tsv", &split.train), ("valid.tsv", &split.valid), ("test.tsv", &split.test)] {
        let mut buf = Vec::new();
        super::write_triples(kg.vocab(), part, &mut buf)?;
        crate::fsutil::write_atomic(&dir.join(name), &buf)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n_triples: usize) -> KnowledgeGraph {
        let mut vocab = Vocabulary::new();
        for e in 0..60 {
            vocab.intern_entity(&format!("e{e}"));
        }
        for r in 0..4 {
            vocab.intern_relation(&format!("R{r}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut triples = HashSet::new();
        use rand::Rng;
        while triples.len() < n_triples {
            triples.insert(Triple::new(
                EntityId(rng.gen_range(0..60)),
                RelationId(rng.gen_range(0..4)),
                EntityId(rng.gen_range(0..60)),
            ));
        }
        let mut triples: Vec<_> = triples.into_iter().collect();
        triples.sort();
        KnowledgeGraph::from_triples(Arc::new(vocab), triples).0
    }

    #[test]
    fn split_is_deterministic_for_a_seed() {
        let kg = synthetic(300);
        let a = split(&kg, SplitRatios::default(), 7).unwrap();
        let b = split(&kg, SplitRatios::default(), 7).unwrap();
        assert_eq!(a, b);
        let c = split(&kg, SplitRatios::default(), 8).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn all_train_ratio_keeps_everything() {
        let kg = synthetic(50);
        let s = split(&kg, SplitRatios::new(1.0, 0.0, 0.0).unwrap(), 1).unwrap();
        assert_eq!(s.train.len(), 50);
        assert!(s.valid.is_empty() && s.test.is_empty());
    }

    #[test]
    fn thousand_triples_are_partitioned_with_coverage() {
        let kg = synthetic(1000);
        let s = split(&kg, SplitRatios::default(), 3).unwrap();
        assert_eq!(s.train.len() + s.valid.len() + s.test.len(), 1000);
        let moved = 200 - s.valid.len() - s.test.len();
        assert_eq!(s.train.len(), 800 + moved);
        assert!(s.valid.len() <= 100 && s.test.len() <= 100);
        let all = s.all_known();
        assert_eq!(all.len(), 1000);
        let source: HashSet<_> = kg.triples().iter().copied().collect();
        assert_eq!(all, source);
        let train_ents: HashSet<_> = s.train.iter().flat_map(|t| [t.head, t.tail]).collect();
        let train_rels: HashSet<_> = s.train.iter().map(|t| t.relation).collect();
        for t in s.valid.iter().chain(&s.test) {
            assert!(train_ents.contains(&t.head) && train_ents.contains(&t.tail));
            assert!(train_rels.contains(&t.relation));
        }
    }

    #[test]
    fn bad_ratios_are_rejected() {
        assert!(SplitRatios::new(0.5, 0.1, 0.1).is_err());
        assert!(SplitRatios::new(0.0, 0.5, 0.5).is_err());
        assert!(SplitRatios::new(1.2, -0.1, -0.1).is_err());
    }

    #[test]
    fn tiny_graph_cannot_be_split() {
        let kg = synthetic(2);
        assert!(matches!(
            split(&kg, SplitRatios::new(0.2, 0.4, 0.4).unwrap(), 0),
            Err(KgError::SplitTooSmall(_))
        ));
    }
}
