use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KgeError, KgeModel, NegativeSampler, ScorerKind};
use crate::autodiff::{Adam, AdamConfig, ParamStore, Tape};
use crate::kg::{KnowledgeGraph, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KgeConfig {
    pub scorer: ScorerKind,
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub negatives: usize,
    pub batch: usize,
    pub seed: u64,
    pub sparse_adam: bool,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig { scorer: ScorerKind::DistMult, dim: 250, epochs: 250, lr: 1e-2, negatives: 2, batch: 1024, seed: 0, sparse_adam: true }
    }
}

impl KgeConfig {
    pub fn validate(&self) -> Result<(), KgeError> {
        if self.batch == 0 {
            return Err(KgeError::InvalidConfig("batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(KgeError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.negatives == 0 {
            return Err(KgeError::InvalidConfig("negatives must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, sparse: self.sparse_adam, ..AdamConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch, weighted by batch size.
    pub epoch_losses: Vec<f64>,
    /// Negatives accepted although known, after exhausting retries.
    pub accepted_known_negatives: usize,
}

/// One batch of positives with `k` corruptions each, as parallel arrays.
pub(crate) fn batch_with_negatives(
    positives: &[Triple],
    sampler: &mut NegativeSampler,
    known: &KnowledgeGraph,
) -> (Vec<Triple>, Vec<f32>) {
    let mut triples = Vec::with_capacity(positives.len() * (1 + sampler.k()));
    let mut targets = Vec::with_capacity(triples.capacity());
    for t in positives {
        triples.push(*t);
        targets.push(1.0);
    }
    for t in positives {
        for c in sampler.sample(t, |c| known.contains(c)) {
            triples.push(c);
            targets.push(0.0);
        }
    }
    (triples, targets)
}

/// Binary cross-entropy training on positives and sampled corruptions.
pub fn pretrain(
    model: &KgeModel,
    store: &mut ParamStore<f32>,
    adam: &mut Adam<f32>,
    train: &KnowledgeGraph,
    config: &KgeConfig,
) -> Result<TrainReport, KgeError> {
    config.validate()?;
    if train.is_empty() {
        return Err(KgeError::EmptyTrain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampler = NegativeSampler::new(config.negatives, train.num_entities(), config.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let mut order: Vec<Triple> = train.triples().to_vec();
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0f64, 0usize);
        for (bi, chunk) in order.chunks(config.batch).enumerate() {
            let (triples, targets) = batch_with_negatives(chunk, &mut sampler, train);
            let grads = {
                let mut tape = Tape::new(store);
                let loss = model.loss(&mut tape, &triples, &targets)?;
                let l = tape.value(loss).data()[0] as f64;
                if !l.is_finite() {
                    return Err(KgeError::NonFinite {
                        epoch,
                        batch: bi,
                        detail: format!("loss {l}; parameters finite: {}", store.is_finite()),
                    });
                }
                total += l * chunk.len() as f64;
                count += chunk.len();
                tape.backward(loss)?
            };
            adam.step(store, grads)?;
        }
        let mean = total / count as f64;
        log::debug!("kge epoch {epoch}: loss {mean:.6}");
        report.epoch_losses.push(mean);
    }
    report.accepted_known_negatives = sampler.accepted_known();
    if report.accepted_known_negatives > 0 {
        log::warn!("{} negatives were known triples after exhausting retries", report.accepted_known_negatives);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::KgeSpec;
    use super::*;
    use crate::kg::{EntityId, RelationId, Vocabulary};
    use std::sync::Arc;

    fn graph() -> KnowledgeGraph {
        let mut v = Vocabulary::new();
        for i in 0..10 {
            v.intern_entity(&format!("e{i}"));
        }
        v.intern_relation("R");
        v.intern_relation("S");
        let ts = (0..20u32).map(|i| Triple::new(EntityId(i % 10), RelationId(i % 2), EntityId((i * 3 + 1) % 10)));
        KnowledgeGraph::from_triples(Arc::new(v), ts).0
    }

    fn setup(kg: &KnowledgeGraph, cfg: &KgeConfig) -> (KgeModel, ParamStore<f32>, Adam<f32>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let spec = KgeSpec { scorer: cfg.scorer, dim: cfg.dim, n_entities: kg.num_entities(), n_relations: kg.num_relations() };
        let m = KgeModel::new(spec, &mut store, &mut rng).unwrap();
        (m, store, Adam::new(cfg.adam()))
    }

    #[test]
    fn defaults_follow_the_training_recipe() {
        let c = KgeConfig::default();
        assert_eq!((c.epochs, c.lr, c.dim, c.negatives, c.scorer), (250, 1e-2, 250, 2, ScorerKind::DistMult));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let kg = graph();
        let cfg = KgeConfig { dim: 8, epochs: 0, ..KgeConfig::default() };
        let (m, mut store, mut adam) = setup(&kg, &cfg);
        let before = store.clone();
        let r = pretrain(&m, &mut store, &mut adam, &kg, &cfg).unwrap();
        assert!(r.epoch_losses.is_empty());
        assert_eq!(store, before);
    }

    #[test]
    fn loss_decreases_for_every_scorer() {
        let kg = graph();
        for scorer in [ScorerKind::TransE, ScorerKind::DistMult, ScorerKind::ComplEx] {
            let cfg = KgeConfig { scorer, dim: 16, epochs: 50, batch: 8, seed: 4, ..KgeConfig::default() };
            let (m, mut store, mut adam) = setup(&kg, &cfg);
            let r = pretrain(&m, &mut store, &mut adam, &kg, &cfg).unwrap();
            assert_eq!(r.epoch_losses.len(), 50);
            assert!(r.epoch_losses[49] < r.epoch_losses[0], "{scorer}: {:?}", r.epoch_losses);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let kg = graph();
        let cfg = KgeConfig { dim: 8, epochs: 5, batch: 4, seed: 9, ..KgeConfig::default() };
        let run = || {
            let (m, mut store, mut adam) = setup(&kg, &cfg);
            let r = pretrain(&m, &mut store, &mut adam, &kg, &cfg).unwrap();
            (store, r)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip() {
        let kg = graph();
        let cfg = KgeConfig { dim: 8, epochs: 2, batch: 4, ..KgeConfig::default() };
        let (m, mut store, mut adam) = setup(&kg, &cfg);
        pretrain(&m, &mut store, &mut adam, &kg, &cfg).unwrap();
        let ck = m.checkpoint(&store, Some(&adam), &cfg);
        let bytes = ck.to_bytes();
        let back = crate::autodiff::Checkpoint::from_bytes(&bytes).unwrap();
        let (m2, s2, c2) = KgeModel::from_checkpoint(&back).unwrap();
        assert_eq!((m2, s2, c2), (m, store, cfg));
    }
}
