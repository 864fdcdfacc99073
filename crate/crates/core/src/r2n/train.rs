use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{R2nError, R2nModel};
use crate::autodiff::{Adam, ParamStore, Tape};
use crate::ground::FactorGraph;
use crate::kg::{KnowledgeGraph, Triple};
use crate::kge::train::batch_with_negatives;
use crate::kge::{KgeError, NegativeSampler, TrainReport};

/// Fine-tune the reasoning layers (and, unless frozen, the KGE tables) with
/// binary cross-entropy on training positives and sampled corruptions.
pub fn finetune(
    model: &R2nModel,
    store: &mut ParamStore<f32>,
    adam: &mut Adam<f32>,
    graph: &FactorGraph,
    train: &KnowledgeGraph,
) -> Result<TrainReport, R2nError> {
    let config = model.config();
    config.validate()?;
    if train.is_empty() {
        return Err(KgeError::EmptyTrain.into());
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
                let z = model.forward_triples_logits(&mut tape, graph, &triples)?;
                let loss = tape.bce_logits(z, &targets)?;
                let l = tape.value(loss).data()[0] as f64;
                if !l.is_finite() {
                    return Err(R2nError::NonFinite {
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
        log::debug!("r2n epoch {epoch}: loss {mean:.6}");
        report.epoch_losses.push(mean);
    }
    report.accepted_known_negatives = sampler.accepted_known();
    if report.accepted_known_negatives > 0 {
        log::warn!("{} negatives were known triples after exhausting retries", report.accepted_known_negatives);
    }
    Ok(report)
}
