use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PipelineError;
use crate::autodiff::{Adam, AdamConfig, ParamStore};
use crate::eval::{evaluate, EvalReport, KgeScorer, Protocol, R2nScorer};
use crate::ground::{atom_universe, ground_rules, FactorGraph, GroundConfig};
use crate::kg::{KnowledgeGraph, Triple};
use crate::kge::{pretrain, KgeConfig, KgeModel, KgeSpec, TrainReport};
use crate::r2n::{finetune, R2nConfig, R2nModel};
use crate::rules::HornRule;

/// A pretrained KGE model with its parameters and optimizer state.
pub struct Pretrained {
    pub model: KgeModel,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub report: TrainReport,
}

pub fn pretrain_kge(train: &KnowledgeGraph, config: &KgeConfig) -> Result<Pretrained, PipelineError> {
    let spec = KgeSpec { scorer: config.scorer, dim: config.dim, n_entities: train.num_entities(), n_relations: train.num_relations() };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = KgeModel::new(spec, &mut store, &mut rng)?;
    let mut adam = Adam::new(config.adam());
    let report = pretrain(&model, &mut store, &mut adam, train, config)?;
    Ok(Pretrained { model, store, adam, report })
}

pub fn ground_training_graph(rules: &[HornRule], train: &KnowledgeGraph, config: &GroundConfig) -> Result<FactorGraph, PipelineError> {
    Ok(ground_rules(rules, train, atom_universe(train.triples(), &[]), config)?)
}

pub struct FineTuned {
    pub model: R2nModel,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub report: TrainReport,
}

/// Add reasoning layers on top of a pretrained KGE and fine-tune them.
pub fn finetune_r2n(
    kge: &KgeModel,
    mut store: ParamStore<f32>,
    graph: &FactorGraph,
    train: &KnowledgeGraph,
    config: &R2nConfig,
) -> Result<FineTuned, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = R2nModel::new(kge.clone(), graph.rules(), train.vocab(), *config, &mut store, &mut rng)?;
    let mut adam = Adam::new(AdamConfig { lr: config.lr, sparse: config.sparse_adam, ..AdamConfig::default() });
    let report = finetune(&model, &mut store, &mut adam, graph, train)?;
    Ok(FineTuned { model, store, adam, report })
}

pub struct Comparison {
    pub kge: EvalReport,
    pub r2n: EvalReport,
}

/// Train a KGE baseline, then R2N on top of it, and evaluate both on
/// `test`. `known` is the filter set for filtered ranking.
#[allow(clippy::too_many_arguments)]
pub fn kge_vs_r2n(
    train: &KnowledgeGraph,
    test: &[Triple],
    known: &HashSet<Triple>,
    rules: &[HornRule],
    kge_config: &KgeConfig,
    r2n_config: &R2nConfig,
    ground_config: &GroundConfig,
    protocol: Protocol,
) -> Result<Comparison, PipelineError> {
    let pre = pretrain_kge(train, kge_config)?;
    let kge = evaluate(&KgeScorer { model: &pre.model, store: &pre.store }, test, protocol, train.vocab(), known)?;
    let graph = ground_training_graph(rules, train, ground_config)?;
    let ft = finetune_r2n(&pre.model, pre.store, &graph, train, r2n_config)?;
    let scorer = R2nScorer::new(&ft.model, &ft.store, &graph)?;
    let r2n = evaluate(&scorer, test, protocol, train.vocab(), known)?;
    Ok(Comparison { kge, r2n })
}
