//! Link-prediction ranking: MRR and Hits@k under raw and filtered protocols,
//! plus the rule-count ablation grid.

mod ablation;

pub use ablation::{run_ablation, write_metrics_csv, AblationCell, METRICS_CSV_HEADER};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParamStore;
use crate::ground::FactorGraph;
use crate::kg::{EntityId, Triple, Vocabulary};
use crate::kge::KgeModel;
use crate::r2n::{R2nError, R2nModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no test triples to evaluate")]
    EmptyTest,
    #[error("non-finite score for {0}")]
    NonFinite(String),
    #[error("unknown {what} `{value}`")]
    Parse { what: &'static str, value: String },
    #[error(transparent)]
    R2n(#[from] R2nError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Head,
    Tail,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Raw,
    Filtered,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Head => "head",
            Side::Tail => "tail",
            Side::Both => "both",
        })
    }
}

impl FromStr for Side {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "head" => Ok(Side::Head),
            "tail" => Ok(Side::Tail),
            "both" => Ok(Side::Both),
            _ => Err(EvalError::Parse { what: "corruption side", value: s.into() }),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Raw => "raw",
            Mode::Filtered => "filtered",
        })
    }
}

impl FromStr for Mode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Mode::Raw),
            "filtered" => Ok(Mode::Filtered),
            _ => Err(EvalError::Parse { what: "ranking mode", value: s.into() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub mode: Mode,
    pub side: Side,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol { mode: Mode::Filtered, side: Side::Both }
    }
}

/// Anything that scores a candidate triple; higher means more plausible.
pub trait TripleScorer: Sync {
    fn score(&self, t: &Triple) -> f32;
}

impl<F: Fn(&Triple) -> f32 + Sync> TripleScorer for F {
    fn score(&self, t: &Triple) -> f32 {
        self(t)
    }
}

/// KGE scores, ranked on the unsaturated pre-sigmoid value.
pub struct KgeScorer<'a> {
    pub model: &'a KgeModel,
    pub store: &'a ParamStore<f32>,
}

impl TripleScorer for KgeScorer<'_> {
    fn score(&self, t: &Triple) -> f32 {
        // ids come from the evaluated vocabulary, so they are in range
        self.model.ranking_score_direct(self.store, t).unwrap_or(f32::NAN)
    }
}

/// R2N logits: cached for atoms of the factor graph, output head on the
/// KGE representation for everything else. Ranking on logits avoids ties
/// between predictions that round to 1 in single precision.
pub struct R2nScorer<'a> {
    model: &'a R2nModel,
    store: &'a ParamStore<f32>,
    graph: &'a FactorGraph,
    cached: Vec<f32>,
}

impl<'a> R2nScorer<'a> {
    pub fn new(model: &'a R2nModel, store: &'a ParamStore<f32>, graph: &'a FactorGraph) -> Result<Self, EvalError> {
        let cached = model.predict_all_logits(store, graph, 4096)?;
        Ok(R2nScorer { model, store, graph, cached })
    }
}

impl TripleScorer for R2nScorer<'_> {
    fn score(&self, t: &Triple) -> f32 {
        match self.graph.atom_id(t) {
            Some(a) => self.cached[a.index()],
            None => self.model.isolated_logit(self.store, t).unwrap_or(f32::NAN),
        }
    }
}

/// Mean rank of the tied block: `1 + #greater + #ties / 2`.
pub fn rank_of(target: f32, competitors: impl IntoIterator<Item = f32>) -> f64 {
    let (mut greater, mut ties) = (0usize, 0usize);
    for s in competitors {
        if s > target {
            greater += 1;
        } else if s == target {
            ties += 1;
        }
    }
    1.0 + greater as f64 + ties as f64 / 2.0
}

fn corrupt(t: &Triple, head: bool, e: u32) -> Triple {
    if head {
        Triple::new(EntityId(e), t.relation, t.tail)
    } else {
        Triple::new(t.head, t.relation, EntityId(e))
    }
}

/// Raw and filtered rank of `t` when one slot is replaced by every entity.
fn ranks_one_side(scorer: &dyn TripleScorer, t: &Triple, head: bool, n_entities: usize, known: &HashSet<Triple>) -> Result<(f64, f64), EvalError> {
    let target = scorer.score(t);
    if !target.is_finite() {
        return Err(EvalError::NonFinite(format!("{t:?}")));
    }
    let own = if head { t.head.0 } else { t.tail.0 };
    let (mut greater, mut ties, mut greater_f, mut ties_f) = (0usize, 0usize, 0usize, 0usize);
    for e in 0..n_entities as u32 {
        if e == own {
            continue;
        }
        let c = corrupt(t, head, e);
        let s = scorer.score(&c);
        if !s.is_finite() {
            return Err(EvalError::NonFinite(format!("{c:?}")));
        }
        let filtered_out = known.contains(&c);
        if s > target {
            greater += 1;
            greater_f += !filtered_out as usize;
        } else if s == target {
            ties += 1;
            ties_f += !filtered_out as usize;
        }
    }
    let rank = |g: usize, t: usize| 1.0 + g as f64 + t as f64 / 2.0;
    Ok((rank(greater, ties), rank(greater_f, ties_f)))
}

/// Rank of `t` for one side under one mode. `known` is ignored in raw mode.
pub fn rank_query(
    scorer: &dyn TripleScorer,
    t: &Triple,
    head: bool,
    mode: Mode,
    n_entities: usize,
    known: &HashSet<Triple>,
) -> Result<f64, EvalError> {
    let (raw, filtered) = ranks_one_side(scorer, t, head, n_entities, known)?;
    Ok(match mode {
        Mode::Raw => raw,
        Mode::Filtered => filtered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    /// Test triples behind these numbers (each contributes one rank per side).
    pub n_queries: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[f64], n_queries: usize) -> Metrics {
        let n = ranks.len().max(1) as f64;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Metrics {
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            hits1: hits(1.0),
            hits3: hits(3.0),
            hits10: hits(10.0),
            n_queries,
        }
    }

    /// `0 <= H@1 <= H@3 <= H@10 <= 1` and `H@1 <= MRR <= 1`.
    pub fn is_consistent(&self) -> bool {
        0.0 <= self.hits1
            && self.hits1 <= self.hits3
            && self.hits3 <= self.hits10
            && self.hits10 <= 1.0
            && self.hits1 <= self.mrr
            && self.mrr <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMetrics {
    pub raw: Metrics,
    pub filtered: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub raw: Metrics,
    pub filtered: Metrics,
    pub per_relation: BTreeMap<String, RelationMetrics>,
}

impl EvalReport {
    /// Metrics under the protocol's mode.
    pub fn primary(&self) -> &Metrics {
        match self.protocol.mode {
            Mode::Raw => &self.raw,
            Mode::Filtered => &self.filtered,
        }
    }
}

/// Per-query raw and filtered ranks, one entry per (query, side) in query
/// order with the head side first.
pub fn query_ranks(
    scorer: &dyn TripleScorer,
    test: &[Triple],
    side: Side,
    n_entities: usize,
    known: &HashSet<Triple>,
) -> Result<Vec<(f64, f64)>, EvalError> {
    let sides: &[bool] = match side {
        Side::Head => &[true],
        Side::Tail => &[false],
        Side::Both => &[true, false],
    };
    let per_query: Vec<Vec<(f64, f64)>> = test
        .par_iter()
        .map(|t| sides.iter().map(|&h| ranks_one_side(scorer, t, h, n_entities, known)).collect())
        .collect::<Result<_, _>>()?;
    Ok(per_query.into_iter().flatten().collect())
}

/// Rank every test triple against all entities. `known` is the filter set
/// (train, valid and test triples).
pub fn evaluate(
    scorer: &dyn TripleScorer,
    test: &[Triple],
    protocol: Protocol,
    vocab: &Vocabulary,
    known: &HashSet<Triple>,
) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let ranks = query_ranks(scorer, test, protocol.side, vocab.num_entities(), known)?;
    let per_side = ranks.len() / test.len();
    let split = |rs: &[(f64, f64)], n: usize| {
        let raw: Vec<f64> = rs.iter().map(|r| r.0).collect();
        let filtered: Vec<f64> = rs.iter().map(|r| r.1).collect();
        RelationMetrics { raw: Metrics::from_ranks(&raw, n), filtered: Metrics::from_ranks(&filtered, n) }
    };
    let mut by_rel: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (t, rs) in test.iter().zip(ranks.chunks(per_side)) {
        by_rel.entry(vocab.relation_name(t.relation).to_string()).or_default().extend_from_slice(rs);
    }
    let per_relation = by_rel.into_iter().map(|(name, rs)| {
        let n = rs.len() / per_side;
        (name, split(&rs, n))
    });
    let all = split(&ranks, test.len());
    let report = EvalReport { protocol, raw: all.raw, filtered: all.filtered, per_relation: per_relation.collect() };
    debug_assert!(report.raw.is_consistent() && report.filtered.is_consistent());
    Ok(report)
}
