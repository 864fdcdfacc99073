//! Grounding of Horn rules into a bipartite factor graph.
//!
//! Atoms are candidate triples; every rule instantiation becomes a factor
//! whose atoms are listed body-first, head last. Atoms that appear in no
//! factor are kept: they still carry their own embedding through the
//! reasoning layers.

mod io;

pub use io::{read_binary, read_text, write_binary, write_text};

use std::collections::{HashMap, HashSet};
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, Triple};
use crate::rules::{for_each_body_binding, HornRule, RuleError, Var};

#[derive(Debug, Error)]
pub enum GroundError {
    #[error("atom {0} does not exist in the factor graph")]
    UnknownAtom(u32),
    #[error("factor {0} does not exist in the factor graph")]
    UnknownFactor(u32),
    #[error("unfiltered grounding over {entities} entities exceeds the bound of {bound}; enable the premise filter or raise the bound")]
    TooManyEntities { entities: usize, bound: usize },
    #[error("factor graph format error: {0}")]
    Format(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AtomId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactorId(pub u32);

impl AtomId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl FactorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AtomLabel {
    KnownTrue,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundAtom {
    pub id: AtomId,
    pub triple: Triple,
    pub label: AtomLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grounding {
    /// Index into the graph's rule table.
    pub rule: u32,
    pub atoms: Vec<AtomId>,
}

/// One incidence of an atom: the factor, its rule and the atom's position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomEdge {
    pub factor: FactorId,
    pub rule: u32,
    pub position: u8,
}

/// Union of training triples and query triples, deduplicated, training
/// first. Labels are known-true exactly for training triples.
pub fn atom_universe(train: &[Triple], queries: &[Triple]) -> Vec<GroundAtom> {
    let mut seen: HashSet<Triple> = HashSet::with_capacity(train.len() + queries.len());
    let mut out = Vec::with_capacity(train.len() + queries.len());
    let train_set: HashSet<&Triple> = train.iter().collect();
    for t in train.iter().chain(queries) {
        if seen.insert(*t) {
            let label = if train_set.contains(t) { AtomLabel::KnownTrue } else { AtomLabel::Unknown };
            out.push(GroundAtom { id: AtomId(out.len() as u32), triple: *t, label });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundConfig {
    /// Keep only groundings whose body atoms are all training triples.
    pub premise_filter: bool,
    /// Reject bindings that assign one constant to two variables.
    pub distinct_bindings: bool,
    /// Largest entity count accepted when the premise filter is off.
    pub max_unfiltered_entities: usize,
}

impl Default for GroundConfig {
    fn default() -> Self {
        GroundConfig { premise_filter: true, distinct_bindings: false, max_unfiltered_entities: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    rules: Vec<HornRule>,
    atoms: Vec<GroundAtom>,
    index: HashMap<Triple, AtomId>,
    factors: Vec<Grounding>,
    atom_edges: Vec<Vec<AtomEdge>>,
}

impl FactorGraph {
    /// A graph with atoms and rules but no factors yet.
    pub fn new(rules: Vec<HornRule>, atoms: Vec<GroundAtom>) -> Self {
        let index = atoms.iter().map(|a| (a.triple, a.id)).collect();
        let atom_edges = vec![Vec::new(); atoms.len()];
        FactorGraph { rules, atoms, index, factors: Vec::new(), atom_edges }
    }

    fn intern(&mut self, triple: Triple, label: AtomLabel) -> AtomId {
        if let Some(&id) = self.index.get(&triple) {
            return id;
        }
        let id = AtomId(self.atoms.len() as u32);
        self.atoms.push(GroundAtom { id, triple, label });
        self.atom_edges.push(Vec::new());
        self.index.insert(triple, id);
        id
    }

    /// Append a factor; atoms must already exist.
    pub fn push_factor(&mut self, rule: u32, atoms: Vec<AtomId>) -> Result<FactorId, GroundError> {
        let r = self.rules.get(rule as usize).ok_or_else(|| GroundError::Format(format!("rule index {rule} out of range")))?;
        if atoms.len() != r.arity() {
            return Err(GroundError::Format(format!("factor over {} atoms for a rule of arity {}", atoms.len(), r.arity())));
        }
        if let Some(a) = atoms.iter().find(|a| a.index() >= self.atoms.len()) {
            return Err(GroundError::UnknownAtom(a.0));
        }
        let fid = FactorId(self.factors.len() as u32);
        for (pos, a) in atoms.iter().enumerate() {
            self.atom_edges[a.index()].push(AtomEdge { factor: fid, rule, position: pos as u8 });
        }
        self.factors.push(Grounding { rule, atoms });
        Ok(fid)
    }

    pub fn rules(&self) -> &[HornRule] {
        &self.rules
    }

    pub fn atoms(&self) -> &[GroundAtom] {
        &self.atoms
    }

    pub fn factors(&self) -> &[Grounding] {
        &self.factors
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn atom_id(&self, triple: &Triple) -> Option<AtomId> {
        self.index.get(triple).copied()
    }

    pub fn atom(&self, id: AtomId) -> Result<&GroundAtom, GroundError> {
        self.atoms.get(id.index()).ok_or(GroundError::UnknownAtom(id.0))
    }

    /// Atoms of a factor in rule-position order.
    pub fn factor_atoms(&self, id: FactorId) -> Result<&[AtomId], GroundError> {
        self.factors.get(id.index()).map(|f| f.atoms.as_slice()).ok_or(GroundError::UnknownFactor(id.0))
    }

    /// Incidences of an atom in insertion order.
    pub fn atom_factors(&self, id: AtomId) -> Result<&[AtomEdge], GroundError> {
        self.atom_edges.get(id.index()).map(Vec::as_slice).ok_or(GroundError::UnknownAtom(id.0))
    }
}

/// Sorted, deduplicated binding lists for one rule.
fn rule_bindings(rule: &HornRule, train: &KnowledgeGraph, config: &GroundConfig) -> Vec<Vec<EntityId>> {
    let used = rule.used_vars();
    let distinct_ok = |b: &[EntityId]| {
        if !config.distinct_bindings {
            return true;
        }
        let mut vals: Vec<EntityId> = used.iter().map(|v| b[v.index()]).collect();
        vals.sort_unstable();
        vals.windows(2).all(|w| w[0] != w[1])
    };
    let mut out: Vec<Vec<EntityId>> = Vec::new();
    if config.premise_filter {
        let mut binding = vec![None; rule.num_vars()];
        let _ = for_each_body_binding(train, rule.body(), &mut binding, &mut |b| {
            // the unused y slot of reflexive rules stays at entity 0
            let full: Vec<EntityId> = b.iter().map(|e| e.unwrap_or(EntityId(0))).collect();
            if distinct_ok(&full) {
                out.push(full);
            }
            ControlFlow::Continue(())
        });
    } else {
        let n = train.num_entities();
        let mut cur = vec![EntityId(0); rule.num_vars()];
        fn rec(
            k: usize,
            used: &[Var],
            n: usize,
            cur: &mut Vec<EntityId>,
            out: &mut Vec<Vec<EntityId>>,
            ok: &dyn Fn(&[EntityId]) -> bool,
        ) {
            if k == used.len() {
                if ok(cur) {
                    out.push(cur.clone());
                }
                return;
            }
            for e in 0..n as u32 {
                cur[used[k].index()] = EntityId(e);
                rec(k + 1, used, n, cur, out, ok);
            }
        }
        rec(0, &used, n, &mut cur, &mut out, &distinct_ok);
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Instantiate `rules` against `train` on top of the given atom universe.
///
/// Rules are sorted and deduplicated first, so the output does not depend
/// on input order. With the premise filter on, bindings come from joins over
/// the training graph and only head atoms can be new; they enter as
/// unknown. With it off every assignment of the entity domain is
/// enumerated, which is only feasible for tiny graphs.
pub fn ground_rules(
    rules: &[HornRule],
    train: &KnowledgeGraph,
    universe: Vec<GroundAtom>,
    config: &GroundConfig,
) -> Result<FactorGraph, GroundError> {
    if !config.premise_filter && train.num_entities() > config.max_unfiltered_entities {
        return Err(GroundError::TooManyEntities { entities: train.num_entities(), bound: config.max_unfiltered_entities });
    }
    let mut rules: Vec<HornRule> = rules.to_vec();
    rules.sort();
    rules.dedup();
    let per_rule: Vec<Vec<Vec<EntityId>>> = rules.par_iter().map(|r| rule_bindings(r, train, config)).collect();
    let mut graph = FactorGraph::new(rules, universe);
    for (ri, bindings) in per_rule.into_iter().enumerate() {
        let rule = graph.rules[ri].clone();
        for b in bindings {
            let atoms: Vec<AtomId> = rule
                .atoms()
                .map(|a| {
                    let t = Triple::new(b[a.subject.index()], a.relation, b[a.object.index()]);
                    let label = if train.contains(&t) { AtomLabel::KnownTrue } else { AtomLabel::Unknown };
                    graph.intern(t, label)
                })
                .collect();
            graph.push_factor(ri as u32, atoms)?;
        }
    }
    log::info!("grounded {} rules into {} factors over {} atoms", graph.rules.len(), graph.factors.len(), graph.atoms.len());
    Ok(graph)
}
