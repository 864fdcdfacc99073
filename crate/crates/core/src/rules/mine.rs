//! Exhaustive mining of closed, connected, constant-free rules with at most
//! two body atoms.
//!
//! Statistics are exact. Every distinct body is enumerated once: for each
//! binding of `x` the distinct `y` values are collected, and every head
//! relation holding on `(x, y)` gains one unit of support. The PCA
//! denominator of head `R` adds the number of distinct `y` whenever `x` is a
//! subject of `R`. Head relations are then filtered by the thresholds.

use std::collections::BTreeSet;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matcher::for_each_body_binding;
use super::{HornRule, RuleAtom, RuleError, RuleStats, Var};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MineConfig {
    pub max_body_atoms: usize,
    pub min_support: u64,
    pub min_head_coverage: f64,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig { max_body_atoms: 2, min_support: 10, min_head_coverage: 0.01 }
    }
}

impl MineConfig {
    pub fn validate(&self) -> Result<(), RuleError> {
        if !(1..=2).contains(&self.max_body_atoms) {
            return Err(RuleError::InvalidConfig(format!("max_body_atoms must be 1 or 2, got {}", self.max_body_atoms)));
        }
        if !(self.min_head_coverage >= 0.0 && self.min_head_coverage <= 1.0) {
            return Err(RuleError::InvalidConfig(format!(
                "min_head_coverage must lie in [0,1], got {}",
                self.min_head_coverage
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedRule {
    pub rule: HornRule,
    pub stats: RuleStats,
}

/// Mined rules in canonical order: head relation, then body.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MinedRuleSet {
    rules: Vec<MinedRule>,
}

impl MinedRuleSet {
    /// Sorts into canonical order and drops equivalent duplicates (first kept).
    pub fn from_rules(mut rules: Vec<MinedRule>) -> Self {
        rules.sort_by(|a, b| {
            (a.rule.head_relation(), a.rule.body()).cmp(&(b.rule.head_relation(), b.rule.body()))
        });
        rules.dedup_by(|a, b| a.rule == b.rule);
        MinedRuleSet { rules }
    }

    pub fn rules(&self) -> &[MinedRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MinedRule> {
        self.rules.iter()
    }

    pub fn find(&self, text: &str, vocab: &Vocabulary) -> Option<&MinedRule> {
        self.rules.iter().find(|r| r.rule.display(vocab) == text)
    }
}

fn candidate_bodies(n_rel: usize, max_body_atoms: usize) -> Vec<Vec<RuleAtom>> {
    let z = Var(2);
    let rels = (0..n_rel as u32).map(RelationId);
    let xy: Vec<RuleAtom> = rels
        .clone()
        .flat_map(|r| [RuleAtom::new(r, Var::X, Var::Y), RuleAtom::new(r, Var::Y, Var::X)])
        .collect();
    let mut out: BTreeSet<Vec<RuleAtom>> = xy.iter().map(|a| vec![*a]).collect();
    if max_body_atoms >= 2 {
        for i in 0..xy.len() {
            for j in i + 1..xy.len() {
                out.insert(super::canonical_body(&[xy[i], xy[j]]));
            }
        }
        for b1 in rels.clone() {
            for b2 in rels.clone() {
                for x_atom in [RuleAtom::new(b1, Var::X, z), RuleAtom::new(b1, z, Var::X)] {
                    for y_atom in [RuleAtom::new(b2, z, Var::Y), RuleAtom::new(b2, Var::Y, z)] {
                        out.insert(super::canonical_body(&[x_atom, y_atom]));
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

struct BodyCounts {
    support: Vec<u64>,
    pca: Vec<u64>,
    pairs: u64,
}

fn count_body(kg: &KnowledgeGraph, body: &[RuleAtom], subject_rels: &[Vec<RelationId>]) -> BodyCounts {
    let n_rel = kg.num_relations();
    let mut counts = BodyCounts { support: vec![0; n_rel], pca: vec![0; n_rel], pairs: 0 };
    // candidate x values from the smallest atom mentioning x
    let mut xs: Option<Vec<EntityId>> = None;
    for a in body {
        let keys: Option<Vec<EntityId>> = if a.subject == Var::X {
            Some(kg.out_index(a.relation).keys().copied().collect())
        } else if a.object == Var::X {
            Some(kg.in_index(a.relation).keys().copied().collect())
        } else {
            None
        };
        if let Some(k) = keys {
            if xs.as_ref().is_none_or(|cur| k.len() < cur.len()) {
                xs = Some(k);
            }
        }
    }
    let Some(mut xs) = xs else { return counts };
    xs.sort_unstable();
    let n_vars = body.iter().flat_map(|a| [a.subject.index(), a.object.index()]).max().unwrap_or(1) + 1;
    let mut binding = vec![None; n_vars];
    let mut stamp = vec![u32::MAX; kg.num_entities()];
    let mut ys: Vec<EntityId> = Vec::new();
    for (k, &x) in xs.iter().enumerate() {
        ys.clear();
        binding[0] = Some(x);
        let _ = for_each_body_binding(kg, body, &mut binding, &mut |b| {
            let y = b[1].unwrap();
            if stamp[y.index()] != k as u32 {
                stamp[y.index()] = k as u32;
                ys.push(y);
            }
            ControlFlow::Continue(())
        });
        binding[0] = None;
        if ys.is_empty() {
            continue;
        }
        for &y in &ys {
            for r in kg.relations_between(x, y) {
                counts.support[r.index()] += 1;
            }
        }
        let n = ys.len() as u64;
        counts.pairs += n;
        for r in &subject_rels[x.index()] {
            counts.pca[r.index()] += n;
        }
    }
    counts
}

/// Mine every rule of the restricted language meeting both thresholds.
/// A minimum support below one is treated as one.
pub fn mine(kg: &KnowledgeGraph, config: &MineConfig) -> Result<MinedRuleSet, RuleError> {
    config.validate()?;
    let n_rel = kg.num_relations();
    let mut subject_rels: Vec<Vec<RelationId>> = vec![Vec::new(); kg.num_entities()];
    for r in (0..n_rel as u32).map(RelationId) {
        let mut subjects: Vec<EntityId> = kg.subjects(r).collect();
        subjects.sort_unstable();
        for s in subjects {
            subject_rels[s.index()].push(r);
        }
    }
    let min_support = config.min_support.max(1);
    let bodies = candidate_bodies(n_rel, config.max_body_atoms);
    let per_body: Vec<Vec<MinedRule>> = bodies
        .par_iter()
        .map(|body| {
            let counts = count_body(kg, body, &subject_rels);
            let mut found = Vec::new();
            if counts.pairs == 0 {
                return found;
            }
            for r in (0..n_rel as u32).map(RelationId) {
                let supp = counts.support[r.index()];
                let heads = kg.relation_count(r);
                if supp < min_support || heads == 0 {
                    continue;
                }
                let hc = supp as f64 / heads as f64;
                if hc < config.min_head_coverage {
                    continue;
                }
                let Ok(rule) = HornRule::new(body.clone(), r) else { continue };
                found.push(MinedRule {
                    rule,
                    stats: RuleStats {
                        support: supp,
                        head_coverage: hc,
                        std_confidence: supp as f64 / counts.pairs as f64,
                        pca_confidence: supp as f64 / counts.pca[r.index()] as f64,
                    },
                });
            }
            found
        })
        .collect();
    Ok(MinedRuleSet::from_rules(per_body.into_iter().flatten().collect()))
}
